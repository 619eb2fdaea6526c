#pragma once

// Key-value run configuration and backend factories.
//
//   # comment
//   backend_url = http://localhost:8000/v1/chat/completions
//   policy_url  = scripted:fixtures/policy.json
//   embed_url   = mock:64
//
// Backend URL schemes: http(s)://... (OpenAI-compatible server),
// scripted:<path> (ScriptedBackend rules file). Embedder schemes:
// http(s)://... and mock[:dim[:seed]]. Role URLs (base_url, policy_url,
// estimator_url, rag_url) fall back to backend_url. FAITH_API_KEY and
// FAITH_BACKEND_URL override api_key and backend_url.

#include "faith/embedding.hpp"
#include "faith/error.hpp"
#include "faith/gateway.hpp"
#include "faith/http.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>

namespace faith {

class Config {
  public:
    Config() = default;

    static Config parse(std::istream& in) {
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            const auto trimmed = trim_copy(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos) throw InputFormatError(line_no, "expected 'key = value'");
            const auto key = trim_copy(std::string_view(trimmed).substr(0, eq));
            if (key.empty()) throw InputFormatError(line_no, "empty key");
            cfg.values_[key] = trim_copy(std::string_view(trimmed).substr(eq + 1));
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw PreconditionError("cannot open config '" + path + "'");
        return parse(in);
    }

    /// Apply FAITH_API_KEY / FAITH_BACKEND_URL from the environment.
    Config& apply_env() {
        if (const char* key = std::getenv("FAITH_API_KEY"); key && *key) values_["api_key"] = key;
        if (const char* url = std::getenv("FAITH_BACKEND_URL"); url && *url) values_["backend_url"] = url;
        return *this;
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    [[nodiscard]] std::optional<std::string> get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end() || it->second.empty()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::string get_or(const std::string& key, std::string fallback) const {
        return get(key).value_or(std::move(fallback));
    }

    [[nodiscard]] long long get_int(const std::string& key, long long fallback) const {
        const auto v = get(key);
        if (!v) return fallback;
        try {
            std::size_t used = 0;
            const auto n = std::stoll(*v, &used);
            if (used != v->size()) throw std::invalid_argument(*v);
            return n;
        } catch (const std::exception&) {
            throw PreconditionError("config key '" + key + "' is not an integer: '" + *v + "'");
        }
    }

    /// URL for a model role, falling back to backend_url.
    [[nodiscard]] std::optional<std::string> role_url(const std::string& role) const {
        if (auto v = get(role + "_url")) return v;
        return get("backend_url");
    }

    [[nodiscard]] RetryPolicy retry_policy() const {
        RetryPolicy p;
        p.max_retries = static_cast<int>(get_int("max_retries", p.max_retries));
        p.base_delay = std::chrono::milliseconds(get_int("retry_base_ms", p.base_delay.count()));
        return p;
    }

    [[nodiscard]] HttpConfig http_config(const std::string& url, const std::string& role) const {
        HttpConfig h;
        h.url = url;
        h.api_key = get_or("api_key", "");
        h.model = get(role + "_model").value_or(get_or("model", ""));
        h.timeout = std::chrono::milliseconds(get_int("timeout_ms", 60000));
        h.max_in_flight = static_cast<std::ptrdiff_t>(get_int("concurrency", 8));
        return h;
    }

    [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

inline std::unique_ptr<Backend> make_backend(const std::string& url, const Config& cfg, const std::string& role) {
    constexpr std::string_view scripted = "scripted:";
    if (url.starts_with(scripted)) return ScriptedBackend::from_file(url.substr(scripted.size()));
    if (url.starts_with("http://") || url.starts_with("https://"))
        return std::make_unique<HttpBackend>(cfg.http_config(url, role));
    throw PreconditionError("unsupported backend URL '" + url + "'");
}

/// Backend for a role, or nullptr when no URL is configured for it.
inline std::unique_ptr<Backend> make_role_backend(const Config& cfg, const std::string& role) {
    const auto url = cfg.role_url(role);
    return url ? make_backend(*url, cfg, role) : nullptr;
}

inline std::unique_ptr<Embedder> make_embedder(const Config& cfg) {
    const auto url = cfg.get_or("embed_url", "mock");
    if (url == "mock" || url.starts_with("mock:")) {
        std::size_t dim = static_cast<std::size_t>(cfg.get_int("embed_dim", 64));
        std::uint64_t seed = 0;
        if (url.size() > 5) {
            const auto rest = url.substr(5);
            const auto colon = rest.find(':');
            dim = std::stoul(rest.substr(0, colon));
            if (colon != std::string::npos) seed = std::stoull(rest.substr(colon + 1));
        }
        return std::make_unique<MockEmbedder>(dim, seed);
    }
    if (url.starts_with("http://") || url.starts_with("https://")) {
        const auto dim = cfg.get_int("embed_dim", 0);
        if (dim <= 0) throw PreconditionError("embed_dim must be set for an HTTP embedder");
        return std::make_unique<HttpEmbedder>(cfg.http_config(url, "embed"), static_cast<std::size_t>(dim),
                                              cfg.retry_policy());
    }
    throw PreconditionError("unsupported embedder URL '" + url + "'");
}

/// One phrase per line; blank lines and '#' comments skipped.
inline std::vector<std::string> load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open refusal lexicon '" + path + "'");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim_copy(line);
        if (!t.empty() && t.front() != '#') out.push_back(t);
    }
    if (out.empty()) throw PreconditionError("refusal lexicon '" + path + "' is empty");
    return out;
}

}  // namespace faith
