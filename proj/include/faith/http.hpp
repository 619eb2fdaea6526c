#pragma once

// HTTP clients for chat/completions-style generation servers and
// embedding servers. Kept apart from gateway.hpp so the pure pipeline
// headers do not pull in cpp-httplib.

#include "faith/embedding.hpp"
#include "faith/error.hpp"
#include "faith/gateway.hpp"

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace faith {

struct HttpConfig {
    std::string url;  // scheme://host[:port]/path
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{60000};
    std::ptrdiff_t max_in_flight = 8;
};

/// Splits a URL into "scheme://host:port" and path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw PreconditionError("endpoint URL lacks a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpEndpoint {
  public:
    explicit HttpEndpoint(HttpConfig cfg) : cfg_(std::move(cfg)) {
        std::tie(origin_, path_) = split_url(cfg_.url);
    }

    /// One POST attempt. Maps failures onto the gateway error types.
    nlohmann::json post(const nlohmann::json& body, std::uint64_t correlation_id) const {
        httplib::Client client(origin_);
        const auto secs = cfg_.timeout.count() / 1000;
        const auto usecs = (cfg_.timeout.count() % 1000) * 1000;
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);
        httplib::Headers headers{{"X-Request-Id", std::to_string(correlation_id)}};
        if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

        const auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if (!res) {
            const auto err = res.error();
            const auto elapsed = std::chrono::steady_clock::now() - started;
            if (err == httplib::Error::ConnectionTimeout ||
                (err == httplib::Error::Read && elapsed >= cfg_.timeout * 9 / 10))
                throw TimeoutError("request to " + cfg_.url + " timed out");
            throw TransportError("request to " + cfg_.url + " failed: " + httplib::to_string(err));
        }
        if (res->status != 200) throw EndpointError(res->status, res->body.substr(0, 512));
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
        }
    }

    [[nodiscard]] const HttpConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] bool chat_style() const { return path_.find("chat") != std::string::npos; }

  private:
    HttpConfig cfg_;
    std::string origin_;
    std::string path_;
};

/// Generation over an OpenAI-compatible endpoint. A path containing "chat"
/// selects the chat schema, anything else the legacy completions schema.
class HttpBackend : public Backend {
  public:
    explicit HttpBackend(HttpConfig cfg) : Backend(cfg.max_in_flight), endpoint_(std::move(cfg)) {}

    [[nodiscard]] nlohmann::json request_body(const GenerationRequest& req) const {
        nlohmann::json body;
        if (!endpoint_.config().model.empty()) body["model"] = endpoint_.config().model;
        if (endpoint_.chat_style()) {
            body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.prompt}}});
            if (req.want_logprobs) body["logprobs"] = true;
        } else {
            body["prompt"] = req.prompt;
            if (req.want_logprobs) body["logprobs"] = 1;
        }
        body["temperature"] = req.temperature;
        body["max_tokens"] = req.max_new_tokens;
        if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;
        if (req.seed) body["seed"] = *req.seed;
        return body;
    }

    static GenerationResult parse_response(const nlohmann::json& doc) {
        try {
            const auto& choice = doc.at("choices").at(0);
            GenerationResult r;
            if (choice.contains("message"))
                r.text = choice.at("message").at("content").get<std::string>();
            else
                r.text = choice.at("text").get<std::string>();
            if (choice.contains("logprobs") && !choice.at("logprobs").is_null()) {
                const auto& lp = choice.at("logprobs");
                std::vector<double> tokens;
                if (lp.contains("content") && lp.at("content").is_array()) {
                    for (const auto& t : lp.at("content")) tokens.push_back(t.at("logprob").get<double>());
                } else if (lp.contains("token_logprobs")) {
                    for (const auto& t : lp.at("token_logprobs"))
                        if (!t.is_null()) tokens.push_back(t.get<double>());
                }
                // Servers occasionally report tiny positive values from float rounding.
                for (double& t : tokens) {
                    if (t > 1e-6) throw MalformedResponseError("token log-probability is positive");
                    t = std::min(t, 0.0);
                }
                r.token_logprobs = std::move(tokens);
                r.logprobs_supported = true;
            }
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponseError(std::string("unexpected completion schema: ") + e.what());
        }
    }

    GenerationResult complete(const GenerationRequest& req, std::uint64_t correlation_id) override {
        return parse_response(endpoint_.post(request_body(req), correlation_id));
    }

    [[nodiscard]] std::string identity() const override { return "http:" + endpoint_.config().url; }

  private:
    HttpEndpoint endpoint_;
};

/// Embedding endpoint: {"input": [...]} in, {"data": [{"embedding": [...], "index": i}]} out.
class HttpEmbedder : public Embedder {
  public:
    HttpEmbedder(HttpConfig cfg, std::size_t dim, RetryPolicy retry = {})
        : endpoint_(std::move(cfg)), dim_(dim), retry_(retry) {}

    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
        nlohmann::json body;
        if (!endpoint_.config().model.empty()) body["model"] = endpoint_.config().model;
        body["input"] = std::vector<std::string>(texts.begin(), texts.end());
        const auto id = ++correlation_;
        const auto doc = with_retries(retry_, [&] { return endpoint_.post(body, id); });
        try {
            std::vector<EmbeddingVector> out(texts.size());
            const auto& data = doc.at("data");
            if (data.size() != texts.size()) throw MalformedResponseError("embedding count mismatch");
            for (std::size_t i = 0; i < data.size(); ++i) {
                const auto idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
                if (idx >= out.size()) throw MalformedResponseError("embedding index out of range");
                out[idx] = data[i].at("embedding").get<EmbeddingVector>();
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw MalformedResponseError(std::string("unexpected embedding schema: ") + e.what());
        }
    }

    [[nodiscard]] std::size_t dim() const override { return dim_; }
    [[nodiscard]] std::string identity() const override { return "http:" + endpoint_.config().url; }

  private:
    HttpEndpoint endpoint_;
    std::size_t dim_;
    RetryPolicy retry_;
    std::atomic<std::uint64_t> correlation_{0};
};

}  // namespace faith
