#pragma once

// Uniform generation interface. A Backend performs one attempt; generate()
// layers validation, bounded concurrency and retry with exponential backoff
// on top. ScriptedBackend is a hermetic table-driven backend for tests and
// offline pipelines.

#include "faith/error.hpp"
#include "faith/prompts.hpp"
#include "faith/random.hpp"
#include "faith/uncertainty.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace faith {

inline constexpr double kSamplingTemperature = 0.2;
inline constexpr double kInferenceTemperature = 0.0;

struct GenerationRequest {
    std::string prompt;
    double temperature = kSamplingTemperature;
    int max_new_tokens = 64;
    bool want_logprobs = false;
    std::vector<std::string> stop_sequences;
    std::optional<std::uint64_t> seed;
    int ordinal = 0;  // sample index within a K-sample set
};

struct GenerationResult {
    std::string text;
    std::optional<std::vector<double>> token_logprobs;
    std::optional<double> seq_logprob;
    bool logprobs_supported = false;
    int retries = 0;
    std::uint64_t correlation_id = 0;
};

/// Fill seq_logprob from token_logprobs; the two are present together or not at all.
inline void finalize_logprobs(GenerationResult& r) {
    if (!r.token_logprobs) {
        r.seq_logprob.reset();
        return;
    }
    double sum = 0.0;
    for (double lp : *r.token_logprobs) sum += lp;
    r.seq_logprob = sum;
}

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{250};
    std::chrono::milliseconds max_delay{8000};
    double multiplier = 2.0;

    [[nodiscard]] std::chrono::milliseconds delay(int retry) const {
        double d = static_cast<double>(base_delay.count());
        for (int i = 0; i < retry; ++i) d *= multiplier;
        return std::chrono::milliseconds(static_cast<long long>(std::min(d, static_cast<double>(max_delay.count()))));
    }
};

class Backend {
  public:
    explicit Backend(std::ptrdiff_t max_in_flight = 8)
        : slots_(std::make_unique<std::counting_semaphore<>>(std::max<std::ptrdiff_t>(1, max_in_flight))) {}
    virtual ~Backend() = default;
    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    /// One attempt, no retries. Throws the gateway error types.
    virtual GenerationResult complete(const GenerationRequest& req, std::uint64_t correlation_id) = 0;
    [[nodiscard]] virtual std::string identity() const = 0;

    /// Caps concurrent complete() calls issued through generate().
    class Slot {
      public:
        explicit Slot(std::counting_semaphore<>& s) : s_(s) { s_.acquire(); }
        ~Slot() { s_.release(); }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

      private:
        std::counting_semaphore<>& s_;
    };
    Slot acquire_slot() { return Slot(*slots_); }

    std::uint64_t next_correlation_id() { return ++correlation_; }

  private:
    std::unique_ptr<std::counting_semaphore<>> slots_;
    std::atomic<std::uint64_t> correlation_{0};
};

namespace detail {

inline bool retryable(const std::exception_ptr& e) {
    try {
        std::rethrow_exception(e);
    } catch (const TransportError&) {
        return true;
    } catch (const TimeoutError&) {
        return true;
    } catch (const EndpointError& err) {
        return err.retryable();
    } catch (...) {
        return false;
    }
}

}  // namespace detail

/// Run `attempt` until it succeeds, a non-retryable error is thrown, or the
/// retry cap is hit. `retries_out` receives the number of retries performed.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& attempt, int* retries_out = nullptr) {
    for (int retry = 0;; ++retry) {
        try {
            auto result = attempt();
            if (retries_out) *retries_out = retry;
            return result;
        } catch (const Error&) {
            auto err = std::current_exception();
            if (retry >= policy.max_retries || !detail::retryable(err)) throw;
            std::this_thread::sleep_for(policy.delay(retry));
        }
    }
}

inline GenerationResult generate(Backend& backend, const GenerationRequest& req, const RetryPolicy& policy = {}) {
    if (req.prompt.empty()) throw PreconditionError("generation prompt is empty");
    if (req.max_new_tokens <= 0) throw PreconditionError("max_new_tokens must be positive");
    const auto id = backend.next_correlation_id();
    int retries = 0;
    auto result = with_retries(
        policy,
        [&] {
            auto slot = backend.acquire_slot();
            return backend.complete(req, id);
        },
        &retries);
    result.retries = retries;
    result.correlation_id = id;
    if (!req.want_logprobs) {
        result.token_logprobs.reset();
    } else if (result.token_logprobs) {
        for (double lp : *result.token_logprobs)
            if (!(lp <= 0.0)) throw MalformedResponseError("token log-probability is positive");
    }
    finalize_logprobs(result);
    return result;
}

inline std::string prompt_fingerprint(std::string_view prompt) { return hex64(fnv1a64(prompt)); }

/// Content of the last "### Question ###: " line of a prompt, or empty.
inline std::string final_question(std::string_view prompt) {
    constexpr std::string_view marker = "### Question ###: ";
    const auto pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return {};
    const auto start = pos + marker.size();
    const auto end = prompt.find('\n', start);
    return std::string(prompt.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
}

/// Table-driven backend keyed on (prompt fingerprint | final question, ordinal).
/// Lookup order: fingerprint+ordinal, fingerprint, question+ordinal, question,
/// default. An entry may carry an error status, which is raised as an
/// EndpointError every time the entry is hit.
class ScriptedBackend : public Backend {
  public:
    struct Entry {
        std::string text;
        std::optional<std::vector<double>> token_logprobs;
        int error_status = 0;
    };

    explicit ScriptedBackend(std::string name = "scripted") : name_(std::move(name)) {}

    ScriptedBackend& on_prompt(std::string_view prompt, Entry e, int ordinal = -1) {
        by_fingerprint_[{prompt_fingerprint(prompt), ordinal}] = std::move(e);
        return *this;
    }
    ScriptedBackend& on_fingerprint(std::string fp, Entry e, int ordinal = -1) {
        by_fingerprint_[{std::move(fp), ordinal}] = std::move(e);
        return *this;
    }
    ScriptedBackend& on_question(std::string question, Entry e, int ordinal = -1) {
        by_question_[{std::move(question), ordinal}] = std::move(e);
        return *this;
    }
    ScriptedBackend& otherwise(Entry e) {
        fallback_ = std::move(e);
        return *this;
    }

    /// Load a script file: {"rules": [{"fingerprint"|"question"|"default": ..,
    /// "ordinal": k?, "text": .., "logprobs": [..]?, "error": status?}]}
    static std::unique_ptr<ScriptedBackend> from_json(const nlohmann::json& doc, std::string name = "scripted") {
        auto backend = std::make_unique<ScriptedBackend>(std::move(name));
        for (const auto& rule : doc.at("rules")) {
            Entry e;
            e.text = rule.value("text", "");
            if (rule.contains("logprobs")) e.token_logprobs = rule.at("logprobs").get<std::vector<double>>();
            e.error_status = rule.value("error", 0);
            const int ordinal = rule.value("ordinal", -1);
            if (rule.contains("fingerprint"))
                backend->on_fingerprint(rule.at("fingerprint").get<std::string>(), std::move(e), ordinal);
            else if (rule.contains("question"))
                backend->on_question(rule.at("question").get<std::string>(), std::move(e), ordinal);
            else if (rule.value("default", false))
                backend->otherwise(std::move(e));
            else
                throw PreconditionError("script rule needs fingerprint, question or default");
        }
        return backend;
    }

    static std::unique_ptr<ScriptedBackend> from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw PreconditionError("cannot open script file '" + path + "'");
        return from_json(nlohmann::json::parse(in), "scripted:" + path);
    }

    GenerationResult complete(const GenerationRequest& req, std::uint64_t) override {
        const Entry* e = lookup(req);
        if (!e) throw EndpointError(404, "no scripted response for prompt " + prompt_fingerprint(req.prompt));
        if (e->error_status != 0) throw EndpointError(e->error_status, "scripted failure");
        GenerationResult r;
        r.text = e->text;
        r.logprobs_supported = e->token_logprobs.has_value();
        if (req.want_logprobs) r.token_logprobs = e->token_logprobs;
        return r;
    }

    [[nodiscard]] std::string identity() const override { return name_; }

  private:
    const Entry* lookup(const GenerationRequest& req) const {
        const auto fp = prompt_fingerprint(req.prompt);
        if (auto it = by_fingerprint_.find({fp, req.ordinal}); it != by_fingerprint_.end()) return &it->second;
        if (auto it = by_fingerprint_.find({fp, -1}); it != by_fingerprint_.end()) return &it->second;
        const auto q = final_question(req.prompt);
        if (auto it = by_question_.find({q, req.ordinal}); it != by_question_.end()) return &it->second;
        if (auto it = by_question_.find({q, -1}); it != by_question_.end()) return &it->second;
        return fallback_ ? &*fallback_ : nullptr;
    }

    std::string name_;
    std::map<std::pair<std::string, int>, Entry> by_fingerprint_;
    std::map<std::pair<std::string, int>, Entry> by_question_;
    std::optional<Entry> fallback_;
};

/// Raised when one of the K generations fails; carries the responses
/// collected before the failure.
class SamplingError : public Error {
  public:
    SamplingError(const std::string& what, std::vector<SampledResponse> partial)
        : Error(what), partial_(std::move(partial)) {}
    [[nodiscard]] const std::vector<SampledResponse>& partial() const noexcept { return partial_; }

  private:
    std::vector<SampledResponse> partial_;
};

/// Choose K exemplars by a seeded shuffle of the pool, returned in ascending id order.
inline std::vector<Exemplar> select_exemplars(std::span<const Exemplar> pool, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw PreconditionError("K must be at least 1");
    if (pool.size() < k)
        throw PreconditionError("exemplar pool has " + std::to_string(pool.size()) + " entries, need K = " +
                                std::to_string(k));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<Exemplar> chosen;
    for (std::size_t i = 0; i < k; ++i) chosen.push_back(pool[order[i]]);
    std::sort(chosen.begin(), chosen.end(), [](const Exemplar& a, const Exemplar& b) { return a.id < b.id; });
    return chosen;
}

struct SamplingOptions {
    std::size_t k = 6;
    double temperature = kSamplingTemperature;
    int max_new_tokens = 32;
    std::uint64_t seed = 0;
    RetryPolicy retry{};
};

inline std::string trim_copy(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Draw K one-shot samples for a question, sample k using the k-th selected exemplar.
inline ResponseSet sample_k(Backend& backend, std::string question_id, std::string_view question,
                            std::span<const Exemplar> pool, const SamplingOptions& opt) {
    const auto exemplars = select_exemplars(pool, opt.k, opt.seed);
    ResponseSet set{std::move(question_id), {}};
    set.responses.reserve(opt.k);
    for (std::size_t k = 0; k < exemplars.size(); ++k) {
        GenerationRequest req;
        req.prompt = sampling_prompt(exemplars[k], question);
        req.temperature = opt.temperature;
        req.max_new_tokens = opt.max_new_tokens;
        req.want_logprobs = true;
        req.stop_sequences = {"\n###", "\n\n"};
        req.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(k));
        req.ordinal = static_cast<int>(k);
        try {
            auto res = generate(backend, req, opt.retry);
            set.responses.push_back(
                make_response(trim_copy(res.text), res.seq_logprob, exemplars[k].id, opt.temperature));
        } catch (const Error& e) {
            throw SamplingError("sample " + std::to_string(k) + " of " + std::to_string(opt.k) + " for '" +
                                    set.question_id + "' failed: " + e.what(),
                                std::move(set.responses));
        }
    }
    return set;
}

inline std::vector<Exemplar> load_exemplars(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open exemplar pool '" + path + "'");
    std::vector<Exemplar> pool;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim_copy(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Exemplar e;
            e.id = j.contains("id") ? j.at("id").get<int>() : static_cast<int>(pool.size());
            e.question = j.at("question").get<std::string>();
            e.answer = j.at("answer").get<std::string>();
            pool.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw InputFormatError(line_no, ex.what());
        }
    }
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = i + 1; j < pool.size(); ++j)
            if (pool[i].id == pool[j].id) throw PreconditionError("duplicate exemplar id " + std::to_string(pool[i].id));
    return pool;
}

}  // namespace faith
