#pragma once

// Three-stage inference: knowledge-state estimation (estimator model or
// K-sample probing), policy answer conditioned on the state, then
// retrieval-grounded rectification by the RAG model.

#include "faith/dataset.hpp"
#include "faith/error.hpp"
#include "faith/gateway.hpp"
#include "faith/knowledge_state.hpp"
#include "faith/parallel.hpp"
#include "faith/prompts.hpp"
#include "faith/retrieval.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace faith {

enum class StateMode { Estimator, Sampling };

inline std::string_view state_mode_name(StateMode m) { return m == StateMode::Estimator ? "estimator" : "sampling"; }

inline StateMode parse_state_mode(std::string_view s) {
    if (s == "estimator") return StateMode::Estimator;
    if (s == "sampling") return StateMode::Sampling;
    throw PreconditionError("unknown state mode '" + std::string(s) + "'");
}

struct InferenceConfig {
    StateMode mode = StateMode::Estimator;
    bool rectify = true;
    double temperature = kInferenceTemperature;  // policy, estimator and RAG calls
    std::size_t k = 6;                            // sampling mode
    double sampling_temperature = kSamplingTemperature;
    std::uint64_t seed = 0;
    int max_new_tokens = 64;
    std::size_t passages = kContextPassages;
    RetryPolicy retry{};
};

/// Non-owning handles to the models and retriever a run needs. Unused roles may be null.
struct InferenceBackends {
    Backend* base = nullptr;       // sampling-mode probes
    Backend* policy = nullptr;
    Backend* estimator = nullptr;
    Backend* rag = nullptr;
    const Retriever* retriever = nullptr;
    std::span<const Exemplar> exemplars{};
};

struct InferenceTrace {
    std::string id;
    std::string question;
    StateMode state_mode = StateMode::Estimator;
    std::optional<KnowledgeState> state;
    std::string policy_answer;
    std::vector<RetrievedPassage> passages;
    std::string final_answer;
    bool rectified = false;
    std::vector<std::pair<std::string, std::string>> prompts;  // (stage, prompt) in call order
    std::optional<std::string> error;
};

/// A stage failed; carries the trace populated up to that point.
class StageError : public Error {
  public:
    StageError(std::string stage, const std::string& cause, InferenceTrace partial)
        : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)), partial_(std::move(partial)) {}
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
    [[nodiscard]] const InferenceTrace& partial() const noexcept { return partial_; }

  private:
    std::string stage_;
    InferenceTrace partial_;
};

namespace detail {

inline std::string call_model(Backend& backend, const std::string& prompt, const InferenceConfig& cfg,
                              std::uint64_t seed) {
    GenerationRequest req;
    req.prompt = prompt;
    req.temperature = cfg.temperature;
    req.max_new_tokens = cfg.max_new_tokens;
    req.stop_sequences = {"\n###"};
    req.seed = seed;
    return trim_copy(generate(backend, req, cfg.retry).text);
}

}  // namespace detail

/// Estimate the knowledge state for a question. Sampling mode needs gold
/// aliases because consistency is measured against them. Generation prompts
/// are appended to `prompts_out` when given.
inline KnowledgeState estimate_state(const std::string& id, const std::string& question,
                                     std::span<const std::string> gold, const InferenceConfig& cfg,
                                     const InferenceBackends& backends,
                                     std::vector<std::pair<std::string, std::string>>* prompts_out = nullptr) {
    if (cfg.mode == StateMode::Estimator) {
        if (!backends.estimator) throw PreconditionError("estimator mode needs an estimator backend");
        const auto prompt = estimator_prompt(question);
        if (prompts_out) prompts_out->emplace_back("estimator", prompt);
        const auto raw = detail::call_model(*backends.estimator, prompt, cfg, derive_seed(cfg.seed, "estimator:" + id));
        return parse_state(raw);
    }
    if (!backends.base) throw PreconditionError("sampling mode needs a base-model backend");
    if (gold.empty()) throw PreconditionError("sampling mode needs gold answers for '" + id + "'");
    SamplingOptions so;
    so.k = cfg.k;
    so.temperature = cfg.sampling_temperature;
    so.seed = derive_seed(cfg.seed, id);
    so.retry = cfg.retry;
    if (prompts_out)
        for (const auto& ex : select_exemplars(backends.exemplars, so.k, so.seed))
            prompts_out->emplace_back("sampling", sampling_prompt(ex, question));
    const auto set = sample_k(*backends.base, id, question, backends.exemplars, so);
    return map_state(profile(set, gold), set.k());
}

inline InferenceTrace infer(const std::string& id, const std::string& question, std::span<const std::string> gold,
                            const InferenceConfig& cfg, const InferenceBackends& backends) {
    InferenceTrace trace;
    trace.id = id;
    trace.question = question;
    trace.state_mode = cfg.mode;

    std::string stage = "estimate_state";
    try {
        trace.state = estimate_state(id, question, gold, cfg, backends, &trace.prompts);

        stage = "policy";
        if (!backends.policy) throw PreconditionError("no policy backend configured");
        const auto pprompt = policy_prompt(question, *trace.state);
        trace.prompts.emplace_back("policy", pprompt);
        trace.policy_answer = detail::call_model(*backends.policy, pprompt, cfg, derive_seed(cfg.seed, "policy:" + id));

        if (!cfg.rectify) {
            trace.final_answer = trace.policy_answer;
            return trace;
        }

        stage = "retrieve";
        if (!backends.retriever) throw PreconditionError("rectification needs an index, corpus and embedder");
        const std::vector<std::string> query{question};
        trace.passages = backends.retriever->retrieve(query, cfg.passages).front();
        if (trace.passages.empty()) throw PreconditionError("retriever returned no passages");

        stage = "rectify";
        if (!backends.rag) throw PreconditionError("no RAG backend configured");
        std::vector<std::string> texts;
        for (const auto& p : trace.passages) texts.push_back(p.text);
        const auto rprompt = rag_prompt(question, *trace.state, trace.policy_answer, texts);
        trace.prompts.emplace_back("rag", rprompt);
        trace.final_answer = detail::call_model(*backends.rag, rprompt, cfg, derive_seed(cfg.seed, "rag:" + id));
        trace.rectified = normalize_answer(trace.final_answer) != normalize_answer(trace.policy_answer);
        return trace;
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(stage, e.what(), std::move(trace));
    }
}

struct InferenceInput {
    std::string id;
    std::string question;
    std::vector<std::string> gold;  // may be empty in estimator mode
};

/// Questions for inference in JSON Lines; same field names as ingest(), but
/// gold answers are optional.
inline std::vector<InferenceInput> read_questions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open questions '" + path + "'");
    std::vector<InferenceInput> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        InferenceInput q;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw InputFormatError(line_no, "row is not a JSON object");
            q.question = detail::string_field(j, {"question", "query"});
            q.id = detail::string_field(j, {"id", "question_id", "qid"});
            if (q.id.empty()) q.id = "q-" + std::to_string(line_no);
            for (const char* key : {"answers", "answer", "aliases", "gold", "correct_answer"})
                if (j.contains(key) && !j.at(key).is_null()) {
                    detail::push_aliases(j.at(key), q.gold);
                    break;
                }
        } catch (const nlohmann::json::exception& e) {
            throw InputFormatError(line_no, e.what());
        }
        if (q.question.empty()) throw InputFormatError(line_no, "missing question");
        if (!ids.insert(q.id).second) throw InputFormatError(line_no, "duplicate id '" + q.id + "'");
        out.push_back(std::move(q));
    }
    return out;
}

/// Runs infer over a batch with bounded concurrency. Failed questions yield
/// their partial trace with `error` set; output order matches input order.
inline std::vector<InferenceTrace> infer_batch(std::span<const InferenceInput> inputs, const InferenceConfig& cfg,
                                               const InferenceBackends& backends, std::size_t workers = 4) {
    std::vector<InferenceTrace> out(inputs.size());
    parallel_for(inputs.size(), workers, [&](std::size_t i) {
        const auto& in = inputs[i];
        try {
            out[i] = infer(in.id, in.question, in.gold, cfg, backends);
        } catch (const StageError& e) {
            out[i] = e.partial();
            out[i].error = e.what();
        }
    });
    return out;
}

inline ojson to_json(const InferenceTrace& t) {
    ojson j;
    j["id"] = t.id;
    j["question"] = t.question;
    j["state_mode"] = state_mode_name(t.state_mode);
    j["state"] = t.state ? ojson(state_code(*t.state)) : ojson(nullptr);
    j["policy_answer"] = t.policy_answer;
    ojson ps = ojson::array();
    for (const auto& p : t.passages) ps.push_back({{"pid", p.pid}, {"text", p.text}, {"score", p.score}});
    j["passages"] = std::move(ps);
    j["final_answer"] = t.final_answer;
    j["rectified"] = t.rectified;
    ojson prompts = ojson::array();
    for (const auto& [stage, prompt] : t.prompts) prompts.push_back({{"stage", stage}, {"prompt", prompt}});
    j["prompts"] = std::move(prompts);
    if (t.error) j["error"] = *t.error;
    return j;
}

inline InferenceTrace trace_from_json(const nlohmann::json& j) {
    InferenceTrace t;
    t.id = j.at("id").get<std::string>();
    t.question = j.value("question", "");
    t.state_mode = parse_state_mode(j.value("state_mode", "estimator"));
    if (j.contains("state") && !j.at("state").is_null()) {
        const auto code = j.at("state").get<std::string>();
        const auto s = state_from_code(code);
        if (!s) throw StateParseError(code);
        t.state = *s;
    }
    t.policy_answer = j.value("policy_answer", "");
    if (j.contains("passages"))
        for (const auto& p : j.at("passages"))
            t.passages.push_back({p.at("pid").get<std::string>(), p.at("text").get<std::string>(), p.at("score").get<double>()});
    t.final_answer = j.value("final_answer", "");
    t.rectified = j.value("rectified", false);
    if (j.contains("prompts"))
        for (const auto& p : j.at("prompts")) t.prompts.emplace_back(p.at("stage").get<std::string>(), p.at("prompt").get<std::string>());
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    return t;
}

inline std::vector<InferenceTrace> read_traces(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open traces '" + path + "'");
    std::vector<InferenceTrace> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(trace_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputFormatError(line_no, e.what());
        } catch (const Error& e) {
            throw InputFormatError(line_no, e.what());
        }
    }
    return out;
}

}  // namespace faith
