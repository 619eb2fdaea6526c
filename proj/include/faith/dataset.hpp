#pragma once

// QA ingestion, K-sample augmentation, context attachment and emission of
// the training sets for the reference SFT, reward model, RAFT rectifier and
// state estimator stages (plus the policy-optimization prompt set).

#include "faith/error.hpp"
#include "faith/gateway.hpp"
#include "faith/knowledge_state.hpp"
#include "faith/log.hpp"
#include "faith/parallel.hpp"
#include "faith/prompts.hpp"
#include "faith/random.hpp"
#include "faith/retrieval.hpp"
#include "faith/uncertainty.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

namespace faith {

using ojson = nlohmann::ordered_json;

struct QaRecord {
    std::string id;
    std::string question;
    std::vector<std::string> gold_aliases;
    std::string source;
};

struct AugmentedRecord {
    QaRecord qa;
    ResponseSet responses;
    UncertaintyProfile profile;
    KnowledgeState state = KnowledgeState::UnknownDishonest;
    std::optional<std::vector<RetrievedPassage>> passages;

    /// False when any sample lacked a log-probability, i.e. entropy used uniform weights.
    [[nodiscard]] bool logprobs_available() const { return responses.has_logprobs(); }
};

namespace detail {

inline void push_aliases(const nlohmann::json& v, std::vector<std::string>& out) {
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
    } else if (v.is_array()) {
        for (const auto& a : v) push_aliases(a, out);
    } else if (v.is_object()) {
        // TriviaQA style: {"value": .., "aliases": [..]}
        if (v.contains("value")) push_aliases(v.at("value"), out);
        if (v.contains("aliases")) push_aliases(v.at("aliases"), out);
    } else if (v.is_number()) {
        out.push_back(v.dump());
    } else {
        throw nlohmann::json::type_error::create(302, "unsupported answer type", &v);
    }
}

inline std::string string_field(const nlohmann::json& j, std::initializer_list<const char*> names) {
    for (const char* n : names)
        if (j.contains(n) && !j.at(n).is_null()) {
            const auto& v = j.at(n);
            return v.is_string() ? v.get<std::string>() : v.dump();
        }
    return {};
}

}  // namespace detail

/// Read a QA file in JSON Lines. Accepted fields: question|query; answers |
/// answer | aliases | gold | correct_answer (string, list, or TriviaQA answer
/// object); id|question_id|qid (defaults to "<source>-<line>").
inline std::vector<QaRecord> ingest(const std::string& path, const std::string& source_tag) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open dataset '" + path + "'");
    std::vector<QaRecord> out;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        QaRecord rec;
        rec.source = source_tag;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw InputFormatError(line_no, "row is not a JSON object");
            rec.question = detail::string_field(j, {"question", "query"});
            rec.id = detail::string_field(j, {"id", "question_id", "qid"});
            if (rec.id.empty()) rec.id = source_tag + "-" + std::to_string(line_no);
            std::vector<std::string> aliases;
            for (const char* key : {"answers", "answer", "aliases", "gold", "correct_answer"})
                if (j.contains(key) && !j.at(key).is_null()) {
                    detail::push_aliases(j.at(key), aliases);
                    break;
                }
            for (auto& a : aliases)
                if (std::find(rec.gold_aliases.begin(), rec.gold_aliases.end(), a) == rec.gold_aliases.end())
                    rec.gold_aliases.push_back(std::move(a));
        } catch (const nlohmann::json::exception& e) {
            throw InputFormatError(line_no, e.what());
        }
        if (rec.question.empty()) throw InputFormatError(line_no, "missing question");
        if (rec.gold_aliases.empty()) throw InputFormatError(line_no, "missing gold answer");
        if (!ids.insert(rec.id).second) throw InputFormatError(line_no, "duplicate id '" + rec.id + "'");
        out.push_back(std::move(rec));
    }
    if (out.empty()) log::warn("dataset '" + path + "' contains no records");
    return out;
}

/// Keep ceil(fraction * N) records chosen uniformly without replacement;
/// survivors stay in input order.
inline std::vector<QaRecord> subsample(const std::vector<QaRecord>& records, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw PreconditionError("subsample fraction must lie in (0, 1]");
    const std::size_t n = records.size();
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
    if (keep == n) return records;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "subsample"));
    rng.shuffle(idx);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    std::vector<QaRecord> out;
    out.reserve(keep);
    for (auto i : idx) out.push_back(records[i]);
    return out;
}

struct AugmentOptions {
    std::size_t k = 6;
    double temperature = kSamplingTemperature;
    std::uint64_t seed = 0;
    std::size_t workers = 4;
    double failure_threshold = 0.01;  // abort when failed / N exceeds this
    int max_new_tokens = 32;
    RetryPolicy retry{};
};

struct AugmentFailure {
    std::string id;
    std::string message;
};

struct AugmentResult {
    std::vector<AugmentedRecord> records;  // successful records, input order
    std::vector<AugmentFailure> failures;
};

class AugmentationAborted : public Error {
  public:
    AugmentationAborted(const std::string& what, std::vector<AugmentFailure> failures)
        : Error(what), failures_(std::move(failures)) {}
    [[nodiscard]] const std::vector<AugmentFailure>& failures() const noexcept { return failures_; }

  private:
    std::vector<AugmentFailure> failures_;
};

/// Profile and quadrant state for a sampled record.
template <AnswerEquivalence Eq = NormalizedEquality>
AugmentedRecord assess(QaRecord qa, ResponseSet responses, const Eq& equivalent = {}) {
    AugmentedRecord rec;
    rec.profile = profile(responses, qa.gold_aliases, equivalent);
    rec.state = map_state(rec.profile, responses.k());
    rec.qa = std::move(qa);
    rec.responses = std::move(responses);
    return rec;
}

template <AnswerEquivalence Eq = NormalizedEquality>
AugmentResult augment(const std::vector<QaRecord>& records, Backend& backend, std::span<const Exemplar> pool,
                      const AugmentOptions& opt, const Eq& equivalent = {}) {
    if (pool.size() < opt.k)
        throw PreconditionError("exemplar pool has " + std::to_string(pool.size()) + " entries, need K = " +
                                std::to_string(opt.k));
    std::vector<std::optional<AugmentedRecord>> slots(records.size());
    std::vector<std::optional<std::string>> errors(records.size());
    parallel_for(records.size(), opt.workers, [&](std::size_t i) {
        const auto& qa = records[i];
        SamplingOptions so;
        so.k = opt.k;
        so.temperature = opt.temperature;
        so.max_new_tokens = opt.max_new_tokens;
        so.seed = derive_seed(opt.seed, qa.id);
        so.retry = opt.retry;
        try {
            auto set = sample_k(backend, qa.id, qa.question, pool, so);
            slots[i] = assess(qa, std::move(set), equivalent);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });

    AugmentResult out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (slots[i]) out.records.push_back(std::move(*slots[i]));
        if (errors[i]) out.failures.push_back({records[i].id, *errors[i]});
    }
    if (!records.empty() &&
        static_cast<double>(out.failures.size()) > opt.failure_threshold * static_cast<double>(records.size()))
        throw AugmentationAborted(std::to_string(out.failures.size()) + " of " + std::to_string(records.size()) +
                                      " records failed augmentation (threshold " +
                                      std::to_string(opt.failure_threshold * 100.0) + "%): " +
                                      out.failures.front().message,
                                  out.failures);
    for (const auto& f : out.failures) log::warn("augmentation failed for '" + f.id + "': " + f.message);
    return out;
}

inline constexpr std::size_t kContextPassages = 3;

/// Attach the top-3 passages retrieved for each record's question.
inline void attach_context(std::vector<AugmentedRecord>& records, const Retriever& retriever,
                           std::size_t k = kContextPassages) {
    if (records.empty()) return;
    if (retriever.index().size() < k)
        log::warn("corpus holds " + std::to_string(retriever.index().size()) + " passages; attaching fewer than " +
                  std::to_string(k));
    std::vector<std::string> queries;
    queries.reserve(records.size());
    for (const auto& r : records) queries.push_back(r.qa.question);
    auto hits = retriever.retrieve(queries, k);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].passages = std::move(hits[i]);
}

// ---- unified intermediate schema ----

inline ojson to_json(const AugmentedRecord& r) {
    ojson j;
    j["id"] = r.qa.id;
    j["source"] = r.qa.source;
    j["question"] = r.qa.question;
    j["gold"] = r.qa.gold_aliases;
    ojson samples = ojson::array();
    for (const auto& s : r.responses.responses) {
        ojson sj;
        sj["text"] = s.raw_text;
        sj["logprob"] = s.seq_logprob ? ojson(*s.seq_logprob) : ojson(nullptr);
        sj["exemplar_id"] = s.exemplar_id;
        samples.push_back(std::move(sj));
    }
    j["samples"] = std::move(samples);
    j["temperature"] = r.responses.responses.empty() ? kSamplingTemperature : r.responses.responses.front().temperature;
    j["logprobs_available"] = r.logprobs_available();
    j["consistency"] = r.profile.consistency;
    j["semantic_entropy"] = r.profile.semantic_entropy;
    j["cluster_count"] = r.profile.cluster_count;
    j["state"] = state_code(r.state);
    if (r.passages) {
        ojson ps = ojson::array();
        for (const auto& p : *r.passages) ps.push_back({{"pid", p.pid}, {"text", p.text}, {"score", p.score}});
        j["passages"] = std::move(ps);
    }
    return j;
}

inline AugmentedRecord augmented_from_json(const nlohmann::json& j) {
    AugmentedRecord r;
    r.qa.id = j.at("id").get<std::string>();
    r.qa.source = j.value("source", "");
    r.qa.question = j.at("question").get<std::string>();
    r.qa.gold_aliases = j.at("gold").get<std::vector<std::string>>();
    const double temperature = j.value("temperature", kSamplingTemperature);
    r.responses.question_id = r.qa.id;
    for (const auto& s : j.at("samples")) {
        std::optional<double> lp;
        if (s.contains("logprob") && !s.at("logprob").is_null()) lp = s.at("logprob").get<double>();
        r.responses.responses.push_back(
            make_response(s.at("text").get<std::string>(), lp, s.value("exemplar_id", 0), temperature));
    }
    r.profile.consistency = j.at("consistency").get<double>();
    r.profile.semantic_entropy = j.at("semantic_entropy").get<double>();
    r.profile.cluster_count = j.at("cluster_count").get<std::size_t>();
    const auto code = j.at("state").get<std::string>();
    const auto state = state_from_code(code);
    if (!state) throw StateParseError(code);
    r.state = *state;
    if (j.contains("passages")) {
        std::vector<RetrievedPassage> ps;
        for (const auto& p : j.at("passages"))
            ps.push_back({p.at("pid").get<std::string>(), p.at("text").get<std::string>(), p.at("score").get<double>()});
        r.passages = std::move(ps);
    }
    return r;
}

template <typename Json>
void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot open '" + path + "' for writing");
    for (const auto& r : rows) out << r.dump() << '\n';
    if (!out) throw PreconditionError("write to '" + path + "' failed");
}

inline void write_augmented(const std::string& path, const std::vector<AugmentedRecord>& records) {
    std::vector<ojson> rows;
    rows.reserve(records.size());
    for (const auto& r : records) rows.push_back(to_json(r));
    write_jsonl(path, rows);
}

inline std::vector<AugmentedRecord> read_augmented(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open augmented dataset '" + path + "'");
    std::vector<AugmentedRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(augmented_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputFormatError(line_no, e.what());
        } catch (const Error& e) {
            throw InputFormatError(line_no, e.what());
        }
    }
    return out;
}

// ---- training emissions ----

enum class EmissionKind { ReferenceSft, RewardTuples, RaftPairs, EstimatorPairs, PolicyPrompts };

inline constexpr std::array<EmissionKind, 5> kAllEmissions = {EmissionKind::ReferenceSft, EmissionKind::RewardTuples,
                                                              EmissionKind::RaftPairs, EmissionKind::EstimatorPairs,
                                                              EmissionKind::PolicyPrompts};

inline std::string_view emission_name(EmissionKind k) {
    switch (k) {
        case EmissionKind::ReferenceSft: return "reference_sft";
        case EmissionKind::RewardTuples: return "reward_tuples";
        case EmissionKind::RaftPairs: return "raft_pairs";
        case EmissionKind::EstimatorPairs: return "estimator_pairs";
        case EmissionKind::PolicyPrompts: return "policy_prompts";
    }
    return "";
}

inline EmissionKind parse_emission_kind(std::string_view s) {
    for (auto k : kAllEmissions)
        if (emission_name(k) == s) return k;
    throw PreconditionError("unknown emission kind '" + std::string(s) + "'");
}

struct TrainingEmission {
    EmissionKind kind;
    std::vector<ojson> rows;
};

/// Index of the prior response used in a record's RAFT pair.
inline std::size_t raft_prior_index(const AugmentedRecord& r, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "raft:" + r.qa.id));
    return static_cast<std::size_t>(rng.below(r.responses.k()));
}

inline TrainingEmission emit(const std::vector<AugmentedRecord>& records, EmissionKind kind, std::uint64_t seed) {
    TrainingEmission em{kind, {}};
    for (const auto& r : records) {
        const auto& gold = r.qa.gold_aliases;
        if (gold.empty()) throw MalformedGoldError("record '" + r.qa.id + "' has no gold answer");
        switch (kind) {
            case EmissionKind::ReferenceSft:
                em.rows.push_back({{"id", r.qa.id},
                                   {"prompt", reference_sft_prompt(r.qa.question, r.state)},
                                   {"target", gold.front()},
                                   {"state", state_code(r.state)}});
                break;
            case EmissionKind::RewardTuples:
                for (std::size_t k = 0; k < r.responses.k(); ++k) {
                    const auto& y = r.responses.responses[k].raw_text;
                    const auto reward = faith_reward(y, gold, r.state);
                    em.rows.push_back({{"id", r.qa.id},
                                       {"k", k},
                                       {"question", r.qa.question},
                                       {"response", y},
                                       {"state", state_code(r.state)},
                                       {"state_text", render_state(r.state)},
                                       {"correctness", reward.correctness_part},
                                       {"uncertainty", reward.uncertainty_part},
                                       {"reward", reward.value}});
                }
                break;
            case EmissionKind::RaftPairs: {
                if (!r.passages || r.passages->empty())
                    throw PreconditionError("record '" + r.qa.id + "' has no retrieved passages; run attach-context first");
                const auto prior = raft_prior_index(r, seed);
                std::vector<std::string> texts;
                for (const auto& p : *r.passages) texts.push_back(p.text);
                const auto& prior_text = r.responses.responses.at(prior).raw_text;
                em.rows.push_back({{"id", r.qa.id},
                                   {"prompt", rag_prompt(r.qa.question, r.state, prior_text, texts)},
                                   {"target", gold.front()},
                                   {"prior_index", prior},
                                   {"prior", prior_text},
                                   {"state", state_code(r.state)}});
                break;
            }
            case EmissionKind::EstimatorPairs:
                em.rows.push_back({{"id", r.qa.id},
                                   {"prompt", estimator_prompt(r.qa.question)},
                                   {"target", render_state(r.state)},
                                   {"label", state_code(r.state)}});
                break;
            case EmissionKind::PolicyPrompts:
                em.rows.push_back({{"id", r.qa.id},
                                   {"prompt", policy_prompt(r.qa.question, r.state)},
                                   {"state", state_code(r.state)},
                                   {"gold", gold}});
                break;
        }
    }
    return em;
}

struct EmissionManifest {
    std::uint64_t seed = 0;
    std::size_t k = 6;
    double temperature = kSamplingTemperature;
    std::string backend;
    std::map<std::string, std::size_t> row_counts;
    std::map<std::string, std::string> files;

    [[nodiscard]] ojson to_json() const {
        ojson j;
        j["seed"] = seed;
        j["k"] = k;
        j["temperature"] = temperature;
        j["backend"] = backend;
        j["row_counts"] = row_counts;
        j["files"] = files;
        return j;
    }
};

/// Write one emission to `<dir>/<kind>.jsonl` and merge it into `<dir>/manifest.json`.
inline std::string write_emission(const std::string& dir, const TrainingEmission& em, EmissionManifest manifest) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto name = std::string(emission_name(em.kind));
    const auto file = (fs::path(dir) / (name + ".jsonl")).string();
    write_jsonl(file, em.rows);

    const auto manifest_path = fs::path(dir) / "manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        const auto prev = nlohmann::json::parse(in, nullptr, false);
        if (!prev.is_discarded() && prev.contains("row_counts") && prev.contains("files") &&
            prev.value("seed", manifest.seed) == manifest.seed) {
            for (auto& [kname, count] : prev.at("row_counts").items())
                manifest.row_counts.emplace(kname, count.get<std::size_t>());
            for (auto& [kname, f] : prev.at("files").items()) manifest.files.emplace(kname, f.get<std::string>());
        }
    }
    manifest.row_counts[name] = em.rows.size();
    manifest.files[name] = name + ".jsonl";
    std::ofstream out(manifest_path, std::ios::trunc);
    out << manifest.to_json().dump(2) << '\n';
    return file;
}

}  // namespace faith
