// faith: data preparation, retrieval and inference driver.
//
//   faith augment        --in qa.jsonl --out augmented.jsonl
//   faith build-index    --in corpus.jsonl --out corpus.idx
//   faith attach-context --in augmented.jsonl --out with_ctx.jsonl
//   faith emit-train     --kind all --in with_ctx.jsonl --out train/
//   faith infer          --mode estimator --in questions.jsonl --out traces.jsonl
//   faith evaluate       --in traces.jsonl --gold qa.jsonl --out report.json
//   faith rectify-stats  --in traces.jsonl --gold qa.jsonl
//
// Exit codes: 0 ok, 2 runtime error, 3 augmentation aborted over the failure
// threshold, 4 inference finished with failed questions (traces still written).

#include "faith/faith.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace faith;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::size_t k = 6;
    std::optional<double> temperature;
    std::string in;
    std::string out;
    std::size_t workers = 4;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
    cmd->add_option("--config", c.config, "key = value run configuration");
    cmd->add_option("--seed", c.seed, "master seed")->capture_default_str();
    cmd->add_option("--k", c.k, "samples per question")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--temperature", c.temperature, "decoding temperature");
    cmd->add_option("--in", c.in, "input file")->required();
    auto* out = cmd->add_option("--out", c.out, "output path");
    if (out_required) out->required();
    cmd->add_option("--workers", c.workers, "parallel questions in flight")->capture_default_str()->check(CLI::PositiveNumber);
}

// Relative paths in a config file (scripted: backends, *_path keys) are taken
// from the config file's directory.
Config load_config(const std::string& path) {
    Config cfg = path.empty() ? Config{} : Config::load(path);
    cfg.apply_env();
    if (path.empty()) return cfg;
    const auto base = fs::absolute(path).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).lexically_normal().string(); };
    const auto values = cfg.values();
    for (const auto& [key, value] : values) {
        if (value.empty()) continue;
        if (key.ends_with("_url") && value.starts_with("scripted:"))
            cfg.set(key, "scripted:" + resolve(value.substr(9)));
        else if (key.ends_with("_path"))
            cfg.set(key, resolve(value));
    }
    return cfg;
}

std::string pick(const std::string& flag, const Config& cfg, const std::string& key, const std::string& what) {
    if (!flag.empty()) return flag;
    if (auto v = cfg.get(key)) return *v;
    throw PreconditionError("no " + what + " given (flag or '" + key + "' in config)");
}

std::unique_ptr<Backend> require_backend(const Config& cfg, const std::string& role) {
    auto b = make_role_backend(cfg, role);
    if (!b) throw PreconditionError("no backend configured for role '" + role + "' (" + role + "_url or backend_url)");
    return b;
}

std::vector<std::string> refusal_lexicon(const std::string& flag, const Config& cfg) {
    const auto path = flag.empty() ? cfg.get("refusal_lexicon_path").value_or("") : flag;
    return path.empty() ? default_refusal_lexicon() : load_lexicon(path);
}

GoldTable gold_table(const std::string& path) {
    GoldTable gold;
    for (auto& r : ingest(path, "gold")) gold.emplace(r.id, std::move(r.gold_aliases));
    return gold;
}

struct Retrieval {
    std::vector<Passage> corpus;
    std::unique_ptr<VectorIndex> index;
    std::unique_ptr<Embedder> embedder;
    std::unique_ptr<Retriever> retriever;
};

std::unique_ptr<Retrieval> open_retrieval(const Config& cfg, const std::string& index_flag, const std::string& corpus_flag) {
    auto r = std::make_unique<Retrieval>();
    r->index = std::make_unique<VectorIndex>(VectorIndex::load(pick(index_flag, cfg, "index_path", "index")));
    r->corpus = load_corpus(pick(corpus_flag, cfg, "corpus_path", "corpus"));
    r->embedder = make_embedder(cfg);
    r->retriever = std::make_unique<Retriever>(*r->index, r->corpus, *r->embedder);
    return r;
}

void write_json_file(const std::string& path, const ojson& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

int run_augment(const Common& c, const std::string& source, double fraction, const std::string& exemplars_flag,
                double max_failure_rate) {
    const auto cfg = load_config(c.config);
    auto records = ingest(c.in, source);
    if (fraction < 1.0) records = subsample(records, fraction, c.seed);
    const auto pool = load_exemplars(pick(exemplars_flag, cfg, "exemplars_path", "exemplar pool"));
    auto base = require_backend(cfg, "base");
    AugmentOptions opt;
    opt.k = c.k;
    opt.temperature = c.temperature.value_or(kSamplingTemperature);
    opt.seed = c.seed;
    opt.workers = c.workers;
    opt.failure_threshold = max_failure_rate;
    opt.retry = cfg.retry_policy();
    try {
        const auto result = augment(records, *base, pool, opt);
        write_augmented(c.out, result.records);
        std::map<std::string, std::size_t> by_state;
        for (const auto& r : result.records) ++by_state[std::string(state_code(r.state))];
        std::cerr << "augmented " << result.records.size() << " of " << records.size() << " records";
        for (const auto& [s, n] : by_state) std::cerr << "  " << s << "=" << n;
        std::cerr << '\n';
        return 0;
    } catch (const AugmentationAborted& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}

int run_build_index(const Common& c, const std::string& kind, std::size_t nlist, std::size_t nprobe, std::size_t pq_m,
                    unsigned pq_bits) {
    const auto cfg = load_config(c.config);
    const auto corpus = load_corpus(c.in);
    auto embedder = make_embedder(cfg);
    IndexParams p;
    p.kind = parse_index_kind(kind);
    p.nlist = nlist;
    p.nprobe = nprobe;
    p.pq_m = pq_m;
    p.pq_bits = pq_bits;
    p.seed = c.seed;
    const auto out = pick(c.out, cfg, "index_path", "index output path");
    build_index(corpus, *embedder, p).save(out);
    std::cerr << "indexed " << corpus.size() << " passages (" << kind << ", dim " << embedder->dim() << ") -> " << out << '\n';
    return 0;
}

int run_attach_context(const Common& c, const std::string& index_flag, const std::string& corpus_flag,
                       std::size_t passages) {
    const auto cfg = load_config(c.config);
    auto records = read_augmented(c.in);
    const auto r = open_retrieval(cfg, index_flag, corpus_flag);
    attach_context(records, *r->retriever, passages);
    write_augmented(c.out, records);
    std::cerr << "attached context to " << records.size() << " records\n";
    return 0;
}

int run_emit(const Common& c, const std::string& kind) {
    const auto cfg = load_config(c.config);
    const auto records = read_augmented(c.in);
    std::vector<EmissionKind> kinds;
    if (kind == "all")
        kinds.assign(kAllEmissions.begin(), kAllEmissions.end());
    else
        kinds.push_back(parse_emission_kind(kind));
    EmissionManifest m;
    m.seed = c.seed;
    m.k = records.empty() ? c.k : records.front().responses.k();
    m.temperature = records.empty() || records.front().responses.responses.empty()
                        ? c.temperature.value_or(kSamplingTemperature)
                        : records.front().responses.responses.front().temperature;
    m.backend = cfg.role_url("base").value_or("unspecified");
    for (auto k : kinds) {
        const auto em = emit(records, k, c.seed);
        const auto file = write_emission(c.out, em, m);
        std::cerr << emission_name(k) << ": " << em.rows.size() << " rows -> " << file << '\n';
    }
    return 0;
}

struct InferFlags {
    std::string mode = "estimator";
    bool no_rectify = false;
    std::string index, corpus, exemplars;
    std::size_t passages = kContextPassages;
};

int run_infer(const Common& c, const InferFlags& f) {
    const auto cfg = load_config(c.config);
    InferenceConfig ic;
    ic.mode = parse_state_mode(f.mode);
    ic.rectify = !f.no_rectify;
    ic.temperature = c.temperature.value_or(kInferenceTemperature);
    ic.k = c.k;
    ic.seed = c.seed;
    ic.passages = f.passages;
    ic.retry = cfg.retry_policy();

    const auto inputs = read_questions(c.in);
    InferenceBackends b;
    std::unique_ptr<Backend> base, policy, estimator, rag;
    std::vector<Exemplar> pool;
    std::unique_ptr<Retrieval> retrieval;
    policy = require_backend(cfg, "policy");
    b.policy = policy.get();
    if (ic.mode == StateMode::Estimator) {
        estimator = require_backend(cfg, "estimator");
        b.estimator = estimator.get();
    } else {
        base = require_backend(cfg, "base");
        b.base = base.get();
        pool = load_exemplars(pick(f.exemplars, cfg, "exemplars_path", "exemplar pool"));
        b.exemplars = pool;
    }
    if (ic.rectify) {
        rag = require_backend(cfg, "rag");
        b.rag = rag.get();
        retrieval = open_retrieval(cfg, f.index, f.corpus);
        b.retriever = retrieval->retriever.get();
    }

    const auto traces = infer_batch(inputs, ic, b, c.workers);
    std::vector<ojson> rows;
    std::size_t failed = 0;
    for (const auto& t : traces) {
        rows.push_back(to_json(t));
        if (t.error) {
            ++failed;
            log::warn("'" + t.id + "': " + *t.error);
        }
    }
    write_jsonl(c.out, rows);
    std::cerr << "inferred " << traces.size() - failed << " of " << traces.size() << " questions (" << f.mode
              << (ic.rectify ? ", rectified" : ", no rectification") << ")\n";
    return failed > 0 ? 4 : 0;
}

struct EvalFlags {
    std::string gold, probes, lexicon, exemplars;
    bool quiet = false;
};

int run_evaluate(const Common& c, const EvalFlags& f) {
    const auto cfg = load_config(c.config);
    const auto traces = read_traces(c.in);
    const auto gold = gold_table(f.gold);
    const auto lexicon = refusal_lexicon(f.lexicon, cfg);

    // Known-ness per id: reuse the K samples from an augmented file when
    // given, otherwise probe the base model now.
    std::unordered_map<std::string, bool> known;
    EvalReport report;
    if (!f.probes.empty()) {
        for (const auto& r : read_augmented(f.probes)) known[r.qa.id] = determine_known(r.responses, r.qa.gold_aliases);
        report.metadata["known_source"] = "probes";
    } else {
        auto base = require_backend(cfg, "base");
        const auto pool = load_exemplars(pick(f.exemplars, cfg, "exemplars_path", "exemplar pool"));
        std::vector<const InferenceTrace*> todo;
        for (const auto& t : traces) todo.push_back(&t);
        std::vector<char> flags(todo.size(), 0);
        parallel_for(todo.size(), c.workers, [&](std::size_t i) {
            const auto& t = *todo[i];
            auto it = gold.find(t.id);
            if (it == gold.end()) return;
            SamplingOptions so;
            so.k = c.k;
            so.temperature = c.temperature.value_or(kSamplingTemperature);
            so.seed = derive_seed(c.seed, t.id);
            so.retry = cfg.retry_policy();
            flags[i] = determine_known(sample_k(*base, t.id, t.question, pool, so), it->second) ? 1 : 0;
        });
        for (std::size_t i = 0; i < todo.size(); ++i) known[todo[i]->id] = flags[i] != 0;
        report.metadata["known_source"] = base->identity();
        report.metadata["k"] = std::to_string(c.k);
    }

    std::vector<EvalRow> rows;
    std::vector<InferenceTrace> usable;
    std::size_t skipped = 0;
    for (const auto& t : traces) {
        if (t.error) {
            ++skipped;
            continue;
        }
        auto g = gold.find(t.id);
        if (g == gold.end()) throw PreconditionError("no gold answer for trace '" + t.id + "'");
        auto k = known.find(t.id);
        if (k == known.end()) throw PreconditionError("no knowledge probe for trace '" + t.id + "'");
        rows.push_back(evaluate_answer(t.id, k->second, t.final_answer, g->second, lexicon));
        usable.push_back(t);
    }
    report.counts = tally(rows);
    report.rectification = rectification_stats(usable, gold);
    if (!traces.empty()) report.metadata["state_mode"] = std::string(state_mode_name(traces.front().state_mode));
    report.metadata["seed"] = std::to_string(c.seed);
    report.metadata["skipped_failed_traces"] = std::to_string(skipped);
    if (!c.out.empty()) write_json_file(c.out, report.to_json());
    if (!f.quiet) std::cout << report.table();
    return 0;
}

int run_rectify_stats(const Common& c, const std::string& gold_path) {
    const auto traces = read_traces(c.in);
    const auto s = rectification_stats(traces, gold_table(gold_path));
    const ojson j = {{"changed", s.changed},
                     {"fixed", s.fixed},
                     {"broken", s.broken},
                     {"fixed_ratio", ratio_json(s.fixed_ratio)},
                     {"broken_ratio", ratio_json(s.broken_ratio)}};
    if (!c.out.empty()) write_json_file(c.out, j);
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"faith: knowledge-state aware QA data preparation and inference"};
    app.require_subcommand(1);

    Common c;
    int status = 0;

    auto* aug = app.add_subcommand("augment", "sample K answers per question and label knowledge states");
    add_common(aug, c);
    std::string source = "dataset", exemplars;
    double fraction = 1.0, max_failure_rate = 0.01;
    aug->add_option("--source", source, "source tag stored on each record")->capture_default_str();
    aug->add_option("--fraction", fraction, "subsample fraction in (0, 1]")->capture_default_str();
    aug->add_option("--exemplars", exemplars, "exemplar pool (JSON Lines)");
    aug->add_option("--max-failure-rate", max_failure_rate, "abort above this share of failed records")
        ->capture_default_str();

    auto* bidx = app.add_subcommand("build-index", "embed a passage corpus and build a vector index");
    add_common(bidx, c, false);
    std::string index_kind = "ivf_pq";
    std::size_t nlist = 0, nprobe = 8, pq_m = 0;
    unsigned pq_bits = 8;
    bidx->add_option("--kind", index_kind, "flat or ivf_pq")->capture_default_str()->check(CLI::IsMember({"flat", "ivf_pq"}));
    bidx->add_option("--nlist", nlist, "coarse lists (0: sqrt(n))")->capture_default_str();
    bidx->add_option("--nprobe", nprobe, "lists scanned per query")->capture_default_str();
    bidx->add_option("--pq-m", pq_m, "PQ sub-quantizers (0: dim/8)")->capture_default_str();
    bidx->add_option("--pq-bits", pq_bits, "bits per PQ code")->capture_default_str();

    auto* ctx = app.add_subcommand("attach-context", "attach retrieved passages to augmented records");
    add_common(ctx, c);
    std::string index_path, corpus_path;
    std::size_t passages = kContextPassages;
    ctx->add_option("--index", index_path, "index file (default: index_path)");
    ctx->add_option("--corpus", corpus_path, "corpus file (default: corpus_path)");
    ctx->add_option("--passages", passages, "passages per question")->capture_default_str();

    auto* emt = app.add_subcommand("emit-train", "write training files for one emission kind or all");
    add_common(emt, c);
    std::string emit_kind;
    emt->add_option("--kind", emit_kind,
                    "reference_sft | reward_tuples | raft_pairs | estimator_pairs | policy_prompts | all")
        ->required();

    auto* inf = app.add_subcommand("infer", "run state estimation, policy answer and rectification");
    add_common(inf, c);
    InferFlags iflags;
    inf->add_option("--mode", iflags.mode, "estimator or sampling")->capture_default_str()->check(CLI::IsMember({"estimator", "sampling"}));
    inf->add_flag("--no-rectify", iflags.no_rectify, "stop after the policy answer");
    inf->add_option("--index", iflags.index, "index file (default: index_path)");
    inf->add_option("--corpus", iflags.corpus, "corpus file (default: corpus_path)");
    inf->add_option("--exemplars", iflags.exemplars, "exemplar pool for sampling mode");
    inf->add_option("--passages", iflags.passages, "passages for rectification")->capture_default_str();

    auto* ev = app.add_subcommand("evaluate", "classify answers and report Precision / Truthfulness");
    add_common(ev, c, false);
    EvalFlags eflags;
    ev->add_option("--gold", eflags.gold, "QA file with gold answers")->required();
    ev->add_option("--probes", eflags.probes, "augmented file whose samples decide known / unknown");
    ev->add_option("--lexicon", eflags.lexicon, "refusal lexicon (default: refusal_lexicon_path or built-in)");
    ev->add_option("--exemplars", eflags.exemplars, "exemplar pool when probing the base model");
    ev->add_flag("--quiet", eflags.quiet, "no table on stdout");

    auto* rs = app.add_subcommand("rectify-stats", "how rectification changed policy answers");
    add_common(rs, c, false);
    std::string rs_gold;
    rs->add_option("--gold", rs_gold, "QA file with gold answers")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*aug) status = run_augment(c, source, fraction, exemplars, max_failure_rate);
        else if (*bidx) status = run_build_index(c, index_kind, nlist, nprobe, pq_m, pq_bits);
        else if (*ctx) status = run_attach_context(c, index_path, corpus_path, passages);
        else if (*emt) status = run_emit(c, emit_kind);
        else if (*inf) status = run_infer(c, iflags);
        else if (*ev) status = run_evaluate(c, eflags);
        else if (*rs) status = run_rectify_stats(c, rs_gold);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return status;
}
