#pragma once

// Answer normalization, PREM matching, refusal detection and the two
// uncertainty signals computed over a set of sampled answers: consistency
// (fraction of samples matching gold) and semantic entropy over meaning
// clusters.

#include "faith/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace faith {

/// Canonical form of a short answer. Only constructible through normalize_answer.
class NormalizedAnswer {
  public:
    NormalizedAnswer() = default;

    [[nodiscard]] const std::string& text() const noexcept { return text_; }
    [[nodiscard]] bool empty() const noexcept { return text_.empty(); }

    friend bool operator==(const NormalizedAnswer&, const NormalizedAnswer&) = default;
    friend auto operator<=>(const NormalizedAnswer&, const NormalizedAnswer&) = default;

  private:
    explicit NormalizedAnswer(std::string t) : text_(std::move(t)) {}
    friend NormalizedAnswer normalize_answer(std::string_view);

    std::string text_;
};

namespace detail {

inline bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace detail

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the as whole
/// words, and collapse whitespace. Non-ASCII bytes pass through unchanged.
inline NormalizedAnswer normalize_answer(std::string_view text) {
    std::string stripped;
    stripped.reserve(text.size());
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::ispunct(c)) continue;
        stripped.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }

    std::string out;
    out.reserve(stripped.size());
    std::size_t i = 0;
    while (i < stripped.size()) {
        while (i < stripped.size() && detail::is_space(static_cast<unsigned char>(stripped[i]))) ++i;
        const std::size_t start = i;
        while (i < stripped.size() && !detail::is_space(static_cast<unsigned char>(stripped[i]))) ++i;
        if (start == i) break;
        const std::string_view word(stripped.data() + start, i - start);
        if (detail::is_article(word)) continue;
        if (!out.empty()) out.push_back(' ');
        out.append(word);
    }
    return NormalizedAnswer(std::move(out));
}

/// Positive-Recall Exact Match against any alias: the normalized candidate
/// contains the normalized alias or vice versa. An empty normalized form only
/// matches another empty form.
inline bool prem_match(std::string_view candidate, std::span<const std::string> gold_aliases) {
    if (gold_aliases.empty()) throw MalformedGoldError("gold alias list is empty");
    const auto cand = normalize_answer(candidate);
    for (const auto& alias : gold_aliases) {
        const auto gold = normalize_answer(alias);
        if (cand == gold) return true;
        if (cand.empty() || gold.empty()) continue;
        if (cand.text().find(gold.text()) != std::string::npos ||
            gold.text().find(cand.text()) != std::string::npos)
            return true;
    }
    return false;
}

inline bool prem_match(std::string_view candidate, std::initializer_list<std::string> gold_aliases) {
    return prem_match(candidate, std::span<const std::string>(gold_aliases.begin(), gold_aliases.size()));
}

inline const std::vector<std::string>& default_refusal_lexicon() {
    static const std::vector<std::string> lexicon = {
        "I don't know",        "I do not know",      "refuse to answer", "cannot answer",
        "can't answer",        "unable to answer",   "not able to answer", "I'm not sure",
        "I am not sure",       "no idea",            "cannot provide an answer",
        "don't have enough information", "do not have enough information",
        "I cannot determine",  "unanswerable",
    };
    return lexicon;
}

/// True iff the normalized text contains any normalized lexicon phrase.
inline bool is_refusal(std::string_view text, std::span<const std::string> lexicon) {
    const auto norm = normalize_answer(text);
    for (const auto& phrase : lexicon) {
        const auto p = normalize_answer(phrase);
        if (!p.empty() && norm.text().find(p.text()) != std::string::npos) return true;
    }
    return false;
}

inline bool is_refusal(std::string_view text) { return is_refusal(text, default_refusal_lexicon()); }

struct SampledResponse {
    std::string raw_text;
    NormalizedAnswer normalized;
    std::optional<double> seq_logprob;  // natural log, <= 0
    int exemplar_id = 0;
    double temperature = 0.2;
};

inline SampledResponse make_response(std::string raw, std::optional<double> seq_logprob = std::nullopt,
                                     int exemplar_id = 0, double temperature = 0.2) {
    if (seq_logprob && !(*seq_logprob <= 0.0))
        throw PreconditionError("sequence log-probability must be <= 0");
    SampledResponse r;
    r.normalized = normalize_answer(raw);
    r.raw_text = std::move(raw);
    r.seq_logprob = seq_logprob;
    r.exemplar_id = exemplar_id;
    r.temperature = temperature;
    return r;
}

struct ResponseSet {
    std::string question_id;
    std::vector<SampledResponse> responses;

    [[nodiscard]] std::size_t k() const noexcept { return responses.size(); }
    [[nodiscard]] bool has_logprobs() const {
        return !responses.empty() &&
               std::all_of(responses.begin(), responses.end(), [](const auto& r) { return r.seq_logprob.has_value(); });
    }
};

struct SemanticCluster {
    NormalizedAnswer representative;
    std::vector<std::size_t> member_indices;  // ascending
    double mass = 0.0;
};

struct UncertaintyProfile {
    double consistency = 0.0;
    double semantic_entropy = 0.0;  // nats
    std::size_t cluster_count = 1;
};

/// Default meaning equivalence: identical normalized answers.
struct NormalizedEquality {
    bool operator()(const SampledResponse& a, const SampledResponse& b) const { return a.normalized == b.normalized; }
};

template <typename Eq>
concept AnswerEquivalence = std::predicate<const Eq&, const SampledResponse&, const SampledResponse&>;

namespace detail {

/// Sum after sorting so the result does not depend on input order.
inline double ordered_sum(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
}

struct DisjointSets {
    std::vector<std::size_t> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace detail

/// Partition the responses into meaning clusters (transitive closure of
/// `equivalent`) and assign each cluster its renormalized probability mass.
/// Uniform 1/K weights are used unless every response carries a log-prob.
template <AnswerEquivalence Eq = NormalizedEquality>
std::vector<SemanticCluster> cluster_responses(const ResponseSet& set, const Eq& equivalent = {}) {
    const std::size_t k = set.k();
    if (k == 0) throw PreconditionError("response set is empty");

    detail::DisjointSets sets(k);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            if (sets.find(i) != sets.find(j) && equivalent(set.responses[i], set.responses[j])) sets.unite(i, j);

    std::vector<double> weight(k, 1.0 / static_cast<double>(k));
    if (set.has_logprobs()) {
        double peak = -INFINITY;
        for (const auto& r : set.responses) peak = std::max(peak, *r.seq_logprob);
        for (std::size_t i = 0; i < k; ++i) weight[i] = std::exp(*set.responses[i].seq_logprob - peak);
    }

    std::vector<SemanticCluster> clusters;
    std::vector<std::size_t> slot(k, k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t root = sets.find(i);
        if (slot[root] == k) {
            slot[root] = clusters.size();
            clusters.push_back({set.responses[i].normalized, {}, 0.0});
        }
        clusters[slot[root]].member_indices.push_back(i);
    }

    std::vector<double> sums;
    sums.reserve(clusters.size());
    for (auto& c : clusters) {
        std::vector<double> w;
        w.reserve(c.member_indices.size());
        for (auto idx : c.member_indices) w.push_back(weight[idx]);
        c.mass = detail::ordered_sum(std::move(w));
        sums.push_back(c.mass);
    }
    const double total = detail::ordered_sum(std::move(sums));
    for (auto& c : clusters) c.mass /= total;
    return clusters;
}

/// Shannon entropy (nats) of the cluster mass distribution.
inline double semantic_entropy(std::span<const SemanticCluster> clusters) {
    if (clusters.empty()) throw UnnormalizedInputError("no clusters");
    std::vector<double> masses;
    masses.reserve(clusters.size());
    for (const auto& c : clusters) {
        if (c.mass < 0.0 || c.mass > 1.0 + 1e-12) throw UnnormalizedInputError("cluster mass outside [0, 1]");
        masses.push_back(c.mass);
    }
    const double total = detail::ordered_sum(masses);
    if (std::abs(total - 1.0) > 1e-6)
        throw UnnormalizedInputError("cluster masses sum to " + std::to_string(total) + ", expected 1");
    if (clusters.size() == 1) return 0.0;

    std::vector<double> terms;
    terms.reserve(masses.size());
    for (double m : masses)
        if (m > 0.0) terms.push_back(-m * std::log(m));
    return detail::ordered_sum(std::move(terms));
}

/// Fraction of responses that PREM-match the gold aliases.
inline double consistency(const ResponseSet& set, std::span<const std::string> gold_aliases) {
    if (set.k() == 0) throw PreconditionError("response set is empty");
    if (gold_aliases.empty()) throw MalformedGoldError("gold alias list is empty");
    std::size_t hits = 0;
    for (const auto& r : set.responses)
        if (prem_match(r.raw_text, gold_aliases)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(set.k());
}

template <AnswerEquivalence Eq = NormalizedEquality>
UncertaintyProfile profile(const ResponseSet& set, std::span<const std::string> gold_aliases,
                           const Eq& equivalent = {}) {
    const auto clusters = cluster_responses(set, equivalent);
    return {consistency(set, gold_aliases), semantic_entropy(clusters), clusters.size()};
}

}  // namespace faith
