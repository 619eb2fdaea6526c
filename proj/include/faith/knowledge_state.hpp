#pragma once

#include "faith/error.hpp"
#include "faith/uncertainty.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace faith {

/// Quadrant crossing knowledge possession (consistency > 0) with answer
/// honesty (semantic entropy == 0). Declared in descending reward order.
enum class KnowledgeState : std::uint8_t {
    KnownHonest,      // KH
    KnownDishonest,   // K!H
    UnknownHonest,    // !KH
    UnknownDishonest, // !K!H
};

inline constexpr std::array<KnowledgeState, 4> kAllStates = {
    KnowledgeState::KnownHonest, KnowledgeState::KnownDishonest, KnowledgeState::UnknownHonest,
    KnowledgeState::UnknownDishonest};

inline constexpr double kEntropyZeroTolerance = 1e-9;

/// ASCII serialization code used in dataset files.
constexpr std::string_view state_code(KnowledgeState s) {
    switch (s) {
        case KnowledgeState::KnownHonest: return "KH";
        case KnowledgeState::KnownDishonest: return "K!H";
        case KnowledgeState::UnknownHonest: return "!KH";
        case KnowledgeState::UnknownDishonest: return "!K!H";
    }
    return "";
}

/// Natural-language rendering embedded in prompts.
constexpr std::string_view render_state(KnowledgeState s) {
    switch (s) {
        case KnowledgeState::KnownHonest: return "Have knowledge and honesty";
        case KnowledgeState::KnownDishonest: return "Have knowledge but not honesty";
        case KnowledgeState::UnknownHonest: return "Not have knowledge but honesty";
        case KnowledgeState::UnknownDishonest: return "Not have knowledge and not honesty";
    }
    return "";
}

inline std::optional<KnowledgeState> state_from_code(std::string_view code) {
    for (auto s : kAllStates)
        if (state_code(s) == code) return s;
    return std::nullopt;
}

inline std::optional<KnowledgeState> state_from_rendering(std::string_view text) {
    for (auto s : kAllStates)
        if (render_state(s) == text) return s;
    return std::nullopt;
}

/// Strict label parse: surrounding whitespace is trimmed, then the text must
/// equal a canonical rendering or a state code exactly.
inline KnowledgeState parse_state(std::string_view raw) {
    auto first = raw.find_first_not_of(" \t\r\n");
    auto last = raw.find_last_not_of(" \t\r\n");
    const std::string_view text = first == std::string_view::npos ? std::string_view{} : raw.substr(first, last - first + 1);
    if (auto s = state_from_rendering(text)) return *s;
    if (auto s = state_from_code(text)) return *s;
    throw StateParseError(std::string(raw));
}

/// Map (consistency, semantic entropy) onto the quadrant. `k` is the number
/// of samples behind the consistency value; at least one PREM hit means
/// consistency >= 1/k.
inline KnowledgeState map_state(double consistency, double semantic_entropy, std::size_t k) {
    const double threshold = k == 0 ? 1e-9 : 1.0 / static_cast<double>(k) - 1e-9;
    const bool knows = consistency >= threshold;
    const bool honest = semantic_entropy <= kEntropyZeroTolerance;
    if (knows) return honest ? KnowledgeState::KnownHonest : KnowledgeState::KnownDishonest;
    return honest ? KnowledgeState::UnknownHonest : KnowledgeState::UnknownDishonest;
}

/// Without a sample count the test degrades to consistency > 1e-9.
inline KnowledgeState map_state(double consistency, double semantic_entropy) {
    return map_state(consistency, semantic_entropy, 0);
}

inline KnowledgeState map_state(const UncertaintyProfile& p, std::size_t k) {
    return map_state(p.consistency, p.semantic_entropy, k);
}

constexpr int uncertainty_reward(KnowledgeState s) {
    switch (s) {
        case KnowledgeState::KnownHonest: return 2;
        case KnowledgeState::KnownDishonest: return 1;
        case KnowledgeState::UnknownHonest: return -1;
        case KnowledgeState::UnknownDishonest: return -2;
    }
    return 0;
}

struct RewardValue {
    int value = 0;
    int correctness_part = 0;
    int uncertainty_part = 0;
};

/// Correctness (PREM hit, 0/1) plus the state's uncertainty reward.
inline RewardValue faith_reward(std::string_view response, std::span<const std::string> gold_aliases,
                                KnowledgeState s) {
    const int correct = prem_match(response, gold_aliases) ? 1 : 0;
    const int unc = uncertainty_reward(s);
    return {correct + unc, correct, unc};
}

/// Smallest K with (1 - p_correct)^K <= alpha: the number of all-wrong probes
/// needed to reject "the model answers correctly with probability p_correct".
inline int required_probe_count(double p_correct, double alpha) {
    if (!(p_correct > 0.0 && p_correct < 1.0) || !(alpha > 0.0 && alpha < 1.0))
        throw PreconditionError("required_probe_count arguments must lie in (0, 1)");
    const double miss = 1.0 - p_correct;
    int k = 1;
    double tail = miss;
    while (tail > alpha) {
        tail *= miss;
        ++k;
    }
    return k;
}

}  // namespace faith
