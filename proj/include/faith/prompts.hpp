#pragma once

// Prompt templates for every model role. Paragraphs are separated by one
// blank line. A rendered prompt stops right after the final "###: " marker;
// for training pairs the consumer appends the target, so prompt + target
// reproduces the full filled-in template.

#include "faith/error.hpp"
#include "faith/knowledge_state.hpp"

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace faith {

enum class TemplateKind {
    Sampling,      // one-shot exemplar + question, used for K-sample augmentation
    ReferenceSft,  // question + self-eval, target is the gold answer
    Policy,        // question + self-eval, answered by the policy model
    Rag,           // question + self-eval + prior judgment + passages (RAFT and inference)
    Estimator,     // question only, target is the knowledge state
};

using SlotMap = std::map<std::string, std::string, std::less<>>;

struct Exemplar {
    int id = 0;
    std::string question;
    std::string answer;
};

inline constexpr std::string_view kSystemPreamble =
    "You are an excellent Question-Answering assistant. Please answer the following question based on your knowledge.";

inline std::string_view template_name(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::Sampling: return "sampling";
        case TemplateKind::ReferenceSft: return "reference_sft";
        case TemplateKind::Policy: return "policy";
        case TemplateKind::Rag: return "rag";
        case TemplateKind::Estimator: return "estimator";
    }
    return "";
}

inline TemplateKind parse_template_kind(std::string_view name) {
    if (name == "sampling") return TemplateKind::Sampling;
    if (name == "reference_sft") return TemplateKind::ReferenceSft;
    if (name == "policy") return TemplateKind::Policy;
    if (name == "rag" || name == "raft") return TemplateKind::Rag;
    if (name == "estimator") return TemplateKind::Estimator;
    throw PreconditionError("unknown template kind '" + std::string(name) + "'");
}

namespace detail {

inline const std::string& require_slot(const SlotMap& slots, std::string_view name) {
    auto it = slots.find(name);
    if (it == slots.end()) throw PreconditionError("missing prompt slot '" + std::string(name) + "'");
    return it->second;
}

inline std::string section(std::string_view marker, std::string_view value) {
    std::string s = "### ";
    s.append(marker).append(" ###: ").append(value);
    return s;
}

inline std::string join_blocks(std::span<const std::string> blocks) {
    std::string out;
    for (const auto& b : blocks) {
        if (!out.empty()) out.append("\n\n");
        out.append(b);
    }
    return out;
}

inline std::string passage_list(const SlotMap& slots) {
    std::string out = "related passages: ";
    require_slot(slots, "passage_1");
    for (int i = 1;; ++i) {
        auto it = slots.find("passage_" + std::to_string(i));
        if (it == slots.end()) break;
        if (i > 1) out.push_back(';');
        out.append("###").append(it->second).append("###");
    }
    return out;
}

}  // namespace detail

/// Slots per kind:
///   sampling:      demo_question, demo_answer, question
///   reference_sft: question, state
///   policy:        question, state
///   rag:           question, state, prior_judgment, passage_1[, passage_2, passage_3]
///   estimator:     question
inline std::string render_prompt(TemplateKind kind, const SlotMap& slots) {
    using detail::require_slot;
    using detail::section;
    std::vector<std::string> blocks{std::string(kSystemPreamble)};
    switch (kind) {
        case TemplateKind::Sampling:
            blocks.push_back(section("Question", require_slot(slots, "demo_question")));
            blocks.push_back(section("Answer", require_slot(slots, "demo_answer")));
            blocks.push_back(section("Question", require_slot(slots, "question")));
            blocks.push_back(section("Answer", ""));
            break;
        case TemplateKind::ReferenceSft:
            blocks.push_back(section("Question", require_slot(slots, "question")));
            blocks.push_back(section("Self-Eval", require_slot(slots, "state")));
            blocks.push_back(section("Output", ""));
            break;
        case TemplateKind::Policy:
            blocks.push_back(section("Question", require_slot(slots, "question")));
            blocks.push_back(section("Self-Eval", require_slot(slots, "state")));
            blocks.push_back(section("Answer", ""));
            break;
        case TemplateKind::Rag:
            blocks.push_back(section("Question", require_slot(slots, "question")));
            blocks.push_back(section("Self-Eval", require_slot(slots, "state")));
            blocks.push_back(section("Prior Judgment", require_slot(slots, "prior_judgment")));
            blocks.push_back(section("Retrieve Documents", detail::passage_list(slots)));
            blocks.push_back(section("Posterior Answer", ""));
            break;
        case TemplateKind::Estimator:
            blocks.push_back(section("Question", require_slot(slots, "question")));
            blocks.push_back(section("Self-Eval", ""));
            break;
    }
    return detail::join_blocks(blocks);
}

// Typed front-ends over render_prompt.

inline std::string sampling_prompt(const Exemplar& demo, std::string_view question) {
    return render_prompt(TemplateKind::Sampling,
                         {{"demo_question", demo.question}, {"demo_answer", demo.answer}, {"question", std::string(question)}});
}

inline std::string reference_sft_prompt(std::string_view question, KnowledgeState s) {
    return render_prompt(TemplateKind::ReferenceSft,
                         {{"question", std::string(question)}, {"state", std::string(render_state(s))}});
}

inline std::string policy_prompt(std::string_view question, KnowledgeState s) {
    return render_prompt(TemplateKind::Policy, {{"question", std::string(question)}, {"state", std::string(render_state(s))}});
}

inline std::string rag_prompt(std::string_view question, KnowledgeState s, std::string_view prior,
                              std::span<const std::string> passages) {
    SlotMap slots{{"question", std::string(question)},
                  {"state", std::string(render_state(s))},
                  {"prior_judgment", std::string(prior)}};
    for (std::size_t i = 0; i < passages.size(); ++i) slots["passage_" + std::to_string(i + 1)] = passages[i];
    return render_prompt(TemplateKind::Rag, slots);
}

inline std::string estimator_prompt(std::string_view question) {
    return render_prompt(TemplateKind::Estimator, {{"question", std::string(question)}});
}

}  // namespace faith
