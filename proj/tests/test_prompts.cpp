#include "faith/prompts.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace faith;

namespace {

std::string golden(const std::string& name) {
    std::ifstream in(std::string(FAITH_TEST_DATA) + "/golden/" + name + ".txt", std::ios::binary);
    EXPECT_TRUE(in) << name;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kQuestion = "{THE QUESTION FROM DATASET}";
const std::string kState = "{THE KNOWLEDGE STATE FROM DATASET}";
const std::string kGold = "{GOLDEN ANSWER}";

SlotMap rag_slots(std::string prior) {
    return {{"question", kQuestion},     {"state", kState},           {"prior_judgment", std::move(prior)},
            {"passage_1", "passage 1"}, {"passage_2", "passage 2"}, {"passage_3", "passage 3"}};
}

}  // namespace

TEST(PromptGolden, Sampling) {
    const auto p = render_prompt(TemplateKind::Sampling, {{"demo_question", "{demo_question_1}"},
                                                          {"demo_answer", "{demo_answer_1}"},
                                                          {"question", "{input_question}"}});
    EXPECT_EQ(p, golden("sampling"));
}

TEST(PromptGolden, ReferenceSft) {
    EXPECT_EQ(render_prompt(TemplateKind::ReferenceSft, {{"question", kQuestion}, {"state", kState}}) + kGold,
              golden("reference_sft"));
}

TEST(PromptGolden, Policy) {
    EXPECT_EQ(render_prompt(TemplateKind::Policy, {{"question", kQuestion}, {"state", kState}}) + kGold,
              golden("policy"));
}

TEST(PromptGolden, Raft) {
    EXPECT_EQ(render_prompt(TemplateKind::Rag, rag_slots("{RANDOMLY SELECTED RESPONSE FROM Y_i}")) + kGold,
              golden("raft"));
}

TEST(PromptGolden, RagInference) {
    EXPECT_EQ(render_prompt(TemplateKind::Rag, rag_slots("{POLICY MODEL'S OUTPUT}")) + kGold, golden("rag_inference"));
}

TEST(PromptGolden, Estimator) {
    EXPECT_EQ(render_prompt(TemplateKind::Estimator, {{"question", kQuestion}}) + kState, golden("estimator"));
}

TEST(Prompts, SamplingShowsExemplarBeforeQuestion) {
    const auto p = sampling_prompt({1, "Who wrote Hamlet?", "Shakespeare"}, "Which Bond film features Octopussy?");
    const auto demo = p.find("### Question ###: Who wrote Hamlet?");
    const auto real = p.find("### Question ###: Which Bond film features Octopussy?");
    ASSERT_NE(demo, std::string::npos);
    ASSERT_NE(real, std::string::npos);
    EXPECT_LT(demo, real);
    EXPECT_TRUE(p.ends_with("### Answer ###: "));
}

TEST(Prompts, RagPassageJoiner) {
    const std::vector<std::string> passages{"passage 1", "passage 2", "passage 3"};
    const auto p = rag_prompt("q", KnowledgeState::KnownHonest, "prior", passages);
    EXPECT_NE(p.find("### Retrieve Documents ###: related passages: ###passage 1###;###passage 2###;###passage 3###"),
              std::string::npos);
    EXPECT_NE(p.find("### Self-Eval ###: Have knowledge and honesty"), std::string::npos);
}

TEST(Prompts, FewerPassagesAndMissingSlots) {
    const std::vector<std::string> one{"only"};
    EXPECT_NE(rag_prompt("q", KnowledgeState::UnknownHonest, "p", one).find("related passages: ###only###\n\n"),
              std::string::npos);
    const std::vector<std::string> none;
    EXPECT_THROW(rag_prompt("q", KnowledgeState::UnknownHonest, "p", none), PreconditionError);
    EXPECT_THROW(render_prompt(TemplateKind::Policy, {{"question", "q"}}), PreconditionError);
}

TEST(Prompts, TemplateNames) {
    EXPECT_EQ(parse_template_kind("raft"), TemplateKind::Rag);
    EXPECT_EQ(template_name(parse_template_kind("estimator")), "estimator");
    EXPECT_THROW(parse_template_kind("chat"), PreconditionError);
}
