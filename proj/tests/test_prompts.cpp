#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "stemf/prompts.hpp"
#include "support.hpp"

using namespace stemf;
using stemf::testing::TempDir;

namespace {

std::string read_paper() {
  std::ifstream in(stemf::testing::source_dir() / "paper.md", std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Body of the lstlisting whose caption line ends with `label=<label>]`.
std::string listing(const std::string& paper, const std::string& label) {
  const std::string marker = "label=" + label + "]\n";
  const auto start = paper.find(marker);
  if (start == std::string::npos) return {};
  const auto body = start + marker.size();
  const auto end = paper.find("\n\\end{lstlisting}", body);
  return paper.substr(body, end - body);
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::IoError;
}

bool has_placeholder(const std::string& s) {
  for (PromptId id : kAllPrompts) {
    for (auto p : detail::required_slots(id)) {
      if (s.find(p) != std::string::npos) return true;
    }
  }
  return false;
}

}  // namespace

TEST(Prompts, DefaultsMatchListingsByteForByte) {
  const std::string paper = read_paper();
  ASSERT_FALSE(paper.empty());
  const std::pair<PromptId, const char*> table[] = {
      {PromptId::Judge, "prompt:judge"},
      {PromptId::FaithfulSummary, "prompt:good_summ"},
      {PromptId::InjectPredicate, "prompt:direct1"},
      {PromptId::InjectEntity, "prompt:direct2"},
      {PromptId::InjectCircumstantial, "prompt:direct3"},
      {PromptId::InjectLinking, "prompt:direct4"},
      {PromptId::InjectOutOfContext, "prompt:direct5"},
      {PromptId::CorruptArticle, "prompt:corrupt_article"},
      {PromptId::XnliQuery, "prompt:ask_xnli"},
  };
  for (const auto& [id, label] : table) {
    const std::string expected = listing(paper, label);
    ASSERT_FALSE(expected.empty()) << label;
    EXPECT_EQ(std::string(detail::default_template(id)), expected) << label;
  }
}

TEST(Prompts, TyposKeptVerbatim) {
  EXPECT_NE(detail::kInjectPredicateTemplate.find("the orignal one"), std::string_view::npos);
  EXPECT_NE(detail::kInjectLinkingTemplate.find("analyze the sencence"), std::string_view::npos);
  EXPECT_NE(detail::kCorruptArticleTemplate.find("contraddicting instructions"),
            std::string_view::npos);
  EXPECT_NE(detail::kCorruptArticleTemplate.find("new instrcutions"), std::string_view::npos);
  EXPECT_NE(detail::kXnliTemplate.find("<replace hypthesis here>"), std::string_view::npos);
}

TEST(Prompts, NliTargetsMatchAcceptedJudgmentListing) {
  const std::string body = listing(read_paper(), "prompt:tell_xnli");
  for (NliLabel l : {NliLabel::Entailment, NliLabel::Contradiction, NliLabel::Neutral}) {
    EXPECT_NE(body.find("\"" + std::string(nli_target(l)) + "\""), std::string::npos);
    EXPECT_TRUE(is_nli_target(nli_target(l)));
  }
  const auto& p = PromptSet::defaults();
  EXPECT_EQ(p.render_xnli("p", "h", "entailment").target, "The premise implies the hypothesis");
  EXPECT_EQ(p.render_xnli("p", "h", "Contradiction").target,
            "The premise contradicts the hypothesis");
  EXPECT_EQ(p.render_xnli("p", "h", "neutral").target,
            "The premise neither implies nor contradicts the hypothesis");
  EXPECT_EQ(code_of([&] { p.render_xnli("p", "h", "maybe"); }), ErrorCode::UnknownLabel);
}

TEST(Prompts, RenderedOutputHasNoUnfilledSlot) {
  const auto& p = PromptSet::defaults();
  Document d;
  d.id = "x";
  d.title = "How to Bake";
  d.body = "Preheat the oven. Mix the dough.";
  EXPECT_FALSE(has_placeholder(p.render_judge(d.body, "Preheat the oven.")));
  EXPECT_FALSE(has_placeholder(p.render_faithful_summary(d.body)));
  const std::string corrupt = p.render_corrupt_article(d);
  EXPECT_FALSE(has_placeholder(corrupt));
  EXPECT_NE(corrupt.find("titled \"How to Bake\""), std::string::npos);
  for (auto t : kAllInjectable) {
    const std::string r = p.render_injector(t, "Mix the dough.", d.body);
    EXPECT_FALSE(has_placeholder(r));
    EXPECT_NE(r.find("Sentence:\nMix the dough.\n\nSource text:\n" + d.body), std::string::npos);
  }
  EXPECT_FALSE(has_placeholder(p.render_xnli("a", "b", "neutral").prompt));
  EXPECT_FALSE(has_placeholder(p.render_translate("Bonjour.")));
}

TEST(Prompts, JudgeRenderIsExactSubstitution) {
  const std::string r = PromptSet::defaults().render_judge("DOC", "STMT");
  std::string expected(detail::kJudgeTemplate);
  expected.replace(expected.find("<replace text here>"), 19, "DOC");
  expected.replace(expected.find("<replace statement here>"), 24, "STMT");
  EXPECT_EQ(r, expected);
}

TEST(Prompts, InputsContainingSlotSpellingsAreNotRescanned) {
  const std::string doc = "body with <replace statement here> inside";
  const std::string r = PromptSet::defaults().render_judge(doc, "S");
  EXPECT_NE(r.find(doc), std::string::npos);
  EXPECT_NE(r.find("Statement:\nS"), std::string::npos);
}

TEST(Prompts, EmptyInputsRejected) {
  const auto& p = PromptSet::defaults();
  EXPECT_EQ(code_of([&] { p.render_judge(" ", "s"); }), ErrorCode::EmptyInput);
  EXPECT_EQ(code_of([&] { p.render_judge("d", ""); }), ErrorCode::EmptyInput);
  EXPECT_EQ(code_of([&] { p.render_faithful_summary("\n"); }), ErrorCode::EmptyInput);
}

TEST(Prompts, SaveLoadRoundTripAndChecksums) {
  TempDir dir;
  PromptSet::defaults().save(dir.path());
  const PromptSet loaded = PromptSet::load(dir.path());
  for (PromptId id : kAllPrompts) {
    EXPECT_TRUE(loaded.is_default(id));
    EXPECT_EQ(loaded.checksum(id), detail::hex64(fnv1a64(detail::default_template(id))));
  }
  {
    std::ofstream out(dir / "faithful_summary.txt", std::ios::binary);
    out << "Summarize briefly:\n<replace article here>";
  }
  const PromptSet custom = PromptSet::load(dir.path());
  EXPECT_FALSE(custom.is_default(PromptId::FaithfulSummary));
  EXPECT_NE(custom.checksum(PromptId::FaithfulSummary),
            loaded.checksum(PromptId::FaithfulSummary));
  EXPECT_EQ(custom.render_faithful_summary("A."), "Summarize briefly:\nA.");
  {
    std::ofstream out(dir / "judge.txt", std::ios::binary);
    out << "missing slots";
  }
  EXPECT_EQ(code_of([&] { PromptSet::load(dir.path()); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([&] { PromptSet::load(dir / "nope"); }), ErrorCode::FileNotFound);
}

TEST(Prompts, ShippedAssetDirectoryMatchesDefaults) {
  const PromptSet shipped = PromptSet::load(stemf::testing::source_dir() / "prompts");
  for (PromptId id : kAllPrompts) EXPECT_TRUE(shipped.is_default(id)) << to_string(id);
}
