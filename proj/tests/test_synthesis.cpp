#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "stemf/mock_backend.hpp"
#include "stemf/synthesis.hpp"
#include "support.hpp"

using namespace stemf;
using stemf::testing::TempDir;
namespace support = stemf::testing;

namespace {

const ModelRef kAux{"", "aux", ModelRole::Auxiliary};

class QuietLogs : public ::testing::Test {
 protected:
  void SetUp() override { log::Sink::instance().set_stream(nullptr); }
  void TearDown() override { log::Sink::instance().set_stream(&std::cerr); }
};

Document doc(std::string id, std::string lang = "en") {
  Document d;
  d.id = std::move(id);
  d.language = LanguageCode::parse(lang);
  d.title = "T";
  d.body = "First step. Second step. Third step. Fourth step.";
  return d;
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

}  // namespace

using Synthesis = QuietLogs;

TEST_F(Synthesis, QuotasSplitEquallyWithRemainderInOrder) {
  EXPECT_EQ(language_quotas(1000, 5), (std::vector<std::size_t>(5, 200)));
  EXPECT_EQ(language_quotas(10, 2), (std::vector<std::size_t>{5, 5}));
  EXPECT_EQ(language_quotas(11, 3), (std::vector<std::size_t>{4, 4, 3}));
}

TEST_F(Synthesis, SelectionIsPerLanguageDistinctAndSeeded) {
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en", "fr"}, 20));
  auto cfg = support::loop_config({"en", "fr"}, 10, Strategy::Indirect, 3);
  const auto a = select_documents(corpus, cfg, 1);
  ASSERT_EQ(a.documents.size(), 10u);
  std::map<std::string, int> per;
  std::set<std::string> ids;
  for (const auto& d : a.documents) {
    ++per[d.language.str()];
    ids.insert(d.id);
  }
  EXPECT_EQ(per["en"], 5);
  EXPECT_EQ(per["fr"], 5);
  EXPECT_EQ(ids.size(), 10u);
  const auto again = select_documents(corpus, cfg, 1);
  const auto next = select_documents(corpus, cfg, 2);
  std::vector<std::string> ia, ib, in;
  for (const auto& d : a.documents) ia.push_back(d.id);
  for (const auto& d : again.documents) ib.push_back(d.id);
  for (const auto& d : next.documents) in.push_back(d.id);
  EXPECT_EQ(ia, ib);
  EXPECT_NE(ia, in);
}

TEST_F(Synthesis, InsufficientCorpusNamesLanguage) {
  auto docs = support::synthetic_corpus({"en"}, 10);
  auto fr = support::synthetic_corpus({"fr"}, 3);
  docs.insert(docs.end(), fr.begin(), fr.end());
  const Corpus corpus = Corpus::from_documents(docs);
  try {
    select_documents(corpus, support::loop_config({"en", "fr"}, 10), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientCorpus);
    EXPECT_NE(std::string(e.what()).find("fr"), std::string::npos);
  }
}

TEST_F(Synthesis, CorpusRejectsDuplicates) {
  EXPECT_EQ(code_of([] { Corpus::from_documents({doc("a"), doc("a")}); }),
            ErrorCode::MalformedRow);
}

TEST_F(Synthesis, FaithfulSummaryFromScript) {
  ScriptedBackend script;
  script.add("faithful/d1", {"### A.\n### B."});
  Synthesizer syn(script, kAux, PromptSet::defaults());
  EXPECT_EQ(syn.generate_faithful(doc("d1")).sentences, (std::vector<std::string>{"A.", "B."}));
}

TEST_F(Synthesis, FaithfulRetriesThenFails) {
  ScriptedBackend script;
  script.add("faithful/d1", {"junk", "junk", "### Third time."});
  script.add("faithful/d2", {"junk", "junk", "junk"});
  Synthesizer syn(script, kAux, PromptSet::defaults());
  EXPECT_EQ(syn.generate_faithful(doc("d1")).sentences.size(), 1u);
  EXPECT_EQ(code_of([&] { syn.generate_faithful(doc("d2")); }), ErrorCode::SynthesisFailed);
}

TEST_F(Synthesis, IndirectPairsCorruptSummaryWithOriginal) {
  ScriptedBackend script;
  script.add("faithful/d", {"### F1.\n### F2.\n### F3."});
  script.add("corrupt_article/d", {"A contradicting article."});
  script.add("corrupt_summary/d", {"### X.\n### Y."});
  Synthesizer syn(script, kAux, PromptSet::defaults());
  const auto s = syn.synthesize_document(doc("d"), Strategy::Indirect);
  EXPECT_EQ(s.corrupted_document, "A contradicting article.");
  const auto triplets = triplets_for(s);
  ASSERT_EQ(triplets.size(), 5u);
  int faithful = 0;
  for (const auto& t : triplets) {
    EXPECT_EQ(t.document_id(), "d");
    EXPECT_EQ(t.provenance().strategy, Strategy::Indirect);
    EXPECT_FALSE(t.provenance().injected_error.has_value());
    faithful += t.label() == FaithfulnessLabel::Faithful;
  }
  EXPECT_EQ(faithful, 3);
  EXPECT_EQ(triplets[3].sentence(), "X.");
  EXPECT_EQ(triplets[4].sentence(), "Y.");
  EXPECT_EQ(triplets[4].label(), FaithfulnessLabel::Unfaithful);
}

TEST_F(Synthesis, EmptyCorruptedDocumentSkipsAfterRetries) {
  ScriptedBackend script;
  script.add("faithful/d", {"### F."});
  script.add("corrupt_article/d", {"  ", "", "\n"});
  Synthesizer syn(script, kAux, PromptSet::defaults());
  EXPECT_EQ(code_of([&] { syn.synthesize_document(doc("d"), Strategy::Indirect); }),
            ErrorCode::SynthesisFailed);
}

TEST_F(Synthesis, DirectDropsOnlyUnparseableSentence) {
  ScriptedBackend script;
  script.add("inject/d/0", {"### Strategy: s\n### Changed zero."});
  script.add("inject/d/1", {"### Strategy: nothing else"});
  script.add("inject/d/2", {"### Changed two."});
  Synthesizer syn(script, kAux, PromptSet::defaults(), SynthesisOptions{.seed = 11});
  std::vector<std::string> dropped;
  const auto out = syn.corrupt_direct(doc("d"), SummarySentences{{"S0.", "S1.", "S2."}}, &dropped);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].sentence, "Changed zero.");
  EXPECT_EQ(out[0].source_index, 0);
  EXPECT_EQ(out[1].source_index, 2);
  EXPECT_EQ(out[0].injected_error, draw_error_type(11, "d", 0));
  EXPECT_EQ(dropped.size(), 1u);
  EXPECT_EQ(code_of([&] { syn.corrupt_direct(doc("d"), SummarySentences{}); }),
            ErrorCode::EmptyInput);
}

TEST_F(Synthesis, DirectUsesMatchingInjectorPrompt) {
  std::vector<std::pair<std::string, std::string>> seen;
  std::mutex mu;
  FunctionBackend capture([&](const ModelRef&, const ChatRequest& r) {
    std::lock_guard lock(mu);
    seen.emplace_back(r.meta_or("template"), r.messages[0].content);
    return ChatResponse{"### Changed.", "stop", {}, r.id};
  });
  Synthesizer syn(capture, kAux, PromptSet::defaults(), SynthesisOptions{.seed = 4});
  SummarySentences faithful;
  for (int i = 0; i < 20; ++i) faithful.sentences.push_back("S" + std::to_string(i) + ".");
  const auto out = syn.corrupt_direct(doc("d"), faithful);
  ASSERT_EQ(out.size(), 20u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto type = *out[k].injected_error;
    EXPECT_EQ(seen[k].first, to_string(injector_prompt(type)));
    EXPECT_EQ(seen[k].second,
              PromptSet::defaults().render_injector(type, faithful.sentences[k], doc("d").body));
  }
}

TEST_F(Synthesis, ErrorTypeDrawIsUniformWithinThreeSigma) {
  const std::size_t n = 10000;
  std::map<InjectableErrorType, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    ++counts[draw_error_type(99, "doc" + std::to_string(i / 4), i % 4)];
  }
  const double sigma = std::sqrt(0.2 * 0.8 / n);
  for (auto t : kAllInjectable) {
    EXPECT_NEAR(counts[t] / static_cast<double>(n), 0.2, 3 * sigma) << to_string(t);
  }
}

TEST_F(Synthesis, SkipBudgetAndCache) {
  const auto docs = support::synthetic_corpus({"en"}, 10);
  DocumentBatch batch{docs, 1};
  ScriptedBackend script;
  script.add_prefix("faithful/", {"### F."});
  script.add_prefix("corrupt_article/", {"bad article"});
  script.add_prefix("corrupt_summary/", {"### C."});
  script.add("faithful/en-3", {"junk"});
  CountingBackend counting(script);
  Synthesizer syn(counting, kAux, PromptSet::defaults(),
                  SynthesisOptions{.max_in_flight = 4, .generation_attempts = 1});
  SynthesisCache cache;
  SynthesisReport report;
  const auto ds = build_sentence_dataset(batch, Strategy::Indirect, syn, cache, &report);
  EXPECT_EQ(report.skipped.size(), 1u);
  EXPECT_EQ(ds.triplets.size(), 18u);
  EXPECT_EQ(cache.size(), 9u);

  TempDir dir;
  cache.save(dir / "cache.jsonl");
  SynthesisCache reloaded = SynthesisCache::load(dir / "cache.jsonl");
  EXPECT_EQ(reloaded.size(), 9u);
  const long long before = counting.calls();
  SynthesisReport second;
  const auto again = build_sentence_dataset(batch, Strategy::Indirect, syn, reloaded, &second);
  EXPECT_EQ(second.cache_hits, 9u);
  EXPECT_EQ(counting.calls() - before, 1);  // only the failed document is retried
  ASSERT_EQ(again.triplets.size(), ds.triplets.size());
  for (std::size_t i = 0; i < ds.triplets.size(); ++i) {
    EXPECT_EQ(io::to_json(again.triplets[i]), io::to_json(ds.triplets[i]));
  }

  script.add("faithful/en-4", {"junk"});
  script.add("faithful/en-5", {"junk"});
  SynthesisCache empty;
  EXPECT_EQ(code_of([&] { build_sentence_dataset(batch, Strategy::Indirect, syn, empty); }),
            ErrorCode::SynthesisFailed);
}

TEST_F(Synthesis, DatasetIsIdenticalAcrossConcurrency) {
  const auto docs = support::synthetic_corpus({"en", "de"}, 6);
  DocumentBatch batch{docs, 1};
  std::string dumps[2];
  for (int run = 0; run < 2; ++run) {
    SimulatedModel model;
    Synthesizer syn(model, kAux, PromptSet::defaults(),
                    SynthesisOptions{.max_in_flight = run == 0 ? 1u : 8u, .seed = 5});
    SynthesisCache cache;
    const auto ds = build_sentence_dataset(batch, Strategy::Direct, syn, cache);
    for (const auto& t : ds.triplets) dumps[run] += io::dump(io::to_json(t)) + "\n";
  }
  EXPECT_FALSE(dumps[0].empty());
  EXPECT_EQ(dumps[0], dumps[1]);
}

TEST_F(Synthesis, HumanMixReplacesFractionPreservingSize) {
  SentenceDataset ds;
  for (int i = 0; i < 100; ++i) {
    ds.triplets.emplace_back("d", "s" + std::to_string(i), FaithfulnessLabel::Faithful,
                             Provenance{Strategy::Indirect, std::nullopt, 0});
  }
  std::vector<SentenceTriplet> human;
  for (int i = 0; i < 60; ++i) {
    human.emplace_back("h", "h" + std::to_string(i), FaithfulnessLabel::Unfaithful,
                       Provenance{Strategy::Human, std::nullopt, 0});
  }
  const auto mixed = mix_human_labels(ds, human, 0.5, 1);
  ASSERT_EQ(mixed.triplets.size(), 100u);
  int h = 0;
  for (const auto& t : mixed.triplets) h += t.provenance().strategy == Strategy::Human;
  EXPECT_EQ(h, 50);
  EXPECT_EQ(code_of([&] { mix_human_labels(ds, {human.begin(), human.begin() + 10}, 0.5, 1); }),
            ErrorCode::InsufficientHumanData);
  std::vector<SentenceTriplet> many(human);
  many.insert(many.end(), human.begin(), human.end());
  const auto full = mix_human_labels(ds, many, 1.0, 1);
  for (const auto& t : full.triplets) EXPECT_EQ(t.provenance().strategy, Strategy::Human);
  EXPECT_THROW(mix_human_labels(ds, human, 0.0, 1), Error);
}

TEST_F(Synthesis, XnliLoadingShufflesCountsAndSkips) {
  TempDir dir;
  {
    std::ofstream out(dir / "xnli.jsonl");
    for (int i = 0; i < 50; ++i) {
      const char* labels[] = {"entailment", "contradiction", "neutral"};
      out << nlohmann::json{{"premise", "p" + std::to_string(i)},
                            {"hypothesis", "h"},
                            {"label", labels[i % 3]},
                            {"language", "fr"}}
                 .dump()
          << "\n";
    }
    out << R"({"premise": "p", "hypothesis": "h", "label": "maybe", "language": "fr"})" << "\n";
    out << "not json\n";
    out << R"({"premise": "p", "hypothesis": "h", "label": 0, "language": "fr"})" << "\n";
  }
  const auto all = load_xnli(dir / "xnli.jsonl", 1000, 1);
  EXPECT_EQ(all.size(), 51u);
  const auto some = load_xnli(dir / "xnli.jsonl", 20, 1);
  EXPECT_EQ(some.size(), 20u);
  EXPECT_EQ(load_xnli(dir / "xnli.jsonl", 20, 1)[0].prompt, some[0].prompt);
  EXPECT_TRUE(load_xnli(dir / "xnli.jsonl", 0, 1).empty());
  for (const auto& p : all) EXPECT_TRUE(is_nli_target(p.target));
  EXPECT_EQ(code_of([&] { load_xnli(dir / "missing.jsonl", 1, 1); }), ErrorCode::FileNotFound);
}

TEST_F(Synthesis, SampleCorpusLoads) {
  const Corpus c = Corpus::load({support::source_dir() / "data" / "corpus_sample.jsonl"});
  EXPECT_EQ(c.size(), 9u);
  EXPECT_EQ(c.count(LanguageCode::parse("fr")), 3u);
}
