#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "stemf/loop.hpp"
#include "stemf/mock_backend.hpp"
#include "support.hpp"

using namespace stemf;
using stemf::testing::TempDir;
namespace support = stemf::testing;

namespace {

class Loop : public ::testing::Test {
 protected:
  void SetUp() override { log::Sink::instance().set_stream(nullptr); }
  void TearDown() override {
    log::Sink::instance().set_stream(&std::cerr);
    unsetenv("STUB_TRAINER_EXIT");
  }
};

LoopEnvironment environment(ChatBackend& backend, const fs::path& run_dir) {
  LoopEnvironment env;
  env.backend = &backend;
  env.auxiliary = {"", "aux", ModelRole::Auxiliary};
  env.initial_evaluator = {"", "base-evaluator", ModelRole::Evaluator};
  env.trainer.command = support::stub_trainer_command();
  env.trainer.env_passthrough = {"STUB_TRAINER_EXIT"};
  env.run_dir = run_dir;
  env.synthesis.seed = 1;
  return env;
}

JudgmentDataset small_judgments() {
  JudgmentDataset ds;
  ds.iteration = 2;
  for (int i = 0; i < 6; ++i) {
    const bool faithful = i % 2 == 0;
    SentenceTriplet t("d" + std::to_string(i % 2), "S" + std::to_string(i) + ".",
                      faithful ? FaithfulnessLabel::Faithful : FaithfulnessLabel::Unfaithful,
                      Provenance{});
    ds.records.emplace_back(
        t, Judgment("reason " + std::to_string(i), faithful ? ErrorCategory::NoError : ErrorCategory::Entity),
        1);
  }
  return ds;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

}  // namespace

TEST_F(Loop, SftExamplesRenderJudgePromptAndCanonicalJudgment) {
  const auto judgments = small_judgments();
  const DocumentTexts texts = {{"d0", "Doc zero."}, {"d1", "Doc one."}};
  const auto sft = build_sft_dataset(judgments, texts, nullptr, 4);
  ASSERT_EQ(sft.size(), 6u);
  std::set<std::string> expected_users;
  for (const auto& r : judgments.records) {
    expected_users.insert(PromptSet::defaults().render_judge(texts.at(r.triplet().document_id()),
                                                             r.triplet().sentence()));
  }
  for (const auto& e : sft) {
    EXPECT_TRUE(expected_users.contains(e.user));
    EXPECT_EQ(serialize_judgment(parse_judgment(e.assistant)), e.assistant);
  }
  EXPECT_EQ(build_sft_dataset(judgments, texts, nullptr, 4), sft);
  EXPECT_THROW(build_sft_dataset(JudgmentDataset{}, texts, nullptr, 4), Error);
}

TEST_F(Loop, SftAppendsXnliExamples) {
  const auto judgments = small_judgments();
  const DocumentTexts texts = {{"d0", "Doc zero."}, {"d1", "Doc one."}};
  const std::vector<NliPrompt> xnli = {
      PromptSet::defaults().render_xnli("p1", "h1", "entailment"),
      PromptSet::defaults().render_xnli("p2", "h2", "neutral")};
  const auto sft = build_sft_dataset(judgments, texts, &xnli, 4);
  ASSERT_EQ(sft.size(), 8u);
  int nli = 0;
  for (const auto& e : sft) {
    if (is_nli_target(e.assistant)) {
      ++nli;
    } else {
      EXPECT_NO_THROW(parse_judgment(e.assistant));
    }
  }
  EXPECT_EQ(nli, 2);
}

TEST_F(Loop, SftFileRoundTrip) {
  TempDir dir;
  const std::vector<SftExample> sft = {{"u1", "a1"}, {"u\n2", "a \"2\""}};
  write_sft_dataset(dir / "sft.jsonl", sft);
  EXPECT_EQ(read_sft_dataset(dir / "sft.jsonl"), sft);
  const auto row = nlohmann::json::parse(io::read_file(dir / "sft.jsonl").substr(0, io::read_file(dir / "sft.jsonl").find('\n')));
  EXPECT_EQ(row["messages"][0]["role"], "user");
  EXPECT_EQ(row["messages"][1]["role"], "assistant");
}

TEST_F(Loop, CentralLayerRanges) {
  EXPECT_EQ(central_layer_range(28, 0.25), (LayerRange{7, 21}));
  EXPECT_EQ(central_layer_range(42, 0.25), (LayerRange{10, 32}));
  EXPECT_EQ(central_layer_range(4, 0.25), (LayerRange{1, 3}));
  for (auto [total, fraction] : {std::pair{2, 0.25}, std::pair{3, 0.25}}) {
    try {
      central_layer_range(total, fraction);
      FAIL() << total;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateRange);
    }
  }
  EXPECT_THROW(central_layer_range(28, 0.5), Error);
  EXPECT_THROW(central_layer_range(28, 0.0), Error);
  // Brute-force oracle: count frozen layers one by one.
  for (int total = 4; total <= 128; ++total) {
    for (double f : {0.1, 0.2, 0.25, 0.3, 0.4}) {
      int frozen = 0;
      while ((frozen + 1) <= f * total + 1e-9) ++frozen;
      if (total - 2 * frozen < 1) continue;
      const auto r = central_layer_range(total, f);
      EXPECT_EQ(r.first, frozen);
      EXPECT_EQ(r.size(), total - 2 * frozen);
    }
  }
}

TEST_F(Loop, TrainerCommandRenderingQuotesValues) {
  TrainerJob job{"/data/my sft.jsonl", "org/model's", "/out", LayerRange{7, 21}};
  EXPECT_EQ(render_trainer_command("train {dataset} {base_model} {output_dir} {trainable_layers}", job),
            "train '/data/my sft.jsonl' 'org/model'\\''s' '/out' '7:21'");
  job.layers.reset();
  EXPECT_EQ(render_trainer_command("x {trainable_layers}", job), "x 'all'");
  TrainerJob tricky{"{base_model}", "b", "o", std::nullopt};
  EXPECT_EQ(render_trainer_command("{dataset} {base_model}", tricky), "'{base_model}' 'b'");
}

TEST_F(Loop, TrainerInvocationValidation) {
  TrainerInvocation t;
  EXPECT_THROW(t.validate(false), Error);
  t.command = "train {dataset} {base_model}";
  EXPECT_THROW(t.validate(false), Error);
  t.command += " {output_dir}";
  EXPECT_NO_THROW(t.validate(false));
  EXPECT_THROW(t.validate(true), Error);
  t.command += " {trainable_layers}";
  EXPECT_THROW(t.validate(true), Error);
  t.model_layers = 28;
  EXPECT_NO_THROW(t.validate(true));
  t.model_layers = 2;
  EXPECT_THROW(t.validate(true), Error);
}

TEST_F(Loop, RunTrainerReadsModelJson) {
  TempDir dir;
  {
    std::ofstream(dir / "sft.jsonl") << "{}\n{}\n";
  }
  TrainerInvocation inv;
  inv.command = support::stub_trainer_command();
  const TrainerJob job{dir / "sft.jsonl", "base", dir / "out", LayerRange{1, 3}};
  const auto r = run_trainer(inv, job, {"http://x", "prev", ModelRole::Evaluator}, dir.path());
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.model.model_name.rfind("base+sft-", 0), 0u);
  EXPECT_EQ(r.model.endpoint, "http://x");
  const auto produced = io::read_json(dir / "out" / "model.json");
  EXPECT_EQ(produced["examples"], 2);
  EXPECT_EQ(produced["trainable_layers"], "1:3");
  EXPECT_TRUE(fs::exists(dir / "trainer.stdout.log"));
}

TEST_F(Loop, RunTrainerFallsBackToOutputDir) {
  TempDir dir;
  TrainerInvocation inv;
  inv.command = "true {dataset} {base_model} {output_dir}";
  const TrainerJob job{dir / "sft.jsonl", "base", dir / "out", std::nullopt};
  const auto r = run_trainer(inv, job, {"", "prev", ModelRole::Evaluator}, dir.path());
  EXPECT_EQ(r.model.model_name, fs::absolute(dir / "out").string());
}

TEST_F(Loop, RunTrainerFailureAndTimeout) {
  TempDir dir;
  TrainerInvocation inv;
  inv.command = "echo broken >&2; exit 3 # {dataset} {base_model} {output_dir}";
  const TrainerJob job{dir / "sft.jsonl", "base", dir / "out", std::nullopt};
  try {
    run_trainer(inv, job, {}, dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainerFailed);
    EXPECT_NE(std::string(e.what()).find("status 3"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("broken"), std::string::npos);
  }
  inv.command = "sleep 30 # {dataset} {base_model} {output_dir}";
  inv.timeout = std::chrono::seconds(1);
  const auto start = std::chrono::steady_clock::now();
  try {
    run_trainer(inv, job, {}, dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainerFailed);
    EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos);
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));
}

TEST_F(Loop, TwoIterationRunProducesChainAndArtifacts) {
  TempDir dir;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en", "fr"}, 8));
  auto config = support::loop_config({"en", "fr"}, 6, Strategy::Indirect, 5);
  config.iterations = 2;
  SimulatedModel model;
  CountingBackend counting(model);
  const auto env = environment(counting, dir / "run");
  const auto manifest = run_loop(corpus, config, env);
  ASSERT_EQ(manifest.model_chain.size(), 3u);
  EXPECT_EQ(manifest.model_chain[0].model_name, "base-evaluator");
  EXPECT_NE(manifest.model_chain[1].model_name, manifest.model_chain[2].model_name);
  ASSERT_EQ(manifest.iterations.size(), 2u);
  for (const auto& s : manifest.iterations) {
    const fs::path it = dir / "run" / s.dir;
    for (const char* name : {artifact::kBatch, artifact::kSentences, artifact::kJudgments,
                             artifact::kRejected, artifact::kStats, artifact::kSft,
                             artifact::kState}) {
      EXPECT_TRUE(fs::exists(it / name)) << name;
    }
    EXPECT_EQ(s.batch_size, 6u);
    EXPECT_EQ(s.sft_size, line_count(it / artifact::kJudgments));
    EXPECT_EQ(s.sft_size, s.stats.accepted);
  }
  EXPECT_EQ(manifest.iterations[1].evaluator, manifest.iterations[0].next_evaluator);
  const auto m = io::read_json(dir / "run" / artifact::kManifest);
  EXPECT_EQ(m["model_chain"].size(), 3u);
  EXPECT_EQ(m["synthesis_cache"], "cache/synthesis_indirect.jsonl");
  EXPECT_EQ(m["prompt_checksums"]["judge"], PromptSet::defaults().checksum(PromptId::Judge));

  auto resumed_env = env;
  resumed_env.resume = true;
  CountingBackend again(model);
  resumed_env.backend = &again;
  const auto resumed = run_loop(corpus, config, resumed_env);
  EXPECT_EQ(again.calls(), 0);
  EXPECT_EQ(resumed.model_chain, manifest.model_chain);
}

TEST_F(Loop, RunsAreByteIdentical) {
  TempDir a, b;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en", "de"}, 6));
  auto config = support::loop_config({"en", "de"}, 4, Strategy::Direct, 9);
  config.iterations = 1;
  for (TempDir* d : {&a, &b}) {
    SimulatedModel model(JudgePolicy::biased(0.7), 2);
    auto env = environment(model, d->path());
    env.judge.max_in_flight = d == &a ? 1 : 8;
    run_loop(corpus, config, env);
  }
  for (const char* name : {artifact::kBatch, artifact::kSentences, artifact::kJudgments,
                           artifact::kSft, artifact::kState}) {
    EXPECT_EQ(io::read_file(a / "iter_001" / name), io::read_file(b / "iter_001" / name)) << name;
  }
  EXPECT_EQ(io::read_file(a / "manifest.json"), io::read_file(b / "manifest.json"));
}

TEST_F(Loop, TrainerFailurePreservesArtifactsAndResumeSkipsToTraining) {
  TempDir dir;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en"}, 6));
  auto config = support::loop_config({"en"}, 4);
  config.iterations = 1;
  SimulatedModel model;
  auto env = environment(model, dir.path());
  setenv("STUB_TRAINER_EXIT", "7", 1);
  try {
    run_loop(corpus, config, env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainerFailed);
  }
  EXPECT_TRUE(fs::exists(dir / "iter_001" / artifact::kSft));
  EXPECT_FALSE(fs::exists(dir / "iter_001" / artifact::kState));
  unsetenv("STUB_TRAINER_EXIT");
  CountingBackend counting(model);
  env.backend = &counting;
  env.resume = true;
  const auto manifest = run_loop(corpus, config, env);
  EXPECT_EQ(counting.calls(), 0);
  EXPECT_EQ(manifest.model_chain.size(), 2u);
}

TEST_F(Loop, StagesRequireEarlierArtifacts) {
  TempDir dir;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en"}, 6));
  auto config = support::loop_config({"en"}, 4);
  SimulatedModel model;
  const auto env = environment(model, dir.path());
  LoopResources resources;
  resources.cache_path = cache_path_for(env.run_dir, config.strategy);
  IterationState state;
  state.evaluator = env.initial_evaluator;
  EXPECT_THROW(run_iteration(state, corpus, config, env, resources, Stage::Judge, Stage::Judge),
               Error);
  run_iteration(state, corpus, config, env, resources, Stage::Synthesize, Stage::Synthesize);
  EXPECT_FALSE(fs::exists(dir / "iter_001" / artifact::kJudgments));
  const auto judged =
      run_iteration(state, corpus, config, env, resources, Stage::Judge, Stage::Judge);
  EXPECT_TRUE(fs::exists(dir / "iter_001" / artifact::kJudgments));
  EXPECT_GT(judged.stats.accepted, 0u);
}

TEST_F(Loop, CentralLayersReachTrainer) {
  TempDir dir;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en"}, 6));
  auto config = support::loop_config({"en"}, 4);
  config.iterations = 1;
  config.central_layers = true;
  SimulatedModel model;
  auto env = environment(model, dir.path());
  env.trainer.model_layers = 28;
  const auto manifest = run_loop(corpus, config, env);
  EXPECT_EQ(manifest.iterations[0].layers, (LayerRange{7, 21}));
  EXPECT_EQ(io::read_json(dir / "iter_001" / "trainer" / "model.json")["trainable_layers"], "7:21");
}

TEST_F(Loop, CumulativeModeTrainsFromPreviousEvaluator) {
  TempDir dir;
  const Corpus corpus = Corpus::from_documents(support::synthetic_corpus({"en"}, 6));
  auto config = support::loop_config({"en"}, 4);
  config.iterations = 2;
  SimulatedModel model;
  auto env = environment(model, dir.path());
  env.trainer.cumulative = true;
  const auto manifest = run_loop(corpus, config, env);
  const std::string second = manifest.model_chain[2].model_name;
  EXPECT_EQ(second.rfind(manifest.model_chain[1].model_name + "+sft-", 0), 0u);

  TempDir refit_dir;
  auto refit_env = environment(model, refit_dir.path());
  const auto refit = run_loop(corpus, config, refit_env);
  EXPECT_EQ(refit.model_chain[2].model_name.rfind("base-evaluator+sft-", 0), 0u);
}
