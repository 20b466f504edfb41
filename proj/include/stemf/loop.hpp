#pragma once

#include <spawn.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stemf/backend.hpp"
#include "stemf/core.hpp"
#include "stemf/io.hpp"
#include "stemf/judging.hpp"
#include "stemf/log.hpp"
#include "stemf/prompts.hpp"
#include "stemf/random.hpp"
#include "stemf/synthesis.hpp"
#include "stemf/textproc.hpp"

namespace stemf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Step 3: fine-tuning data
// ---------------------------------------------------------------------------

struct SftExample {
  std::string user;
  std::string assistant;

  friend bool operator==(const SftExample&, const SftExample&) = default;
};

inline io::ordered_json to_json(const SftExample& e) {
  io::ordered_json j;
  j["messages"] = io::ordered_json::array(
      {io::ordered_json{{"role", "user"}, {"content", e.user}},
       io::ordered_json{{"role", "assistant"}, {"content", e.assistant}}});
  return j;
}

inline SftExample sft_example_from_json(const io::ordered_json& row) {
  const auto& messages = io::field(row, "messages");
  if (!messages.is_array() || messages.size() != 2) {
    throw Error(ErrorCode::MalformedRow, "messages must hold a user and an assistant turn");
  }
  if (io::string_field(messages[0], "role") != "user" ||
      io::string_field(messages[1], "role") != "assistant") {
    throw Error(ErrorCode::MalformedRow, "messages must be [user, assistant]");
  }
  return {io::string_field(messages[0], "content"), io::string_field(messages[1], "content")};
}

/// One example per accepted record, XNLI examples appended, then a seeded
/// shuffle of the whole list.
inline std::vector<SftExample> build_sft_dataset(const JudgmentDataset& judgments,
                                                 const DocumentTexts& documents,
                                                 const std::vector<NliPrompt>* xnli,
                                                 std::uint64_t seed,
                                                 const PromptSet& prompts = PromptSet::defaults()) {
  if (judgments.records.empty()) throw Error(ErrorCode::EmptyInput, "judgment dataset is empty");
  std::vector<SftExample> out;
  out.reserve(judgments.records.size() + (xnli ? xnli->size() : 0));
  for (const auto& r : judgments.records) {
    const auto it = documents.find(r.triplet().document_id());
    if (it == documents.end()) {
      throw Error(ErrorCode::InvalidArgument,
                  "no document text for '" + r.triplet().document_id() + "'");
    }
    out.push_back({prompts.render_judge(it->second, r.triplet().sentence()),
                   serialize_judgment(r.judgment())});
  }
  if (xnli) {
    for (const auto& x : *xnli) out.push_back({x.prompt, x.target});
  }
  Rng rng(mix_seed(seed, "sft", static_cast<std::uint64_t>(judgments.iteration)));
  rng.shuffle(out);
  return out;
}

inline void write_sft_dataset(const fs::path& path, const std::vector<SftExample>& examples) {
  std::vector<io::ordered_json> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) rows.push_back(to_json(e));
  io::write_jsonl(path, rows);
}

inline std::vector<SftExample> read_sft_dataset(const fs::path& path) {
  std::vector<SftExample> out;
  io::read_jsonl(path, [&](std::size_t, const io::ordered_json& row) {
    out.push_back(sft_example_from_json(row));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Central layers
// ---------------------------------------------------------------------------

struct LayerRange {
  int first = 0;
  int last = 0;  // exclusive

  int size() const { return last - first; }
  std::string str() const { return std::to_string(first) + ":" + std::to_string(last); }

  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// Freezes the first and last floor(fraction * total) layers.
inline LayerRange central_layer_range(int total_layers, double freeze_fraction) {
  if (!(freeze_fraction > 0.0 && freeze_fraction < 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "freeze_fraction must be in (0, 0.5)");
  }
  if (total_layers < 4) {
    throw Error(ErrorCode::DegenerateRange,
                "need at least 4 layers, got " + std::to_string(total_layers));
  }
  const int k = static_cast<int>(std::floor(freeze_fraction * total_layers + 1e-9));
  if (total_layers - 2 * k < 1) {
    throw Error(ErrorCode::DegenerateRange, "no trainable layers left");
  }
  return {k, total_layers - k};
}

// ---------------------------------------------------------------------------
// External trainer
// ---------------------------------------------------------------------------

namespace placeholder {
inline constexpr std::string_view kDataset = "{dataset}";
inline constexpr std::string_view kBaseModel = "{base_model}";
inline constexpr std::string_view kOutputDir = "{output_dir}";
inline constexpr std::string_view kTrainableLayers = "{trainable_layers}";
}  // namespace placeholder

struct TrainerInvocation {
  /// Shell command with {dataset}, {base_model}, {output_dir} and
  /// optionally {trainable_layers}.
  std::string command;
  std::chrono::seconds timeout{86400};
  /// Variables copied from the parent environment besides PATH and HOME.
  std::vector<std::string> env_passthrough;
  /// Layer count of the base model; required for central-layers mode.
  std::optional<int> model_layers;
  double freeze_fraction = 0.25;
  /// Continue from J_i instead of refitting the original base model.
  bool cumulative = false;
  /// Working directory of the trainer process; empty keeps the current one.
  fs::path working_dir;

  void validate(bool central_layers) const {
    if (detail::trim_view(command).empty()) {
      throw Error(ErrorCode::InvalidConfig, "trainer.command is empty");
    }
    for (auto p : {placeholder::kDataset, placeholder::kBaseModel, placeholder::kOutputDir}) {
      if (command.find(p) == std::string::npos) {
        throw Error(ErrorCode::InvalidConfig,
                    "trainer.command lacks placeholder " + std::string(p));
      }
    }
    if (timeout.count() <= 0) throw Error(ErrorCode::InvalidConfig, "trainer.timeout must be > 0");
    if (central_layers) {
      if (command.find(placeholder::kTrainableLayers) == std::string::npos) {
        throw Error(ErrorCode::InvalidConfig,
                    "central_layers requires {trainable_layers} in trainer.command");
      }
      if (!model_layers) {
        throw Error(ErrorCode::InvalidConfig, "central_layers requires trainer.model_layers");
      }
      central_layer_range(*model_layers, freeze_fraction);
    }
  }
};

struct TrainerJob {
  fs::path dataset;
  std::string base_model;
  fs::path output_dir;
  std::optional<LayerRange> layers;
};

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  out += "'";
  return out;
}

/// Substitutes every placeholder in one pass; values are shell-quoted.
/// {trainable_layers} becomes "first:last", or "all" without a range.
inline std::string render_trainer_command(std::string_view tmpl, const TrainerJob& job) {
  const std::pair<std::string_view, std::string> values[] = {
      {placeholder::kDataset, job.dataset.string()},
      {placeholder::kBaseModel, job.base_model},
      {placeholder::kOutputDir, job.output_dir.string()},
      {placeholder::kTrainableLayers, job.layers ? job.layers->str() : "all"},
  };
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool matched = false;
    for (const auto& [key, value] : values) {
      if (tmpl.substr(i, key.size()) == key) {
        out += shell_quote(value);
        i += key.size();
        matched = true;
        break;
      }
    }
    if (!matched) out += tmpl[i++];
  }
  return out;
}

struct TrainerResult {
  int exit_code = 0;
  ModelRef model;
  std::string command;
};

namespace detail {

inline std::string tail_of_file(const fs::path& path, std::size_t max_bytes) {
  std::string s;
  try {
    s = io::read_file(path);
  } catch (const Error&) {
    return "";
  }
  return s.size() <= max_bytes ? s : s.substr(s.size() - max_bytes);
}

inline std::vector<std::string> trainer_environment(const std::vector<std::string>& passthrough) {
  std::vector<std::string> names = {"PATH", "HOME"};
  names.insert(names.end(), passthrough.begin(), passthrough.end());
  std::vector<std::string> env;
  for (const auto& name : names) {
    if (const char* v = std::getenv(name.c_str())) env.push_back(name + "=" + v);
  }
  return env;
}

}  // namespace detail

/// Runs the trainer through /bin/sh in its own process group with stdout and
/// stderr captured under `log_dir`. The produced model is read from
/// `{output_dir}/model.json` ({model_name, endpoint?}); otherwise the output
/// directory itself names the model and the endpoint is inherited.
inline TrainerResult run_trainer(const TrainerInvocation& invocation, const TrainerJob& job,
                                 const ModelRef& previous, const fs::path& log_dir) {
  fs::create_directories(log_dir);
  fs::create_directories(job.output_dir);
  TrainerJob absolute = job;
  absolute.dataset = fs::absolute(job.dataset);
  absolute.output_dir = fs::absolute(job.output_dir);
  TrainerResult result;
  result.command = render_trainer_command(invocation.command, absolute);
  const fs::path out_log = log_dir / "trainer.stdout.log";
  const fs::path err_log = log_dir / "trainer.stderr.log";

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  const std::string out_path = fs::absolute(out_log).string();
  const std::string err_path = fs::absolute(err_log).string();
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_path.c_str(),
                                   O_WRONLY | O_CREAT | O_TRUNC, 0644);
  const std::string cwd =
      invocation.working_dir.empty() ? "" : fs::absolute(invocation.working_dir).string();
  if (!cwd.empty()) posix_spawn_file_actions_addchdir_np(&actions, cwd.c_str());
  posix_spawnattr_t attr;
  posix_spawnattr_init(&attr);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);

  const auto env_strings = detail::trainer_environment(invocation.env_passthrough);
  std::vector<char*> envp;
  for (const auto& e : env_strings) envp.push_back(const_cast<char*>(e.c_str()));
  envp.push_back(nullptr);
  std::string sh = "/bin/sh", dash_c = "-c";
  char* argv[] = {sh.data(), dash_c.data(), result.command.data(), nullptr};

  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, envp.data());
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) {
    throw Error(ErrorCode::TrainerFailed, "cannot launch trainer: " + std::string(strerror(rc)));
  }
  log::info("trainer_started", {{"command", result.command}, {"pid", pid}});

  const auto deadline = std::chrono::steady_clock::now() + invocation.timeout;
  int status = 0;
  for (;;) {
    const pid_t w = waitpid(pid, &status, WNOHANG);
    if (w == pid) break;
    if (w < 0 && errno != EINTR) {
      throw Error(ErrorCode::TrainerFailed, "waitpid failed: " + std::string(strerror(errno)));
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw Error(ErrorCode::TrainerFailed,
                  "trainer timed out after " + std::to_string(invocation.timeout.count()) + "s");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  if (result.exit_code != 0) {
    throw Error(ErrorCode::TrainerFailed, "trainer exited with status " +
                                              std::to_string(result.exit_code) + ": " +
                                              detail::tail_of_file(err_log, 2000));
  }

  result.model = previous;
  result.model.role = ModelRole::Evaluator;
  const fs::path model_file = job.output_dir / "model.json";
  if (fs::exists(model_file)) {
    const auto j = io::read_json(model_file);
    try {
      result.model.model_name = io::string_field(j, "model_name");
      if (j.contains("endpoint")) result.model.endpoint = io::string_field(j, "endpoint");
    } catch (const Error& e) {
      throw Error(ErrorCode::TrainerFailed, model_file.string() + ": " + e.what());
    }
  } else {
    result.model.model_name = absolute.output_dir.string();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Iterations
// ---------------------------------------------------------------------------

inline io::ordered_json to_json(const ModelRef& m) {
  io::ordered_json j;
  j["endpoint"] = m.endpoint;
  j["model_name"] = m.model_name;
  return j;
}

inline ModelRef model_ref_from_json(const io::ordered_json& j, ModelRole role) {
  return {j.value("endpoint", std::string()), io::string_field(j, "model_name"), role};
}

/// Artifact file names inside an iteration directory.
namespace artifact {
inline constexpr const char* kBatch = "batch.jsonl";
inline constexpr const char* kSentences = "sentences.jsonl";
inline constexpr const char* kJudgments = "judgments.jsonl";
inline constexpr const char* kRejected = "rejected.jsonl";
inline constexpr const char* kStats = "judgment_stats.json";
inline constexpr const char* kSft = "sft.jsonl";
inline constexpr const char* kTrainerDir = "trainer";
inline constexpr const char* kState = "state.json";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifact

inline std::string iteration_dir_name(int iteration) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "iter_%03d", iteration);
  return buf;
}

struct IterationState {
  int iteration = 1;
  ModelRef evaluator;       // J_i
  ModelRef next_evaluator;  // J_{i+1}
  fs::path dir;             // relative to the run directory
  std::size_t batch_size = 0;
  std::size_t sentence_count = 0;
  std::size_t sft_size = 0;
  std::size_t documents_skipped = 0;
  JudgmentStats stats;
  int trainer_exit_code = 0;
  std::optional<LayerRange> layers;
};

inline io::ordered_json to_json(const IterationState& s) {
  io::ordered_json j;
  j["iteration"] = s.iteration;
  j["evaluator"] = to_json(s.evaluator);
  j["next_evaluator"] = to_json(s.next_evaluator);
  j["dir"] = s.dir.generic_string();
  const auto rel = [&](const char* name) { return (s.dir / name).generic_string(); };
  j["artifacts"] = {{"batch", rel(artifact::kBatch)},         {"sentences", rel(artifact::kSentences)},
                    {"judgments", rel(artifact::kJudgments)}, {"rejected", rel(artifact::kRejected)},
                    {"stats", rel(artifact::kStats)},         {"sft", rel(artifact::kSft)},
                    {"trainer_output", rel(artifact::kTrainerDir)}};
  j["batch_size"] = s.batch_size;
  j["sentence_count"] = s.sentence_count;
  j["sft_size"] = s.sft_size;
  j["documents_skipped"] = s.documents_skipped;
  j["judgment_stats"] = to_json(s.stats);
  j["trainer_exit_code"] = s.trainer_exit_code;
  j["trainable_layers"] = s.layers ? io::ordered_json(s.layers->str()) : io::ordered_json("all");
  return j;
}

inline IterationState iteration_state_from_json(const io::ordered_json& j) {
  IterationState s;
  s.iteration = static_cast<int>(io::int_field(j, "iteration"));
  s.evaluator = model_ref_from_json(io::field(j, "evaluator"), ModelRole::Evaluator);
  s.next_evaluator = model_ref_from_json(io::field(j, "next_evaluator"), ModelRole::Evaluator);
  s.dir = io::string_field(j, "dir");
  s.batch_size = j.value("batch_size", std::size_t{0});
  s.sentence_count = j.value("sentence_count", std::size_t{0});
  s.sft_size = j.value("sft_size", std::size_t{0});
  s.documents_skipped = j.value("documents_skipped", std::size_t{0});
  if (j.contains("judgment_stats")) s.stats = stats_from_json(j["judgment_stats"]);
  s.trainer_exit_code = j.value("trainer_exit_code", 0);
  const std::string layers = j.value("trainable_layers", std::string("all"));
  if (const auto colon = layers.find(':'); colon != std::string::npos) {
    s.layers = LayerRange{std::stoi(layers.substr(0, colon)), std::stoi(layers.substr(colon + 1))};
  }
  return s;
}

/// Everything an iteration needs besides the corpus and loop settings.
struct LoopEnvironment {
  ChatBackend* backend = nullptr;
  ModelRef auxiliary{"", "", ModelRole::Auxiliary};
  ModelRef initial_evaluator;
  const PromptSet* prompts = &PromptSet::defaults();
  TrainerInvocation trainer;
  SynthesisOptions synthesis;
  JudgeOptions judge;
  fs::path run_dir;
  /// Reuse artifacts already present instead of regenerating them.
  bool resume = false;
};

/// Run-wide resources shared by all iterations.
struct LoopResources {
  SynthesisCache cache;
  fs::path cache_path;
  std::optional<HumanLabeledData> human;
  std::optional<std::vector<NliPrompt>> xnli;
};

inline fs::path cache_path_for(const fs::path& run_dir, Strategy strategy) {
  return run_dir / "cache" / ("synthesis_" + std::string(to_string(strategy)) + ".jsonl");
}

inline LoopResources load_loop_resources(const LoopConfig& config, const LoopEnvironment& env) {
  LoopResources r;
  r.cache_path = cache_path_for(env.run_dir, config.strategy);
  if (env.resume && fs::exists(r.cache_path)) r.cache = SynthesisCache::load(r.cache_path);
  if (config.human_labels) r.human = load_human_labels(config.human_labels->path);
  if (config.xnli) r.xnli = load_xnli(config.xnli->path, config.xnli->count, config.seed, *env.prompts);
  return r;
}

/// Pipeline stages of one iteration, in execution order.
enum class Stage { Synthesize = 1, Judge = 2, BuildSft = 3, Train = 4 };

/// Steps 0-3 for iteration `state.iteration` with evaluator `state.evaluator`,
/// restricted to stages [first, last]. Earlier stages must already have their
/// artifacts on disk. Within the range an artifact is reused when resuming and
/// already present; a present state.json means the iteration is complete.
inline IterationState run_iteration(IterationState state, const Corpus& corpus,
                                    const LoopConfig& config, const LoopEnvironment& env,
                                    LoopResources& resources, Stage first = Stage::Synthesize,
                                    Stage last = Stage::Train) {
  if (env.backend == nullptr) throw Error(ErrorCode::InvalidArgument, "no backend");
  state.dir = iteration_dir_name(state.iteration);
  const fs::path dir = env.run_dir / state.dir;
  const auto reuse = [&](Stage stage, const char* name) {
    const bool present = fs::exists(dir / name);
    if (stage < first && !present) {
      throw Error(ErrorCode::InvalidArgument,
                  (dir / name).string() + " is missing; run the earlier stages first");
    }
    return present && (stage < first || env.resume);
  };
  if (last == Stage::Train && env.resume && fs::exists(dir / artifact::kState)) {
    log::info("iteration_resumed", {{"iteration", state.iteration}, {"complete", true}});
    return iteration_state_from_json(io::read_json(dir / artifact::kState));
  }
  if (first == Stage::Synthesize && !env.resume && fs::exists(dir)) fs::remove_all(dir);
  fs::create_directories(dir);
  log::info("iteration_started",
            {{"iteration", state.iteration}, {"evaluator", state.evaluator.model_name}});

  // Step 0
  DocumentBatch batch;
  if (reuse(Stage::Synthesize, artifact::kBatch)) {
    batch.documents = io::read_documents(dir / artifact::kBatch);
    batch.iteration = state.iteration;
  } else {
    batch = select_documents(corpus, config, state.iteration);
    io::write_documents(dir / artifact::kBatch, batch.documents);
  }
  state.batch_size = batch.documents.size();
  DocumentTexts texts = document_texts(batch.documents);
  if (resources.human) {
    for (const auto& d : resources.human->documents) texts.emplace(d.id, d.body);
  }

  // Step 1
  SentenceDataset sentences;
  if (reuse(Stage::Synthesize, artifact::kSentences)) {
    sentences = read_sentence_dataset(dir / artifact::kSentences, state.iteration);
  } else {
    const Synthesizer synthesizer(*env.backend, env.auxiliary, *env.prompts, env.synthesis);
    SynthesisReport report;
    try {
      sentences =
          build_sentence_dataset(batch, config.strategy, synthesizer, resources.cache, &report);
    } catch (...) {
      resources.cache.save(resources.cache_path);
      throw;
    }
    resources.cache.save(resources.cache_path);
    state.documents_skipped = report.skipped.size();
    if (resources.human) {
      sentences = mix_human_labels(sentences, resources.human->triplets,
                                   config.human_labels->fraction, config.seed);
    }
    write_sentence_dataset(dir / artifact::kSentences, sentences);
  }
  state.sentence_count = sentences.triplets.size();
  if (last == Stage::Synthesize) return state;

  // Step 2
  JudgmentDataset judgments;
  if (reuse(Stage::Judge, artifact::kJudgments)) {
    judgments = read_judgment_dataset(dir, state.iteration);
  } else {
    JudgeOptions judge = env.judge;
    judge.max_attempts = config.max_judgment_attempts;
    judgments = build_judgment_dataset(sentences, texts, *env.backend, state.evaluator, judge,
                                       *env.prompts);
    write_judgment_dataset(dir, judgments);
  }
  state.stats = judgments.stats;
  log::info("judgments_done", {{"iteration", state.iteration},
                               {"accepted", judgments.stats.accepted},
                               {"attempted", judgments.stats.attempted},
                               {"acceptance_rate", judgments.stats.acceptance_rate()}});
  if (last == Stage::Judge) return state;

  // Step 3
  if (reuse(Stage::BuildSft, artifact::kSft)) {
    state.sft_size = read_sft_dataset(dir / artifact::kSft).size();
  } else {
    const auto sft = build_sft_dataset(judgments, texts,
                                       resources.xnli ? &*resources.xnli : nullptr, config.seed,
                                       *env.prompts);
    write_sft_dataset(dir / artifact::kSft, sft);
    state.sft_size = sft.size();
  }
  if (last == Stage::BuildSft) return state;

  if (config.central_layers) {
    if (!env.trainer.model_layers) {
      throw Error(ErrorCode::InvalidConfig, "central_layers requires trainer.model_layers");
    }
    state.layers = central_layer_range(*env.trainer.model_layers, env.trainer.freeze_fraction);
  }
  TrainerJob job;
  job.dataset = dir / artifact::kSft;
  job.base_model =
      env.trainer.cumulative ? state.evaluator.model_name : env.initial_evaluator.model_name;
  job.output_dir = dir / artifact::kTrainerDir;
  job.layers = state.layers;
  const TrainerResult trained = run_trainer(env.trainer, job, state.evaluator, dir);
  state.trainer_exit_code = trained.exit_code;
  state.next_evaluator = trained.model;

  io::write_json(dir / artifact::kState, to_json(state));
  log::info("iteration_finished", {{"iteration", state.iteration},
                                   {"next_evaluator", state.next_evaluator.model_name}});
  return state;
}

struct RunManifest {
  std::vector<ModelRef> model_chain;  // J_1 .. J_{r+1}
  std::vector<IterationState> iterations;
};

inline io::ordered_json manifest_json(const RunManifest& m, const LoopConfig& config,
                                      const LoopEnvironment& env) {
  io::ordered_json j;
  j["strategy"] = std::string(to_string(config.strategy));
  j["seed"] = config.seed;
  j["iterations"] = config.iterations;
  j["docs_per_iteration"] = config.docs_per_iteration;
  auto langs = io::ordered_json::array();
  for (const auto& l : config.languages) langs.push_back(l.str());
  j["languages"] = std::move(langs);
  j["auxiliary"] = to_json(env.auxiliary);
  auto chain = io::ordered_json::array();
  for (const auto& mref : m.model_chain) chain.push_back(to_json(mref));
  j["model_chain"] = std::move(chain);
  auto iters = io::ordered_json::array();
  for (const auto& s : m.iterations) iters.push_back(to_json(s));
  j["iteration_states"] = std::move(iters);
  j["synthesis_cache"] = fs::relative(cache_path_for(env.run_dir, config.strategy), env.run_dir)
                             .generic_string();
  io::ordered_json prompts;
  for (PromptId id : kAllPrompts) prompts[std::string(to_string(id))] = env.prompts->checksum(id);
  j["prompt_checksums"] = std::move(prompts);
  return j;
}

/// The outer loop: r sequential iterations, each judged by the previous
/// trainer output. Writes manifest.json after every completed iteration.
inline RunManifest run_loop(const Corpus& corpus, const LoopConfig& config,
                            const LoopEnvironment& env) {
  config.validate();
  env.trainer.validate(config.central_layers);
  fs::create_directories(env.run_dir);
  LoopResources resources = load_loop_resources(config, env);
  RunManifest manifest;
  manifest.model_chain.push_back(env.initial_evaluator);
  ModelRef current = env.initial_evaluator;
  for (int i = 1; i <= config.iterations; ++i) {
    IterationState state;
    state.iteration = i;
    state.evaluator = current;
    state = run_iteration(std::move(state), corpus, config, env, resources);
    current = state.next_evaluator;
    manifest.model_chain.push_back(current);
    manifest.iterations.push_back(std::move(state));
    io::write_json(env.run_dir / artifact::kManifest, manifest_json(manifest, config, env));
  }
  return manifest;
}

}  // namespace stemf
