#pragma once

#include <atomic>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stemf/backend.hpp"
#include "stemf/config.hpp"
#include "stemf/core.hpp"
#include "stemf/eval.hpp"
#include "stemf/http_backend.hpp"
#include "stemf/io.hpp"
#include "stemf/log.hpp"
#include "stemf/loop.hpp"
#include "stemf/mock_backend.hpp"
#include "stemf/prompts.hpp"
#include "stemf/synthesis.hpp"

namespace stemf::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitPipeline = 2;

/// Command-line overrides applied on top of the config file.
struct Overrides {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<std::string> strategy;
  std::optional<std::string> languages;
  std::optional<std::size_t> max_in_flight;
  std::optional<std::string> mock;
  std::vector<std::string> benchmarks;
  std::optional<std::string> model_name;
  bool resume = false;
  int iteration = 1;
  std::string validate_for = "run-loop";
};

/// Result of one invocation; `backend_calls` counts model requests issued.
struct RunResult {
  int exit_code = kExitOk;
  long long backend_calls = 0;
};

inline bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidArgument:
    case ErrorCode::FileNotFound:
      return true;
    default:
      return false;
  }
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!detail::trim(cur).empty()) out.push_back(detail::trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!detail::trim(cur).empty()) out.push_back(detail::trim(cur));
  return out;
}

inline RunConfig apply_overrides(RunConfig c, const Overrides& o) {
  if (o.out) c.output_dir = *o.out;
  if (o.seed) c.loop.seed = *o.seed;
  if (o.iterations) c.loop.iterations = *o.iterations;
  if (o.strategy) {
    try {
      c.loop.strategy = parse_strategy(*o.strategy);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
  }
  if (o.languages) c.loop.languages = detail::parse_languages(split_csv(*o.languages));
  if (o.max_in_flight) c.max_in_flight = *o.max_in_flight;
  if (o.mock) c.mock = *o.mock;
  if (!o.benchmarks.empty()) {
    c.benchmarks.clear();
    for (const auto& b : o.benchmarks) c.benchmarks.emplace_back(b);
  }
  if (o.model_name) {
    if (!c.evaluator) c.evaluator = ModelRef{"", "", ModelRole::Evaluator};
    c.evaluator->model_name = *o.model_name;
  }
  return c;
}

/// Backends and model references for one invocation.
class Wiring {
 public:
  Wiring(const RunConfig& c, std::ostream& log_stream) {
    if (c.mock) {
      const MockSpec spec = parse_mock_spec(*c.mock);
      if (spec.kind == MockSpec::Kind::Script) {
        base_ = std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(spec.script));
      } else {
        base_ = std::make_unique<SimulatedModel>(spec.policy, c.loop.seed);
      }
    } else {
      HttpOptions http;
      http.connect_timeout = std::chrono::seconds(c.http.connect_timeout_s);
      http.read_timeout = std::chrono::seconds(c.http.read_timeout_s);
      http.retry.max_attempts = c.http.max_attempts;
      http.retry.base_delay = std::chrono::milliseconds(c.http.base_delay_ms);
      base_ = std::make_unique<HttpChatBackend>(http);
    }
    logging_ = std::make_unique<LoggingBackend>(*base_, log_stream);
    counting_ = std::make_unique<CountingBackend>(*logging_);
    const auto ref = [&](const std::optional<ModelRef>& m, ModelRole role, const char* fallback) {
      return m ? *m : ModelRef{"", fallback, role};
    };
    auxiliary = ref(c.auxiliary, ModelRole::Auxiliary, "mock-auxiliary");
    evaluator = ref(c.evaluator, ModelRole::Evaluator, "mock-evaluator");
    translator = ref(c.translator, ModelRole::Translator, "mock-translator");
  }

  ChatBackend& backend() { return *counting_; }
  long long calls() const { return counting_->calls(); }

  ModelRef auxiliary;
  ModelRef evaluator;
  ModelRef translator;

 private:
  std::unique_ptr<ChatBackend> base_;
  std::unique_ptr<LoggingBackend> logging_;
  std::unique_ptr<CountingBackend> counting_;
};

inline PromptSet prompts_for(const RunConfig& c) {
  return c.prompts_dir ? PromptSet::load(*c.prompts_dir) : PromptSet::defaults();
}

inline LoopEnvironment loop_environment(const RunConfig& c, Wiring& w, const PromptSet& prompts,
                                        bool resume) {
  LoopEnvironment env;
  env.backend = &w.backend();
  env.auxiliary = w.auxiliary;
  env.initial_evaluator = w.evaluator;
  env.prompts = &prompts;
  if (c.trainer) env.trainer = *c.trainer;
  env.synthesis.params = c.synthesis_params;
  env.synthesis.max_in_flight = c.max_in_flight;
  env.synthesis.max_skip_fraction = c.max_skip_fraction;
  env.synthesis.seed = c.loop.seed;
  env.judge.params = c.judging_params;
  env.judge.max_in_flight = c.max_in_flight;
  env.judge.max_attempts = c.loop.max_judgment_attempts;
  env.run_dir = c.output_dir;
  env.resume = resume;
  return env;
}

/// J_i for a single-stage command: the previous iteration's trainer output,
/// or the configured evaluator for the first iteration.
inline ModelRef evaluator_for_iteration(const fs::path& run_dir, int iteration,
                                        const ModelRef& configured) {
  if (iteration <= 1) return configured;
  const fs::path prev = run_dir / iteration_dir_name(iteration - 1) / artifact::kState;
  if (!fs::exists(prev)) {
    throw Error(ErrorCode::InvalidArgument,
                prev.string() + " is missing; finish iteration " + std::to_string(iteration - 1));
  }
  return iteration_state_from_json(io::read_json(prev)).next_evaluator;
}

inline std::vector<EvalSample> load_benchmarks(const RunConfig& c) {
  std::vector<EvalSample> samples;
  for (const auto& path : c.benchmarks) {
    auto rows = load_benchmark(path);
    samples.insert(samples.end(), rows.begin(), rows.end());
  }
  return samples;
}

inline EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.params = c.evaluation_params;
  o.retry_temperature = c.eval_retry_temperature;
  o.max_in_flight = c.max_in_flight;
  return o;
}

inline void write_error_file(const fs::path& out_dir, const Error& e) {
  try {
    io::ordered_json j;
    j["code"] = std::string(to_string(e.code()));
    j["message"] = e.what();
    io::write_json(out_dir / "error.json", j);
  } catch (...) {
  }
}

inline int execute(const std::string& command, const Overrides& o, std::ostream& log_stream,
                   long long& calls) {
  RunConfig config = apply_overrides(load_run_config(o.config), o);
  if (command == "validate-config") {
    const auto target = parse_command(o.validate_for);
    if (!target) throw Error(ErrorCode::InvalidArgument, "unknown --for command " + o.validate_for);
    validate_for(config, *target);
    std::cout << "config ok for " << o.validate_for << "\n";
    return kExitOk;
  }
  const auto cmd = parse_command(command);
  if (!cmd) throw Error(ErrorCode::InvalidArgument, "unknown command " + command);
  validate_for(config, *cmd);

  const PromptSet prompts = prompts_for(config);
  Wiring wiring(config, log_stream);
  struct CountOnExit {
    Wiring& w;
    long long& calls;
    ~CountOnExit() { calls = w.calls(); }
  } count_on_exit{wiring, calls};
  fs::create_directories(config.output_dir);

  switch (*cmd) {
    case Command::RunLoop: {
      const Corpus corpus = Corpus::load(config.corpus);
      const auto env = loop_environment(config, wiring, prompts, o.resume);
      const auto manifest = run_loop(corpus, config.loop, env);
      std::cout << "completed " << manifest.iterations.size() << " iterations; final evaluator "
                << manifest.model_chain.back().model_name << "\n";
      return kExitOk;
    }
    case Command::Synthesize:
    case Command::Judge:
    case Command::BuildSft:
    case Command::Train: {
      const Corpus corpus = Corpus::load(config.corpus);
      auto env = loop_environment(config, wiring, prompts, o.resume);
      LoopResources resources = load_loop_resources(config.loop, env);
      IterationState state;
      state.iteration = o.iteration;
      state.evaluator = evaluator_for_iteration(env.run_dir, o.iteration, wiring.evaluator);
      const Stage stage = *cmd == Command::Synthesize ? Stage::Synthesize
                          : *cmd == Command::Judge    ? Stage::Judge
                          : *cmd == Command::BuildSft ? Stage::BuildSft
                                                      : Stage::Train;
      state = run_iteration(std::move(state), corpus, config.loop, env, resources, stage, stage);
      std::cout << command << " done for " << iteration_dir_name(state.iteration) << "\n";
      return kExitOk;
    }
    case Command::Evaluate:
    case Command::EvaluatePivot: {
      const bool pivot = *cmd == Command::EvaluatePivot;
      const fs::path dir = config.output_dir / "eval";
      const fs::path report_path = dir / (pivot ? "report_pivot.json" : "report.json");
      if (o.resume && fs::exists(report_path)) {
        std::cout << "report exists: " << report_path.string() << "\n";
        return kExitOk;
      }
      const auto samples = load_benchmarks(config);
      const EvalReport report =
          pivot ? evaluate_translated(samples, wiring.backend(), wiring.evaluator,
                                      wiring.translator, eval_options(config), prompts)
                : evaluate(samples, wiring.backend(), wiring.evaluator, eval_options(config), prompts);
      if (pivot) {
        io::ordered_json marker;
        marker["pivot"] = true;
        marker["report"] = report_path.filename().string();
        marker["excluded_samples"] = report.excluded_samples;
        const fs::path baseline = dir / "report.json";
        if (fs::exists(baseline)) {
          auto diffs = io::ordered_json::array();
          for (const auto& [key, delta] :
               report_difference(report, report_from_json(io::read_json(baseline)))) {
            diffs.push_back({{"benchmark", key.first}, {"language", key.second}, {"delta", delta}});
          }
          marker["difference_vs_direct"] = std::move(diffs);
        }
        io::write_json(dir / "pivot.json", marker);
      }
      io::write_file_atomic(report_path, format_report(report));
      for (const auto& w : report.warnings) log::warn("undefined_cell", {{"detail", w}});
      std::cout << "macro average: "
                << (report.macro_average ? std::to_string(*report.macro_average) : "undefined")
                << "\n";
      return kExitOk;
    }
  }
  return kExitOk;
}

/// Parses `args` (without the program name) and runs the chosen subcommand.
/// Backend-call events go to `log_stream`.
inline RunResult run(const std::vector<std::string>& args, std::ostream& log_stream = std::cerr) {
  CLI::App app{"Self-taught multilingual faithfulness evaluator pipeline"};
  app.require_subcommand(1);
  Overrides o;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "configuration file (JSON)")->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed for all sampling");
    sub->add_option("--iterations", o.iterations, "number of iterations");
    sub->add_option("--strategy", o.strategy, "direct|indirect");
    sub->add_option("--languages", o.languages, "comma-separated language codes");
    sub->add_option("--max-in-flight", o.max_in_flight, "concurrent model requests");
    sub->add_option("--mock", o.mock, "oracle|anti|biased:<p>|constant:<0|1>|script:<path>");
    sub->add_flag("--resume", o.resume, "reuse artifacts already on disk");
  };
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"synthesize", "Steps 0-1: select documents and build labeled sentences"},
      {"judge", "Step 2: judge sentences with rejection sampling"},
      {"build-sft", "Step 3: build the fine-tuning dataset"},
      {"train", "Step 3: run the external trainer"},
      {"evaluate", "Balanced accuracy on benchmark files"},
      {"evaluate-pivot", "Evaluate after translating inputs to English"},
      {"run-loop", "All steps for every iteration"},
      {"validate-config", "Validate the configuration for a command"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    const std::string n = name;
    if (n == "synthesize" || n == "judge" || n == "build-sft" || n == "train") {
      sub->add_option("--iteration", o.iteration, "iteration number")->check(CLI::PositiveNumber);
    }
    if (n == "evaluate" || n == "evaluate-pivot") {
      sub->add_option("--benchmark", o.benchmarks, "benchmark JSONL file (repeatable)");
      sub->add_option("--model-name", o.model_name, "evaluator model name");
    }
    if (n == "validate-config") sub->add_option("--for", o.validate_for, "command to validate for");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream out, err;
    const int rc = app.exit(e, out, err);
    std::cout << out.str();
    std::cerr << err.str();
    return {rc == 0 ? kExitOk : kExitValidation, 0};
  }
  const std::string command = app.get_subcommands().front()->get_name();

  RunResult result;
  std::optional<fs::path> out_dir = o.out ? std::optional<fs::path>(*o.out) : std::nullopt;
  try {
    result.exit_code = execute(command, o, log_stream, result.backend_calls);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!out_dir && fs::exists(o.config)) {
      try {
        out_dir = load_run_config(o.config).output_dir;
      } catch (...) {
      }
    }
    if (out_dir && command != "validate-config") write_error_file(*out_dir, e);
    result.exit_code = is_validation_error(e.code()) ? kExitValidation : kExitPipeline;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (out_dir) write_error_file(*out_dir, Error(ErrorCode::IoError, e.what()));
    result.exit_code = kExitPipeline;
  }
  return result;
}

}  // namespace stemf::cli
