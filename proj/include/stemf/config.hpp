#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "stemf/backend.hpp"
#include "stemf/core.hpp"
#include "stemf/eval.hpp"
#include "stemf/http_backend.hpp"
#include "stemf/io.hpp"
#include "stemf/judging.hpp"
#include "stemf/loop.hpp"
#include "stemf/mock_backend.hpp"

namespace stemf {

/// Offline backend selection: oracle | anti | biased:<p> | constant:<0|1> | script:<path>.
struct MockSpec {
  enum class Kind { Simulated, Script };
  Kind kind = Kind::Simulated;
  JudgePolicy policy = JudgePolicy::oracle();
  std::filesystem::path script;
  std::string text;
};

inline MockSpec parse_mock_spec(std::string_view spec) {
  MockSpec m;
  m.text = std::string(spec);
  const auto colon = spec.find(':');
  const std::string_view head = spec.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? "" : spec.substr(colon + 1);
  const auto bad = [&] { return Error(ErrorCode::InvalidConfig, "invalid mock spec '" + m.text + "'"); };
  if (head == "oracle" && arg.empty()) return m;
  if (head == "anti" && arg.empty()) {
    m.policy = JudgePolicy::anti();
    return m;
  }
  if (head == "biased") {
    double p = 0.0;
    try {
      std::size_t used = 0;
      p = std::stod(std::string(arg), &used);
      if (used != arg.size()) throw bad();
    } catch (const std::exception&) {
      throw bad();
    }
    if (!(p >= 0.0 && p <= 1.0)) throw bad();
    m.policy = JudgePolicy::biased(p);
    return m;
  }
  if (head == "constant" && (arg == "0" || arg == "1")) {
    m.policy = JudgePolicy::constant(arg == "1" ? FaithfulnessLabel::Faithful
                                                : FaithfulnessLabel::Unfaithful);
    return m;
  }
  if (head == "script" && !arg.empty()) {
    m.kind = MockSpec::Kind::Script;
    m.script = std::string(arg);
    return m;
  }
  throw bad();
}

struct HttpSettings {
  int connect_timeout_s = 10;
  int read_timeout_s = 600;
  int max_attempts = 3;
  int base_delay_ms = 1000;
};

/// The whole configuration document. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
  std::vector<std::filesystem::path> corpus;
  LoopConfig loop;
  std::optional<ModelRef> auxiliary;
  std::optional<ModelRef> evaluator;
  std::optional<ModelRef> translator;
  GenerationParams synthesis_params = GenerationParams::synthesis();
  GenerationParams judging_params = GenerationParams::synthesis();
  GenerationParams evaluation_params = GenerationParams::evaluation();
  double eval_retry_temperature = 0.3;
  double max_skip_fraction = 0.10;
  std::optional<TrainerInvocation> trainer;
  std::vector<std::filesystem::path> benchmarks;
  std::optional<std::filesystem::path> prompts_dir;
  std::filesystem::path output_dir = "runs/default";
  std::size_t max_in_flight = 8;
  HttpSettings http;
  std::optional<std::string> mock;
};

namespace detail {

inline void reject_unknown_keys(const io::ordered_json& obj, std::string_view where,
                                std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::InvalidConfig, std::string(where) + " must be an object");
  }
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      throw Error(ErrorCode::InvalidConfig,
                  "unknown key '" + (where.empty() ? key : std::string(where) + "." + key) + "'");
    }
  }
}

template <typename T>
T config_get(const io::ordered_json& obj, const char* key, std::string_view where) {
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::InvalidConfig,
                "key '" + (where.empty() ? std::string(key) : std::string(where) + "." + key) +
                    "' has the wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

inline ModelRef parse_model(const io::ordered_json& j, std::string_view where, ModelRole role) {
  reject_unknown_keys(j, where, {"endpoint", "model_name"});
  if (!j.contains("model_name")) {
    throw Error(ErrorCode::InvalidConfig, "missing key '" + std::string(where) + ".model_name'");
  }
  ModelRef m;
  m.role = role;
  m.model_name = config_get<std::string>(j, "model_name", where);
  if (j.contains("endpoint")) m.endpoint = config_get<std::string>(j, "endpoint", where);
  if (!m.endpoint.empty()) parse_endpoint(m.endpoint);
  return m;
}

inline GenerationParams parse_params(const io::ordered_json& j, std::string_view where,
                                     GenerationParams base) {
  reject_unknown_keys(j, where, {"temperature", "top_p", "max_tokens"});
  if (j.contains("temperature")) base.temperature = config_get<double>(j, "temperature", where);
  if (j.contains("top_p")) base.top_p = config_get<double>(j, "top_p", where);
  if (j.contains("max_tokens")) base.max_tokens = config_get<int>(j, "max_tokens", where);
  try {
    base.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string(where) + ": " + e.what());
  }
  return base;
}

inline std::vector<LanguageCode> parse_languages(const std::vector<std::string>& codes) {
  std::vector<LanguageCode> out;
  for (const auto& c : codes) {
    try {
      out.push_back(LanguageCode::parse(c));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
  }
  return out;
}

}  // namespace detail

/// Parses a configuration document. Unknown keys anywhere are rejected.
inline RunConfig parse_run_config(const io::ordered_json& j,
                                  const std::filesystem::path& base_dir = {}) {
  using detail::config_get;
  detail::reject_unknown_keys(
      j, "",
      {"corpus", "languages", "strategy", "iterations", "docs_per_iteration",
       "max_judgment_attempts", "seed", "central_layers", "xnli", "human_labels", "models",
       "generation", "eval_retry_temperature", "max_skip_fraction", "trainer", "benchmarks",
       "prompts_dir", "output_dir", "max_in_flight", "http", "mock"});
  RunConfig c;
  if (j.contains("corpus")) {
    for (const auto& p : config_get<std::vector<std::string>>(j, "corpus", "")) {
      c.corpus.push_back(detail::resolve(base_dir, p));
    }
  }
  if (j.contains("languages")) {
    c.loop.languages = detail::parse_languages(config_get<std::vector<std::string>>(j, "languages", ""));
  }
  if (j.contains("strategy")) {
    try {
      c.loop.strategy = parse_strategy(config_get<std::string>(j, "strategy", ""));
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
  }
  if (j.contains("iterations")) c.loop.iterations = config_get<int>(j, "iterations", "");
  if (j.contains("docs_per_iteration")) {
    c.loop.docs_per_iteration = config_get<std::size_t>(j, "docs_per_iteration", "");
  }
  if (j.contains("max_judgment_attempts")) {
    c.loop.max_judgment_attempts = config_get<int>(j, "max_judgment_attempts", "");
  }
  if (j.contains("seed")) c.loop.seed = config_get<std::uint64_t>(j, "seed", "");
  if (j.contains("central_layers")) c.loop.central_layers = config_get<bool>(j, "central_layers", "");
  if (j.contains("xnli")) {
    const auto& x = j["xnli"];
    detail::reject_unknown_keys(x, "xnli", {"path", "count"});
    if (!x.contains("path")) throw Error(ErrorCode::InvalidConfig, "missing key 'xnli.path'");
    XnliVariation v;
    v.path = detail::resolve(base_dir, config_get<std::string>(x, "path", "xnli")).string();
    if (x.contains("count")) v.count = config_get<std::size_t>(x, "count", "xnli");
    c.loop.xnli = v;
  }
  if (j.contains("human_labels")) {
    const auto& h = j["human_labels"];
    detail::reject_unknown_keys(h, "human_labels", {"path", "fraction"});
    if (!h.contains("path")) throw Error(ErrorCode::InvalidConfig, "missing key 'human_labels.path'");
    HumanLabelVariation v;
    v.path = detail::resolve(base_dir, config_get<std::string>(h, "path", "human_labels")).string();
    if (h.contains("fraction")) v.fraction = config_get<double>(h, "fraction", "human_labels");
    c.loop.human_labels = v;
  }
  if (j.contains("models")) {
    const auto& m = j["models"];
    detail::reject_unknown_keys(m, "models", {"auxiliary", "evaluator", "translator"});
    if (m.contains("auxiliary")) {
      c.auxiliary = detail::parse_model(m["auxiliary"], "models.auxiliary", ModelRole::Auxiliary);
    }
    if (m.contains("evaluator")) {
      c.evaluator = detail::parse_model(m["evaluator"], "models.evaluator", ModelRole::Evaluator);
    }
    if (m.contains("translator")) {
      c.translator = detail::parse_model(m["translator"], "models.translator", ModelRole::Translator);
    }
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    detail::reject_unknown_keys(g, "generation", {"synthesis", "judging", "evaluation"});
    if (g.contains("synthesis")) {
      c.synthesis_params = detail::parse_params(g["synthesis"], "generation.synthesis", c.synthesis_params);
    }
    if (g.contains("judging")) {
      c.judging_params = detail::parse_params(g["judging"], "generation.judging", c.judging_params);
    }
    if (g.contains("evaluation")) {
      c.evaluation_params =
          detail::parse_params(g["evaluation"], "generation.evaluation", c.evaluation_params);
    }
  }
  if (j.contains("eval_retry_temperature")) {
    c.eval_retry_temperature = config_get<double>(j, "eval_retry_temperature", "");
  }
  if (j.contains("max_skip_fraction")) {
    c.max_skip_fraction = config_get<double>(j, "max_skip_fraction", "");
  }
  if (j.contains("trainer")) {
    const auto& t = j["trainer"];
    detail::reject_unknown_keys(t, "trainer",
                                {"command", "timeout_s", "env_passthrough", "model_layers",
                                 "freeze_fraction", "cumulative"});
    TrainerInvocation inv;
    inv.working_dir = base_dir;
    if (t.contains("command")) inv.command = config_get<std::string>(t, "command", "trainer");
    if (t.contains("timeout_s")) {
      inv.timeout = std::chrono::seconds(config_get<long long>(t, "timeout_s", "trainer"));
    }
    if (t.contains("env_passthrough")) {
      inv.env_passthrough = config_get<std::vector<std::string>>(t, "env_passthrough", "trainer");
    }
    if (t.contains("model_layers")) inv.model_layers = config_get<int>(t, "model_layers", "trainer");
    if (t.contains("freeze_fraction")) {
      inv.freeze_fraction = config_get<double>(t, "freeze_fraction", "trainer");
    }
    if (t.contains("cumulative")) inv.cumulative = config_get<bool>(t, "cumulative", "trainer");
    c.trainer = inv;
  }
  if (j.contains("benchmarks")) {
    for (const auto& p : config_get<std::vector<std::string>>(j, "benchmarks", "")) {
      c.benchmarks.push_back(detail::resolve(base_dir, p));
    }
  }
  if (j.contains("prompts_dir")) {
    c.prompts_dir = detail::resolve(base_dir, config_get<std::string>(j, "prompts_dir", ""));
  }
  if (j.contains("output_dir")) {
    c.output_dir = detail::resolve(base_dir, config_get<std::string>(j, "output_dir", ""));
  }
  if (j.contains("max_in_flight")) c.max_in_flight = config_get<std::size_t>(j, "max_in_flight", "");
  if (j.contains("http")) {
    const auto& h = j["http"];
    detail::reject_unknown_keys(h, "http",
                                {"connect_timeout_s", "read_timeout_s", "max_attempts", "base_delay_ms"});
    if (h.contains("connect_timeout_s")) c.http.connect_timeout_s = config_get<int>(h, "connect_timeout_s", "http");
    if (h.contains("read_timeout_s")) c.http.read_timeout_s = config_get<int>(h, "read_timeout_s", "http");
    if (h.contains("max_attempts")) c.http.max_attempts = config_get<int>(h, "max_attempts", "http");
    if (h.contains("base_delay_ms")) c.http.base_delay_ms = config_get<int>(h, "base_delay_ms", "http");
  }
  if (j.contains("mock")) c.mock = config_get<std::string>(j, "mock", "");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  io::ordered_json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return parse_run_config(j, path.parent_path());
}

/// Subcommands, used to decide which keys are mandatory.
enum class Command { Synthesize, Judge, BuildSft, Train, Evaluate, EvaluatePivot, RunLoop };

inline std::optional<Command> parse_command(std::string_view s) {
  if (s == "synthesize") return Command::Synthesize;
  if (s == "judge") return Command::Judge;
  if (s == "build-sft") return Command::BuildSft;
  if (s == "train") return Command::Train;
  if (s == "evaluate") return Command::Evaluate;
  if (s == "evaluate-pivot") return Command::EvaluatePivot;
  if (s == "run-loop") return Command::RunLoop;
  return std::nullopt;
}

/// Checks everything `command` needs before any model is contacted. Throws
/// InvalidConfig naming the first missing or invalid key.
inline void validate_for(const RunConfig& c, Command command) {
  const auto missing = [](const char* key) {
    return Error(ErrorCode::InvalidConfig, std::string("missing key '") + key + "'");
  };
  const bool mocked = c.mock.has_value();
  if (c.mock) parse_mock_spec(*c.mock);
  if (c.max_in_flight < 1) throw Error(ErrorCode::InvalidConfig, "max_in_flight must be >= 1");
  if (!(c.max_skip_fraction >= 0.0 && c.max_skip_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "max_skip_fraction must be in [0, 1]");
  }
  if (!(c.eval_retry_temperature >= 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "eval_retry_temperature must be >= 0");
  }
  const bool loop_like = command == Command::Synthesize || command == Command::Judge ||
                         command == Command::BuildSft || command == Command::Train ||
                         command == Command::RunLoop;
  if (loop_like) {
    if (c.corpus.empty()) throw missing("corpus");
    if (c.loop.languages.empty()) throw missing("languages");
    try {
      c.loop.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
  }
  if ((command == Command::Synthesize || command == Command::RunLoop) && !mocked && !c.auxiliary) {
    throw missing("models.auxiliary");
  }
  if (command != Command::Synthesize && command != Command::BuildSft && !mocked && !c.evaluator) {
    throw missing("models.evaluator");
  }
  if (command == Command::Train || command == Command::RunLoop) {
    if (!c.trainer || c.trainer->command.empty()) throw missing("trainer.command");
    try {
      c.trainer->validate(c.loop.central_layers);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, e.what());
    }
  }
  if (command == Command::Evaluate || command == Command::EvaluatePivot) {
    if (c.benchmarks.empty()) throw missing("benchmarks");
  }
  if (command == Command::EvaluatePivot && !mocked && !c.translator) {
    throw missing("models.translator");
  }
}

}  // namespace stemf
