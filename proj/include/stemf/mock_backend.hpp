#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemf/backend.hpp"
#include "stemf/prompts.hpp"
#include "stemf/random.hpp"
#include "stemf/textproc.hpp"

namespace stemf {

/// How a simulated judge answers judge-template requests.
struct JudgePolicy {
  enum class Kind { Oracle, Biased, Anti, ConstantFaithful, ConstantUnfaithful };
  Kind kind = Kind::Oracle;
  double p_correct = 1.0;  // Biased only

  static JudgePolicy oracle() { return {Kind::Oracle, 1.0}; }
  static JudgePolicy biased(double p) { return {Kind::Biased, p}; }
  static JudgePolicy anti() { return {Kind::Anti, 0.0}; }
  static JudgePolicy constant(FaithfulnessLabel l) {
    return {l == FaithfulnessLabel::Faithful ? Kind::ConstantFaithful : Kind::ConstantUnfaithful,
            0.0};
  }
};

/// Offline stand-in for every model role. Responses are pure functions of
/// (seed, request id, attempt, metadata), so transcripts do not depend on
/// scheduling or concurrency.
///
///  - faithful_summary: the first three sentences of the article as a `###` list
///  - corrupt_article: every sentence prefixed with a contradiction marker
///  - inject_*: the injector scaffold ending in an altered sentence
///  - judge: answers according to the JudgePolicy using the gold-label side channel
///  - translate: identity
class SimulatedModel final : public ChatBackend {
 public:
  explicit SimulatedModel(JudgePolicy policy = JudgePolicy::oracle(), std::uint64_t seed = 0)
      : policy_(policy), seed_(seed) {}

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    (void)model;
    request.validate();
    const std::string tpl = request.meta_or(meta::kTemplate);
    ChatResponse out;
    out.request_id = request.id;
    if (tpl == to_string(PromptId::Judge)) {
      out.content = judge(request);
    } else if (tpl == to_string(PromptId::FaithfulSummary)) {
      out.content = summarize(request);
    } else if (tpl == to_string(PromptId::CorruptArticle)) {
      out.content = corrupt_article(request);
    } else if (tpl.rfind("inject_", 0) == 0) {
      out.content = inject(request);
    } else if (tpl == to_string(PromptId::Translate)) {
      out.content = request.meta_or(meta::kSourceText);
    } else {
      throw Error(ErrorCode::MalformedResponse, "simulated model has no behavior for '" + tpl + "'");
    }
    out.usage.completion_tokens = static_cast<long long>(out.content.size() / 4);
    return out;
  }

 private:
  std::string judge(const ChatRequest& request) const {
    const std::string gold_text = request.meta_or(meta::kGoldLabel);
    if (gold_text != "0" && gold_text != "1") {
      throw Error(ErrorCode::MalformedResponse, "judge request lacks gold label side channel");
    }
    const FaithfulnessLabel gold = label_from_int(gold_text == "1");
    FaithfulnessLabel answer = gold;
    switch (policy_.kind) {
      case JudgePolicy::Kind::Oracle:
        break;
      case JudgePolicy::Kind::Anti:
        answer = flip(gold);
        break;
      case JudgePolicy::Kind::ConstantFaithful:
        answer = FaithfulnessLabel::Faithful;
        break;
      case JudgePolicy::Kind::ConstantUnfaithful:
        answer = FaithfulnessLabel::Unfaithful;
        break;
      case JudgePolicy::Kind::Biased: {
        Rng rng(mix_seed(seed_, request.id, request.meta_or(meta::kAttempt, "1")));
        if (!(rng.uniform() < policy_.p_correct)) answer = flip(gold);
        break;
      }
    }
    ErrorCategory category = ErrorCategory::NoError;
    if (answer == FaithfulnessLabel::Unfaithful) {
      const auto injected = parse_injectable(request.meta_or(meta::kErrorType));
      category = injected ? to_category(*injected) : ErrorCategory::Entity;
    }
    const Judgment j(answer == FaithfulnessLabel::Faithful
                         ? "The statement is supported by the text."
                         : "The statement is not supported by the text.",
                     category);
    return serialize_judgment(j);
  }

  static FaithfulnessLabel flip(FaithfulnessLabel l) {
    return l == FaithfulnessLabel::Faithful ? FaithfulnessLabel::Unfaithful
                                            : FaithfulnessLabel::Faithful;
  }

  static std::vector<std::string> article_sentences(const ChatRequest& request) {
    const std::string article = request.meta_or(meta::kArticle);
    if (detail::trim_view(article).empty()) {
      throw Error(ErrorCode::MalformedResponse, "request lacks article side channel");
    }
    return split_sentences(article, LanguageCode::parse(request.meta_or(meta::kLanguage, "en")));
  }

  static std::string summarize(const ChatRequest& request) {
    const auto sentences = article_sentences(request);
    std::string out;
    for (std::size_t i = 0; i < sentences.size() && i < 3; ++i) {
      if (!out.empty()) out += '\n';
      out += "### " + sentences[i];
    }
    return out;
  }

  static std::string corrupt_article(const ChatRequest& request) {
    std::string out;
    for (const auto& s : article_sentences(request)) {
      if (!out.empty()) out += ' ';
      out += "Contrary to the original, " + s;
    }
    return out;
  }

  static std::string inject(const ChatRequest& request) {
    const std::string sentence = request.meta_or(meta::kSentence);
    const std::string type = request.meta_or(meta::kErrorType);
    return "### Original sentence: " + sentence + "\n### Strategy: alter the " + type +
           "\n### " + sentence + " (" + type + " altered)";
  }

  JudgePolicy policy_;
  std::uint64_t seed_;
};

/// Replays a fixed transcript. Script format (JSON):
///
///   {"by_id": {"<request id>": ["first", "second"]},
///    "by_prefix": {"<request id prefix>": ["response", ...]},
///    "by_template": {"<template id>": ["response", ...]}}
///
/// Each request id keeps its own cursor, so repeated calls for one id (the
/// retries of one logical request) replay the list in order regardless of
/// how other ids interleave. `by_id` lists are exhausted after their last
/// element; `by_prefix` (longest match wins) and `by_template` lists cycle
/// per id.
class ScriptedBackend final : public ChatBackend {
 public:
  ScriptedBackend() = default;

  static ScriptedBackend from_json(const nlohmann::json& script) {
    ScriptedBackend out;
    if (!script.is_object()) throw Error(ErrorCode::InvalidConfig, "script must be a JSON object");
    for (const char* section : {"by_id", "by_prefix", "by_template"}) {
      if (!script.contains(section)) continue;
      const auto& obj = script.at(section);
      if (!obj.is_object()) {
        throw Error(ErrorCode::InvalidConfig, std::string("script.") + section + " must be an object");
      }
      for (const auto& [key, list] : obj.items()) {
        if (!list.is_array()) {
          throw Error(ErrorCode::InvalidConfig, "script entry '" + key + "' must be a list");
        }
        std::vector<std::string> responses;
        for (const auto& r : list) {
          if (!r.is_string()) {
            throw Error(ErrorCode::InvalidConfig, "script entry '" + key + "' has a non-string");
          }
          responses.push_back(r.get<std::string>());
        }
        const std::string_view name(section);
        auto& target = name == "by_id"       ? out.by_id_
                       : name == "by_prefix" ? out.by_prefix_
                                             : out.by_template_;
        target[key] = std::move(responses);
      }
    }
    return out;
  }

  static ScriptedBackend from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::FileNotFound, "script not found: " + path.string());
    const auto doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw Error(ErrorCode::InvalidConfig, "script is not valid JSON");
    return from_json(doc);
  }

  void add(std::string id, std::vector<std::string> responses) {
    by_id_[std::move(id)] = std::move(responses);
  }
  void add_template(std::string tpl, std::vector<std::string> responses) {
    by_template_[std::move(tpl)] = std::move(responses);
  }
  void add_prefix(std::string prefix, std::vector<std::string> responses) {
    by_prefix_[std::move(prefix)] = std::move(responses);
  }

  ScriptedBackend(ScriptedBackend&& other) noexcept
      : by_id_(std::move(other.by_id_)),
        by_prefix_(std::move(other.by_prefix_)),
        by_template_(std::move(other.by_template_)),
        cursor_(std::move(other.cursor_)) {}

  ChatResponse complete(const ModelRef& model, const ChatRequest& request) override {
    (void)model;
    request.validate();
    std::size_t index = 0;
    {
      std::lock_guard lock(mu_);
      index = cursor_[request.id]++;
    }
    ChatResponse out;
    out.request_id = request.id;
    if (const auto it = by_id_.find(request.id); it != by_id_.end()) {
      if (index >= it->second.size()) {
        throw Error(ErrorCode::MalformedResponse, "script exhausted for id " + request.id);
      }
      out.content = it->second[index];
      return out;
    }
    const std::vector<std::string>* best = nullptr;
    std::size_t best_len = 0;
    for (const auto& [prefix, list] : by_prefix_) {
      if (!list.empty() && prefix.size() >= best_len &&
          request.id.compare(0, prefix.size(), prefix) == 0) {
        best = &list;
        best_len = prefix.size();
      }
    }
    if (best) {
      out.content = (*best)[index % best->size()];
      return out;
    }
    const std::string tpl = request.meta_or(meta::kTemplate);
    if (const auto it = by_template_.find(tpl); it != by_template_.end() && !it->second.empty()) {
      out.content = it->second[index % it->second.size()];
      return out;
    }
    throw Error(ErrorCode::MalformedResponse, "no scripted response for " + request.id);
  }

 private:
  std::map<std::string, std::vector<std::string>> by_id_;
  std::map<std::string, std::vector<std::string>> by_prefix_;
  std::map<std::string, std::vector<std::string>> by_template_;
  std::map<std::string, std::size_t> cursor_;
  std::mutex mu_;
};

}  // namespace stemf
