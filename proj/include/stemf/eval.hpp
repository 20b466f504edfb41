#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stemf/backend.hpp"
#include "stemf/core.hpp"
#include "stemf/io.hpp"
#include "stemf/log.hpp"
#include "stemf/parallel.hpp"
#include "stemf/prompts.hpp"
#include "stemf/textproc.hpp"

namespace stemf {

// ---------------------------------------------------------------------------
// Balanced accuracy
// ---------------------------------------------------------------------------

/// Faithful is the positive class. The metric is symmetric in the choice.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  void add(FaithfulnessLabel gold, FaithfulnessLabel predicted) {
    const bool g = gold == FaithfulnessLabel::Faithful;
    const bool p = predicted == FaithfulnessLabel::Faithful;
    if (g && p) ++tp;
    else if (g) ++fn;
    else if (p) ++fp;
    else ++tn;
  }

  std::size_t total() const { return tp + fp + tn + fn; }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Mean of true-positive and true-negative rates.
inline double balanced_accuracy(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) throw Error(ErrorCode::UndefinedMetric, "no positive (faithful) samples");
  if (c.tn + c.fp == 0) throw Error(ErrorCode::UndefinedMetric, "no negative (unfaithful) samples");
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return 0.5 * (tpr + tnr);
}

// ---------------------------------------------------------------------------
// Benchmark samples
// ---------------------------------------------------------------------------

enum class Granularity { Sentence, Passage };

struct EvalSample {
  std::string id;
  LanguageCode language;
  std::string benchmark;
  std::string document;
  std::string claim;
  FaithfulnessLabel gold = FaithfulnessLabel::Faithful;
  Granularity granularity = Granularity::Sentence;
};

inline EvalSample sample_from_json(const io::ordered_json& row) {
  EvalSample s;
  s.id = io::string_field(row, "id");
  try {
    s.language = LanguageCode::parse(io::string_field(row, "language"));
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedRow, e.what());
  }
  s.benchmark = io::string_field(row, "benchmark");
  s.document = io::string_field(row, "document");
  s.claim = io::string_field(row, "claim");
  s.gold = io::label_field(row, "label");
  const std::string g = io::string_field(row, "granularity");
  if (g == "sentence") s.granularity = Granularity::Sentence;
  else if (g == "passage") s.granularity = Granularity::Passage;
  else throw Error(ErrorCode::MalformedRow, "granularity must be sentence or passage");
  if (detail::trim_view(s.document).empty() || detail::trim_view(s.claim).empty()) {
    throw Error(ErrorCode::MalformedRow, "empty document or claim in sample '" + s.id + "'");
  }
  return s;
}

inline io::ordered_json to_json(const EvalSample& s) {
  io::ordered_json j;
  j["id"] = s.id;
  j["language"] = s.language.str();
  j["benchmark"] = s.benchmark;
  j["document"] = s.document;
  j["claim"] = s.claim;
  j["label"] = to_int(s.gold);
  j["granularity"] = s.granularity == Granularity::Sentence ? "sentence" : "passage";
  return j;
}

inline std::vector<EvalSample> load_benchmark(const std::filesystem::path& path) {
  std::vector<EvalSample> out;
  io::read_jsonl(path, [&](std::size_t line, const io::ordered_json& row) {
    try {
      out.push_back(sample_from_json(row));
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedRow,
                  path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Judging samples
// ---------------------------------------------------------------------------

struct EvalOptions {
  GenerationParams params = GenerationParams::evaluation();
  /// Used for the single retry after an unparseable greedy answer.
  double retry_temperature = 0.3;
  std::size_t max_in_flight = 8;
};

struct SampleVerdict {
  FaithfulnessLabel prediction = FaithfulnessLabel::Faithful;
  std::size_t judge_calls = 0;
  std::size_t flagged_sentences = 0;
};

/// Sentence granularity: one judge call on the claim. Passage granularity:
/// the claim is split into sentences and is Faithful iff every sentence is
/// judged "no error". A sentence that stays unparseable after the retry counts
/// as Unfaithful and is flagged. Transport errors propagate.
inline SampleVerdict judge_sample(const EvalSample& sample, ChatBackend& backend,
                                  const ModelRef& evaluator, const EvalOptions& options = {},
                                  const PromptSet& prompts = PromptSet::defaults()) {
  const std::vector<std::string> sentences =
      sample.granularity == Granularity::Sentence
          ? std::vector<std::string>{detail::trim(sample.claim)}
          : split_sentences(sample.claim, sample.language);
  SampleVerdict verdict;
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    ChatRequest request = ChatRequest::user(
        "eval/" + sample.benchmark + "/" + sample.id + "/" + std::to_string(k),
        prompts.render_judge(sample.document, sentences[k]), options.params);
    request.metadata[std::string(meta::kTemplate)] = to_string(PromptId::Judge);
    request.metadata[std::string(meta::kSentence)] = sentences[k];
    request.metadata[std::string(meta::kGoldLabel)] = std::to_string(to_int(sample.gold));
    std::optional<Judgment> judgment;
    for (int attempt = 1; attempt <= 2 && !judgment; ++attempt) {
      request.metadata[std::string(meta::kAttempt)] = std::to_string(attempt);
      if (attempt == 2) request.params.temperature = options.retry_temperature;
      ++verdict.judge_calls;
      const ChatResponse response = backend.complete(evaluator, request);
      try {
        judgment = parse_judgment(response.content);
      } catch (const Error&) {
      }
    }
    if (!judgment) {
      ++verdict.flagged_sentences;
      verdict.prediction = FaithfulnessLabel::Unfaithful;
    } else if (judgment->prediction() == FaithfulnessLabel::Unfaithful) {
      verdict.prediction = FaithfulnessLabel::Unfaithful;
    }
  }
  return verdict;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

using CellKey = std::pair<std::string, std::string>;  // (benchmark, language)

struct CellReport {
  ConfusionCounts counts;
  std::optional<double> balanced_accuracy;
  std::size_t flagged_sentences = 0;
  std::size_t excluded = 0;
};

struct EvalReport {
  std::map<CellKey, CellReport> cells;
  std::optional<double> macro_average;
  std::vector<std::string> warnings;
  std::size_t excluded_samples = 0;
  /// Set by evaluate_translated; not part of the canonical serialization.
  bool pivot = false;
};

/// Canonical report document. Identical inputs and verdicts give identical
/// bytes; the pivot marker is carried separately.
inline io::ordered_json to_json(const EvalReport& r) {
  io::ordered_json j;
  auto cells = io::ordered_json::array();
  for (const auto& [key, cell] : r.cells) {
    io::ordered_json c;
    c["benchmark"] = key.first;
    c["language"] = key.second;
    c["tp"] = cell.counts.tp;
    c["fp"] = cell.counts.fp;
    c["tn"] = cell.counts.tn;
    c["fn"] = cell.counts.fn;
    c["balanced_accuracy"] =
        cell.balanced_accuracy ? io::ordered_json(*cell.balanced_accuracy) : io::ordered_json(nullptr);
    c["flagged_sentences"] = cell.flagged_sentences;
    c["excluded"] = cell.excluded;
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  j["macro_average"] = r.macro_average ? io::ordered_json(*r.macro_average) : io::ordered_json(nullptr);
  j["excluded_samples"] = r.excluded_samples;
  j["warnings"] = r.warnings;
  return j;
}

inline std::string format_report(const EvalReport& r) {
  return to_json(r).dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

namespace detail {

/// Scores samples whose slot is set; empty slots were excluded upstream and
/// are counted against their cell.
inline EvalReport score_samples(const std::vector<EvalSample>& originals,
                                const std::vector<std::optional<EvalSample>>& prepared,
                                ChatBackend& backend, const ModelRef& evaluator,
                                const EvalOptions& options, const PromptSet& prompts) {
  struct Slot {
    std::optional<SampleVerdict> verdict;
    std::string error;
  };
  auto slots = parallel_map<Slot>(prepared.size(), options.max_in_flight, [&](std::size_t i) {
    Slot slot;
    if (!prepared[i]) return slot;
    try {
      slot.verdict = judge_sample(*prepared[i], backend, evaluator, options, prompts);
    } catch (const Error& e) {
      slot.error = e.what();
    }
    return slot;
  });

  EvalReport report;
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const auto& s = originals[i];
    CellReport& cell = report.cells[{s.benchmark, s.language.str()}];
    if (!slots[i].verdict) {
      ++cell.excluded;
      ++report.excluded_samples;
      if (!slots[i].error.empty()) {
        log::warn("eval_sample_excluded", {{"id", s.id}, {"error", slots[i].error}});
      }
      continue;
    }
    cell.counts.add(s.gold, slots[i].verdict->prediction);
    cell.flagged_sentences += slots[i].verdict->flagged_sentences;
  }
  double sum = 0.0;
  std::size_t defined = 0;
  for (auto& [key, cell] : report.cells) {
    try {
      cell.balanced_accuracy = balanced_accuracy(cell.counts);
      sum += *cell.balanced_accuracy;
      ++defined;
    } catch (const Error& e) {
      report.warnings.push_back(key.first + "/" + key.second + ": " + e.what());
    }
  }
  if (defined > 0) report.macro_average = sum / static_cast<double>(defined);
  return report;
}

}  // namespace detail

/// Per-(benchmark, language) confusion counts and balanced accuracy, with the
/// unweighted mean over defined cells.
inline EvalReport evaluate(const std::vector<EvalSample>& samples, ChatBackend& backend,
                           const ModelRef& evaluator, const EvalOptions& options = {},
                           const PromptSet& prompts = PromptSet::defaults()) {
  std::vector<std::optional<EvalSample>> prepared(samples.begin(), samples.end());
  return detail::score_samples(samples, prepared, backend, evaluator, options, prompts);
}

/// Translation-pivot baseline: non-English documents and claims are translated
/// to English first, then scored exactly as `evaluate` does. Cells stay keyed
/// by the original language. Failed translations exclude the sample.
inline EvalReport evaluate_translated(const std::vector<EvalSample>& samples, ChatBackend& backend,
                                      const ModelRef& evaluator, const ModelRef& translator,
                                      const EvalOptions& options = {},
                                      const PromptSet& prompts = PromptSet::defaults()) {
  GenerationParams translate_params = options.params;
  const auto translate = [&](const EvalSample& s, const std::string& field,
                             const std::string& text) {
    ChatRequest request = ChatRequest::user("translate/" + s.benchmark + "/" + s.id + "/" + field,
                                            prompts.render_translate(text), translate_params);
    request.metadata[std::string(meta::kTemplate)] = to_string(PromptId::Translate);
    request.metadata[std::string(meta::kSourceText)] = text;
    request.metadata[std::string(meta::kLanguage)] = s.language.str();
    std::string out = detail::trim(backend.complete(translator, request).content);
    if (out.empty()) throw Error(ErrorCode::MalformedResponse, "empty translation");
    return out;
  };
  auto prepared = parallel_map<std::optional<EvalSample>>(
      samples.size(), options.max_in_flight, [&](std::size_t i) -> std::optional<EvalSample> {
        EvalSample s = samples[i];
        if (s.language.str() == "en") return s;
        try {
          s.document = translate(s, "document", s.document);
          s.claim = translate(s, "claim", s.claim);
          return s;
        } catch (const Error& e) {
          log::warn("translation_failed", {{"id", s.id}, {"error", e.what()}});
          return std::nullopt;
        }
      });
  EvalReport report = detail::score_samples(samples, prepared, backend, evaluator, options, prompts);
  report.pivot = true;
  return report;
}

/// Pivot minus baseline balanced accuracy per cell defined in both reports.
inline std::map<CellKey, double> report_difference(const EvalReport& pivot,
                                                   const EvalReport& baseline) {
  std::map<CellKey, double> out;
  for (const auto& [key, cell] : pivot.cells) {
    const auto it = baseline.cells.find(key);
    if (it == baseline.cells.end() || !cell.balanced_accuracy || !it->second.balanced_accuracy) {
      continue;
    }
    out[key] = *cell.balanced_accuracy - *it->second.balanced_accuracy;
  }
  return out;
}

inline EvalReport report_from_json(const io::ordered_json& j) {
  EvalReport r;
  for (const auto& c : io::field(j, "cells")) {
    CellReport cell;
    cell.counts.tp = c.value("tp", std::size_t{0});
    cell.counts.fp = c.value("fp", std::size_t{0});
    cell.counts.tn = c.value("tn", std::size_t{0});
    cell.counts.fn = c.value("fn", std::size_t{0});
    if (c.contains("balanced_accuracy") && c["balanced_accuracy"].is_number()) {
      cell.balanced_accuracy = c["balanced_accuracy"].get<double>();
    }
    cell.flagged_sentences = c.value("flagged_sentences", std::size_t{0});
    cell.excluded = c.value("excluded", std::size_t{0});
    r.cells[{io::string_field(c, "benchmark"), io::string_field(c, "language")}] = cell;
  }
  if (j.contains("macro_average") && j["macro_average"].is_number()) {
    r.macro_average = j["macro_average"].get<double>();
  }
  r.excluded_samples = j.value("excluded_samples", std::size_t{0});
  if (j.contains("warnings")) r.warnings = j["warnings"].get<std::vector<std::string>>();
  return r;
}

}  // namespace stemf
