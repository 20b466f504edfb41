#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stemf/backend.hpp"
#include "stemf/core.hpp"
#include "stemf/io.hpp"
#include "stemf/parallel.hpp"
#include "stemf/prompts.hpp"
#include "stemf/synthesis.hpp"
#include "stemf/textproc.hpp"

namespace stemf {

/// document id -> document text, for rendering judge prompts.
using DocumentTexts = std::unordered_map<std::string, std::string>;

inline DocumentTexts document_texts(const std::vector<Document>& docs) {
  DocumentTexts out;
  for (const auto& d : docs) out.emplace(d.id, d.body);
  return out;
}

struct JudgeOptions {
  /// Training-time sampling temperature; resampling is pointless when greedy.
  GenerationParams params = GenerationParams::synthesis();
  int max_attempts = 3;
  std::size_t max_in_flight = 8;
};

/// Outcome of judging one triplet: a record when some attempt agreed with the
/// pseudo-label, otherwise a rejection with its diagnostics.
struct TripletJudgment {
  std::optional<JudgmentRecord> record;
  int attempts = 0;
  int parse_failures = 0;
  bool transport_failure = false;
  std::string last_error;
};

inline ChatRequest judge_request(const PromptSet& prompts, const std::string& id,
                                 const std::string& document, const std::string& sentence,
                                 const GenerationParams& params) {
  ChatRequest request = ChatRequest::user(id, prompts.render_judge(document, sentence), params);
  request.metadata[std::string(meta::kTemplate)] = to_string(PromptId::Judge);
  request.metadata[std::string(meta::kSentence)] = sentence;
  return request;
}

/// Samples judgments until one matches the triplet's label or the attempt
/// budget runs out. Unparseable output consumes an attempt. Transport errors
/// have already used the backend's own retry budget and end the triplet.
inline TripletJudgment judge_with_retry(const SentenceTriplet& triplet, const std::string& document,
                                        ChatBackend& backend, const ModelRef& evaluator,
                                        const JudgeOptions& options, const std::string& request_id,
                                        const PromptSet& prompts = PromptSet::defaults()) {
  if (options.max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "max_attempts must be >= 1");
  ChatRequest request = judge_request(prompts, request_id, document, triplet.sentence(), options.params);
  request.metadata[std::string(meta::kGoldLabel)] = std::to_string(to_int(triplet.label()));
  if (const auto& err = triplet.provenance().injected_error) {
    request.metadata[std::string(meta::kErrorType)] = to_string(*err);
  }
  TripletJudgment out;
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    request.metadata[std::string(meta::kAttempt)] = std::to_string(attempt);
    out.attempts = attempt;
    ChatResponse response;
    try {
      response = backend.complete(evaluator, request);
    } catch (const Error& e) {
      out.transport_failure = true;
      out.last_error = e.what();
      return out;
    }
    try {
      Judgment judgment = parse_judgment(response.content);
      if (judgment.prediction() == triplet.label()) {
        out.record.emplace(triplet, std::move(judgment), attempt);
        return out;
      }
      out.last_error = "prediction disagrees with label";
    } catch (const Error& e) {
      ++out.parse_failures;
      out.last_error = e.what();
    }
  }
  return out;
}

struct JudgmentStats {
  std::size_t attempted = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t parse_failures = 0;
  std::size_t transport_failures = 0;
  /// accepted_at_attempt[k] = records accepted on attempt k+1.
  std::vector<std::size_t> accepted_at_attempt;

  double acceptance_rate() const {
    return attempted == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(attempted);
  }
};

struct RejectedTriplet {
  SentenceTriplet triplet;
  int attempts;
  int parse_failures;
  std::string last_error;
};

struct JudgmentDataset {
  std::vector<JudgmentRecord> records;
  std::vector<RejectedTriplet> rejected;
  int iteration = 1;
  JudgmentStats stats;
};

/// Step 2 over a whole sentence dataset. Triplets are judged concurrently;
/// records keep the input order of the triplets.
inline JudgmentDataset build_judgment_dataset(const SentenceDataset& dataset,
                                              const DocumentTexts& documents, ChatBackend& backend,
                                              const ModelRef& evaluator, const JudgeOptions& options,
                                              const PromptSet& prompts = PromptSet::defaults()) {
  if (dataset.triplets.empty()) throw Error(ErrorCode::EmptyInput, "sentence dataset is empty");
  for (const auto& t : dataset.triplets) {
    if (!documents.contains(t.document_id())) {
      throw Error(ErrorCode::InvalidArgument, "no document text for '" + t.document_id() + "'");
    }
  }
  const std::string prefix = "judge/it" + std::to_string(dataset.iteration) + "/";
  auto results = parallel_map<TripletJudgment>(
      dataset.triplets.size(), options.max_in_flight, [&](std::size_t i) {
        const auto& t = dataset.triplets[i];
        return judge_with_retry(t, documents.at(t.document_id()), backend, evaluator, options,
                                prefix + std::to_string(i), prompts);
      });

  JudgmentDataset out;
  out.iteration = dataset.iteration;
  out.stats.accepted_at_attempt.assign(static_cast<std::size_t>(options.max_attempts), 0);
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& r = results[i];
    ++out.stats.attempted;
    out.stats.parse_failures += static_cast<std::size_t>(r.parse_failures);
    if (r.record) {
      ++out.stats.accepted;
      ++out.stats.accepted_at_attempt[static_cast<std::size_t>(r.record->attempts_used() - 1)];
      out.records.push_back(std::move(*r.record));
    } else {
      ++out.stats.rejected;
      if (r.transport_failure) ++out.stats.transport_failures;
      out.rejected.push_back({dataset.triplets[i], r.attempts, r.parse_failures, r.last_error});
    }
  }
  return out;
}

inline io::ordered_json to_json(const JudgmentStats& s) {
  io::ordered_json j;
  j["attempted"] = s.attempted;
  j["accepted"] = s.accepted;
  j["rejected"] = s.rejected;
  j["parse_failures"] = s.parse_failures;
  j["transport_failures"] = s.transport_failures;
  j["accepted_at_attempt"] = s.accepted_at_attempt;
  j["acceptance_rate"] = s.acceptance_rate();
  return j;
}

inline JudgmentStats stats_from_json(const io::ordered_json& j) {
  JudgmentStats s;
  s.attempted = j.value("attempted", std::size_t{0});
  s.accepted = j.value("accepted", std::size_t{0});
  s.rejected = j.value("rejected", std::size_t{0});
  s.parse_failures = j.value("parse_failures", std::size_t{0});
  s.transport_failures = j.value("transport_failures", std::size_t{0});
  if (j.contains("accepted_at_attempt")) {
    s.accepted_at_attempt = j["accepted_at_attempt"].get<std::vector<std::size_t>>();
  }
  return s;
}

/// Writes `judgments.jsonl`, `rejected.jsonl` and `judgment_stats.json` under `dir`.
inline void write_judgment_dataset(const std::filesystem::path& dir, const JudgmentDataset& ds) {
  std::vector<io::ordered_json> rows;
  rows.reserve(ds.records.size());
  for (const auto& r : ds.records) rows.push_back(io::to_json(r));
  std::vector<io::ordered_json> rejected;
  for (const auto& r : ds.rejected) {
    auto row = io::to_json(r.triplet);
    row["attempts"] = r.attempts;
    row["parse_failures"] = r.parse_failures;
    row["last_error"] = r.last_error;
    rejected.push_back(std::move(row));
  }
  io::write_jsonl(dir / "rejected.jsonl", rejected);
  io::write_json(dir / "judgment_stats.json", to_json(ds.stats));
  // Written last: its presence marks the step complete.
  io::write_jsonl(dir / "judgments.jsonl", rows);
}

inline JudgmentDataset read_judgment_dataset(const std::filesystem::path& dir, int iteration) {
  JudgmentDataset ds;
  ds.iteration = iteration;
  io::read_jsonl(dir / "judgments.jsonl", [&](std::size_t, const io::ordered_json& row) {
    ds.records.push_back(io::record_from_json(row));
  });
  if (std::filesystem::exists(dir / "judgment_stats.json")) {
    ds.stats = stats_from_json(io::read_json(dir / "judgment_stats.json"));
  }
  return ds;
}

}  // namespace stemf
