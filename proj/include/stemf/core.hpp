#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stemf {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  EmptyList,
  NoJsonFound,
  MissingKey,
  InvalidCategory,
  NoModifiedSentence,
  EmptyInput,
  UnknownLabel,
  Timeout,
  TransportError,
  RateLimited,
  MalformedResponse,
  InsufficientCorpus,
  InsufficientHumanData,
  MalformedRow,
  FileNotFound,
  DegenerateRange,
  TrainerFailed,
  UndefinedMetric,
  SynthesisFailed,
  InvalidConfig,
  InvalidArgument,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::NoJsonFound: return "NoJsonFound";
    case ErrorCode::MissingKey: return "MissingKey";
    case ErrorCode::InvalidCategory: return "InvalidCategory";
    case ErrorCode::NoModifiedSentence: return "NoModifiedSentence";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::InsufficientCorpus: return "InsufficientCorpus";
    case ErrorCode::InsufficientHumanData: return "InsufficientHumanData";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::TrainerFailed: return "TrainerFailed";
    case ErrorCode::UndefinedMetric: return "UndefinedMetric";
    case ErrorCode::SynthesisFailed: return "SynthesisFailed";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every declared failure in the pipeline is an Error carrying a code.
/// Anything else escaping a public function is a bug.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Value-or-error slot, used where one failure must not abort a batch.
template <typename T>
class Outcome {
 public:
  Outcome(T value) : value_(std::move(value)) {}  // NOLINT(implicit)
  Outcome(Error error) : error_(std::move(error)) {}  // NOLINT(implicit)

  bool ok() const noexcept { return value_.has_value(); }
  explicit operator bool() const noexcept { return ok(); }

  const T& value() const {
    if (!value_) throw *error_;
    return *value_;
  }
  T& value() {
    if (!value_) throw *error_;
    return *value_;
  }
  const Error& error() const { return *error_; }

 private:
  std::optional<T> value_;
  std::optional<Error> error_;
};

// ---------------------------------------------------------------------------
// String helpers shared by parsers and validators
// ---------------------------------------------------------------------------

namespace detail {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim_view(std::string_view s) {
  while (!s.empty() && is_ascii_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_ascii_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
inline std::string normalize_token(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : trim_view(s)) {
    if (is_ascii_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Lowercase two-letter language tag (en, fr, de, hi, es, ar, it, ...).
class LanguageCode {
 public:
  LanguageCode() = default;

  static LanguageCode parse(std::string_view code) {
    if (code.size() != 2 || !std::islower(static_cast<unsigned char>(code[0])) ||
        !std::islower(static_cast<unsigned char>(code[1]))) {
      throw Error(ErrorCode::InvalidArgument,
                  "language code must be two lowercase letters, got '" + std::string(code) + "'");
    }
    LanguageCode out;
    out.code_ = std::string(code);
    return out;
  }

  const std::string& str() const noexcept { return code_; }

  friend bool operator==(const LanguageCode&, const LanguageCode&) = default;
  friend auto operator<=>(const LanguageCode&, const LanguageCode&) = default;

 private:
  std::string code_{"en"};
};

struct Document {
  std::string id;
  LanguageCode language;
  std::string title;
  std::string body;

  bool valid() const { return !id.empty() && !detail::trim_view(body).empty(); }
};

enum class FaithfulnessLabel : int { Unfaithful = 0, Faithful = 1 };

inline int to_int(FaithfulnessLabel l) { return static_cast<int>(l); }

inline FaithfulnessLabel label_from_int(long long v) {
  if (v == 0) return FaithfulnessLabel::Unfaithful;
  if (v == 1) return FaithfulnessLabel::Faithful;
  throw Error(ErrorCode::InvalidArgument, "label must be 0 or 1, got " + std::to_string(v));
}

enum class ErrorCategory {
  NoError,
  OutOfContext,
  Entity,
  Predicate,
  Circumstantial,
  Grammatical,
  Coreference,
  Linking,
  Other,
};

inline constexpr std::array<ErrorCategory, 9> kAllCategories = {
    ErrorCategory::NoError,        ErrorCategory::OutOfContext, ErrorCategory::Entity,
    ErrorCategory::Predicate,      ErrorCategory::Circumstantial, ErrorCategory::Grammatical,
    ErrorCategory::Coreference,    ErrorCategory::Linking,      ErrorCategory::Other,
};

/// Spellings used verbatim by the judge prompt.
inline std::string_view canonical_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::NoError: return "no error";
    case ErrorCategory::OutOfContext: return "out-of-context error";
    case ErrorCategory::Entity: return "entity error";
    case ErrorCategory::Predicate: return "predicate error";
    case ErrorCategory::Circumstantial: return "circumstantial error";
    case ErrorCategory::Grammatical: return "grammatical error";
    case ErrorCategory::Coreference: return "coreference error";
    case ErrorCategory::Linking: return "linking error";
    case ErrorCategory::Other: return "other error";
  }
  return "other error";
}

/// Case-insensitive after whitespace normalization. Anything else is rejected.
inline std::optional<ErrorCategory> parse_category(std::string_view text) {
  const std::string norm = detail::normalize_token(text);
  for (ErrorCategory c : kAllCategories) {
    if (norm == canonical_string(c)) return c;
  }
  return std::nullopt;
}

inline FaithfulnessLabel derive_prediction(ErrorCategory category) {
  return category == ErrorCategory::NoError ? FaithfulnessLabel::Faithful
                                            : FaithfulnessLabel::Unfaithful;
}

enum class InjectableErrorType { Predicate, Entity, Circumstantial, Linking, OutOfContext };

inline constexpr std::array<InjectableErrorType, 5> kAllInjectable = {
    InjectableErrorType::Predicate, InjectableErrorType::Entity,
    InjectableErrorType::Circumstantial, InjectableErrorType::Linking,
    InjectableErrorType::OutOfContext,
};

inline ErrorCategory to_category(InjectableErrorType t) {
  switch (t) {
    case InjectableErrorType::Predicate: return ErrorCategory::Predicate;
    case InjectableErrorType::Entity: return ErrorCategory::Entity;
    case InjectableErrorType::Circumstantial: return ErrorCategory::Circumstantial;
    case InjectableErrorType::Linking: return ErrorCategory::Linking;
    case InjectableErrorType::OutOfContext: return ErrorCategory::OutOfContext;
  }
  return ErrorCategory::Other;
}

inline std::string_view to_string(InjectableErrorType t) {
  switch (t) {
    case InjectableErrorType::Predicate: return "predicate";
    case InjectableErrorType::Entity: return "entity";
    case InjectableErrorType::Circumstantial: return "circumstantial";
    case InjectableErrorType::Linking: return "linking";
    case InjectableErrorType::OutOfContext: return "out-of-context";
  }
  return "";
}

inline std::optional<InjectableErrorType> parse_injectable(std::string_view s) {
  for (auto t : kAllInjectable) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

enum class Strategy { Direct, Indirect, Human };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Direct: return "direct";
    case Strategy::Indirect: return "indirect";
    case Strategy::Human: return "human";
  }
  return "";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "direct") return Strategy::Direct;
  if (s == "indirect") return Strategy::Indirect;
  if (s == "human") return Strategy::Human;
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(s) + "'");
}

struct Provenance {
  Strategy strategy = Strategy::Indirect;
  std::optional<InjectableErrorType> injected_error;
  int source_summary_index = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// A (document, sentence, label) item of the sentence dataset.
class SentenceTriplet {
 public:
  SentenceTriplet(std::string document_id, std::string sentence, FaithfulnessLabel label,
                  Provenance provenance)
      : document_id_(std::move(document_id)),
        sentence_(std::move(sentence)),
        label_(label),
        provenance_(provenance) {
    if (detail::trim_view(sentence_).empty()) {
      throw Error(ErrorCode::EmptyInput, "triplet sentence is empty");
    }
    if (provenance_.source_summary_index < 0) {
      throw Error(ErrorCode::InvalidArgument, "source_summary_index must be >= 0");
    }
    const bool needs_error =
        provenance_.strategy == Strategy::Direct && label_ == FaithfulnessLabel::Unfaithful;
    if (needs_error != provenance_.injected_error.has_value()) {
      throw Error(ErrorCode::InvalidArgument,
                  "injected_error must be set exactly for direct-strategy unfaithful triplets");
    }
  }

  const std::string& document_id() const noexcept { return document_id_; }
  const std::string& sentence() const noexcept { return sentence_; }
  FaithfulnessLabel label() const noexcept { return label_; }
  const Provenance& provenance() const noexcept { return provenance_; }

  friend bool operator==(const SentenceTriplet&, const SentenceTriplet&) = default;

 private:
  std::string document_id_;
  std::string sentence_;
  FaithfulnessLabel label_;
  Provenance provenance_;
};

/// Explanation plus category. The binary prediction is derived, never stored.
class Judgment {
 public:
  Judgment(std::string reason, ErrorCategory category)
      : reason_(std::move(reason)), category_(category) {
    if (detail::trim_view(reason_).empty()) {
      throw Error(ErrorCode::MissingKey, "judgment reason is empty");
    }
  }

  const std::string& reason() const noexcept { return reason_; }
  ErrorCategory category() const noexcept { return category_; }
  FaithfulnessLabel prediction() const noexcept { return derive_prediction(category_); }

  friend bool operator==(const Judgment&, const Judgment&) = default;

 private:
  std::string reason_;
  ErrorCategory category_;
};

/// Only judgments that agree with the pseudo-label can become records.
class JudgmentRecord {
 public:
  JudgmentRecord(SentenceTriplet triplet, Judgment judgment, int attempts_used)
      : triplet_(std::move(triplet)), judgment_(std::move(judgment)), attempts_used_(attempts_used) {
    if (judgment_.prediction() != triplet_.label()) {
      throw Error(ErrorCode::InvalidArgument, "judgment prediction disagrees with triplet label");
    }
    if (attempts_used_ < 1) {
      throw Error(ErrorCode::InvalidArgument, "attempts_used must be >= 1");
    }
  }

  const SentenceTriplet& triplet() const noexcept { return triplet_; }
  const Judgment& judgment() const noexcept { return judgment_; }
  int attempts_used() const noexcept { return attempts_used_; }

  friend bool operator==(const JudgmentRecord&, const JudgmentRecord&) = default;

 private:
  SentenceTriplet triplet_;
  Judgment judgment_;
  int attempts_used_;
};

struct XnliVariation {
  std::string path;
  std::size_t count = 20000;
};

struct HumanLabelVariation {
  std::string path;
  double fraction = 0.5;
};

struct LoopConfig {
  int iterations = 5;
  std::size_t docs_per_iteration = 1000;
  std::vector<LanguageCode> languages;
  Strategy strategy = Strategy::Indirect;
  int max_judgment_attempts = 3;
  std::uint64_t seed = 0;
  bool central_layers = false;
  std::optional<XnliVariation> xnli;
  std::optional<HumanLabelVariation> human_labels;

  void validate() const {
    if (iterations < 1) throw Error(ErrorCode::InvalidConfig, "iterations must be >= 1");
    if (languages.empty()) throw Error(ErrorCode::InvalidConfig, "languages must not be empty");
    if (docs_per_iteration < languages.size()) {
      throw Error(ErrorCode::InvalidConfig, "docs_per_iteration must be >= number of languages");
    }
    if (strategy == Strategy::Human) {
      throw Error(ErrorCode::InvalidConfig, "strategy must be direct or indirect");
    }
    if (max_judgment_attempts < 1) {
      throw Error(ErrorCode::InvalidConfig, "max_judgment_attempts must be >= 1");
    }
    for (std::size_t i = 0; i < languages.size(); ++i) {
      for (std::size_t j = i + 1; j < languages.size(); ++j) {
        if (languages[i] == languages[j]) {
          throw Error(ErrorCode::InvalidConfig, "duplicate language " + languages[i].str());
        }
      }
    }
    if (human_labels && (human_labels->fraction <= 0.0 || human_labels->fraction > 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "human_labels.fraction must be in (0, 1]");
    }
  }
};

}  // namespace stemf
