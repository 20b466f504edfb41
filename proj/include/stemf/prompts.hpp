#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stemf/core.hpp"
#include "stemf/random.hpp"

namespace stemf {

enum class PromptId {
  Judge,
  FaithfulSummary,
  CorruptArticle,
  InjectPredicate,
  InjectEntity,
  InjectCircumstantial,
  InjectLinking,
  InjectOutOfContext,
  XnliQuery,
  Translate,
};

inline constexpr std::array<PromptId, 10> kAllPrompts = {
    PromptId::Judge,          PromptId::FaithfulSummary,     PromptId::CorruptArticle,
    PromptId::InjectPredicate, PromptId::InjectEntity,       PromptId::InjectCircumstantial,
    PromptId::InjectLinking,  PromptId::InjectOutOfContext,  PromptId::XnliQuery,
    PromptId::Translate,
};

inline std::string_view to_string(PromptId id) {
  switch (id) {
    case PromptId::Judge: return "judge";
    case PromptId::FaithfulSummary: return "faithful_summary";
    case PromptId::CorruptArticle: return "corrupt_article";
    case PromptId::InjectPredicate: return "inject_predicate";
    case PromptId::InjectEntity: return "inject_entity";
    case PromptId::InjectCircumstantial: return "inject_circumstantial";
    case PromptId::InjectLinking: return "inject_linking";
    case PromptId::InjectOutOfContext: return "inject_out_of_context";
    case PromptId::XnliQuery: return "xnli_query";
    case PromptId::Translate: return "translate";
  }
  return "";
}

inline PromptId injector_prompt(InjectableErrorType t) {
  switch (t) {
    case InjectableErrorType::Predicate: return PromptId::InjectPredicate;
    case InjectableErrorType::Entity: return PromptId::InjectEntity;
    case InjectableErrorType::Circumstantial: return PromptId::InjectCircumstantial;
    case InjectableErrorType::Linking: return PromptId::InjectLinking;
    case InjectableErrorType::OutOfContext: return PromptId::InjectOutOfContext;
  }
  return PromptId::InjectPredicate;
}

// Placeholder spellings, exactly as they appear in the template bodies.
namespace slot {
inline constexpr std::string_view kText = "<replace text here>";
inline constexpr std::string_view kStatement = "<replace statement here>";
inline constexpr std::string_view kArticle = "<replace article here>";
inline constexpr std::string_view kSentence = "<replace sentence here>";
inline constexpr std::string_view kTitle = "{title}";
inline constexpr std::string_view kPremise = "<replace premise here>";
inline constexpr std::string_view kHypothesis = "<replace hypthesis here>";
}  // namespace slot

namespace detail {

inline constexpr std::string_view kJudgeTemplate =
    R"(You will receive a text followed by a statement. Your task is to assess the factuality of the statement with respect to the source text across nine categories:
* no error: the statement aligns explicitly with the content of the text and is faithful to it.
* out-of-context error: the statement contains information not present in the text.
* entity error: the primary arguments (or their attributes) of the predicate are wrong.
* predicate error: the predicate in the statement is inconsistent with the text.
* circumstantial error: the additional information (like location or time) specifying the circumstance around a predicate is wrong.
* grammatical error: the grammar of the statement is so wrong that it becomes meaningless.
* coreference error: a pronoun or reference with wrong or non-existing antecedent.
* linking error: error in how multiple statements are linked together in the discourse (for example temporal ordering or causal link).
* other error: the statement contains any factuality error which is not defined here.

Instruction:
First, compare the statement with the text.
Second, provide a single sentence explaining which factuality error the statement has.
Third, answer the classified error category for the statement.

Provide your answer in JSON format. The answer should be a dictionary whose keys are "reason", and "category":
{"reason": "your reason", "category": "no error"} or {"reason": "your reason", "category": "which error"}

Text:
<replace text here>
Statement:
<replace statement here>)";

inline constexpr std::string_view kFaithfulSummaryTemplate =
    R"(You will be provided with an article containing instructions to complete a task or deal with a situation. Please provide a concise and faithful summary for the article. Provide the summary as a list of sentences separated by the characters '###'. That is,

### First sentence.
### Second sentence.
### Third sentence.
and so on.

Article:
<replace article here>)";

inline constexpr std::string_view kInjectPredicateTemplate =
    R"(You will be provided with a sentence and a source text. First, individuate the main clause in the sentence. Then, individuate the subject, the predicate, the object and the attributes of the main clause. Your task is to modify the predicate and/or the object of the main clause so that it is inconsistent with the orignal one and the source text. Keep the subject and the attributes similar to the original sentence. Provide your answer in the following format.

### Original sentence: <original sentence>
### Main clause: <main clause>
### Subject: <subject>
### Predicate: <predicate>
### Object: <object>
### Attributes: <attributes>
### Strategy: <how you are going to modify the sentence>
### <modified sentence>

Do not provide additional text after the modified sentence.

Sentence:
<replace sentence here>

Source text:
<replace text here>)";

inline constexpr std::string_view kInjectEntityTemplate =
    R"(You will be provided with a sentence and a source text. First, individuate the main clause in the sentence. Then, individuate the subject, the predicate, the object and the attributes of the main clause. Your task is to modify the subject of the main clause so that it is inconsistent with the original one and the text. Keep the predicate, the object and the attributes similar to the original sentence. Provide your answer in the following format.

### Original sentence: <original sentence>
### Main clause: <main clause>
### Subject: <subject>
### Predicate: <predicate>
### Object: <object>
### Attributes: <attributes>
### Strategy: <how you are going to modify the sentence>
### <modified sentence>

Do not provide additional text after the modified sentence.

Sentence:
<replace sentence here>

Source text:
<replace text here>)";

inline constexpr std::string_view kInjectCircumstantialTemplate =
    R"(You will be provided with a sentence and a source text. First, individuate the main clause in the sentence. Then, individuate the subject, the predicate, the object and the attributes of the main clause. Your task is to modify the attributes (e.g. location, time, manner, direction, modality) of the main clause so that it is inconsistent with the original one and the text. Keep the subject, the predicate, and the object similar to the original sentence. Provide your answer in the following format.

### Original sentence: <original sentence>
### Main clause: <main clause>
### Subject: <subject>
### Predicate: <predicate>
### Object: <object>
### Attributes: <attributes>
### Strategy: <how you are going to modify the sentence>
### <modified sentence>

Do not provide additional text after the modified sentence.

Sentence:
<replace sentence here>

Source text:
<replace text here>)";

inline constexpr std::string_view kInjectLinkingTemplate =
    R"(You will be provided with a sentence and a source text. First, analyze the sencence and individuate its clauses. Then, modify the sentence so that the temporal ordering or the discourse links (e.g. RST relations, discourse connectors) among its clauses are inconsistent with the original sentence and the text. Provide your answer in the following format.

### Original sentence: <original sentence>
### First clause: <first clause>
### Second clause: <second clause>
### ...
### Strategy: <how you are going to modify the sentence>
### <modified sentence>

Do not provide additional text after the modified sentence.

Sentence:
<replace sentence here>

Source text:
<replace text here>)";

inline constexpr std::string_view kInjectOutOfContextTemplate =
    R"(You will be provided with a sentence and a source text. Your task is to modify the sentence so that it contains information on a matter not discussed in the source text. Provide your answer in the following format.

### Original sentence: <original sentence>
### Strategy: <how you are going to modify the sentence>
### <modified sentence>

Do not provide additional text after the modified sentence.

Sentence:
<replace sentence here>

Source text:
<replace text here>)";

inline constexpr std::string_view kCorruptArticleTemplate =
    R"(You will be provided with an article containing instructions to complete a task or deal with a situation. The article is titled "{title}". Please provide contraddicting instructions for the same tasks. Make sure the new instrcutions are self-coherent and plausible. Maintain the same language, structure and style of the article.

Article:
<replace article here>)";

inline constexpr std::string_view kXnliTemplate =
    R"(You will be given two sentences, a premise and a hypothesis. Your task is to determine whether the premise implies, contradicts, or neither implies nor contradicts the hypothesis.

Premise: <replace premise here>
Hypothesis: <replace hypthesis here>)";

inline constexpr std::string_view kTranslateTemplate =
    R"(Translate the following text to English. Output only the translation.

<replace text here>)";

inline std::string_view default_template(PromptId id) {
  switch (id) {
    case PromptId::Judge: return kJudgeTemplate;
    case PromptId::FaithfulSummary: return kFaithfulSummaryTemplate;
    case PromptId::CorruptArticle: return kCorruptArticleTemplate;
    case PromptId::InjectPredicate: return kInjectPredicateTemplate;
    case PromptId::InjectEntity: return kInjectEntityTemplate;
    case PromptId::InjectCircumstantial: return kInjectCircumstantialTemplate;
    case PromptId::InjectLinking: return kInjectLinkingTemplate;
    case PromptId::InjectOutOfContext: return kInjectOutOfContextTemplate;
    case PromptId::XnliQuery: return kXnliTemplate;
    case PromptId::Translate: return kTranslateTemplate;
  }
  return {};
}

inline std::vector<std::string_view> required_slots(PromptId id) {
  switch (id) {
    case PromptId::Judge: return {slot::kText, slot::kStatement};
    case PromptId::FaithfulSummary: return {slot::kArticle};
    case PromptId::CorruptArticle: return {slot::kTitle, slot::kArticle};
    case PromptId::InjectPredicate:
    case PromptId::InjectEntity:
    case PromptId::InjectCircumstantial:
    case PromptId::InjectLinking:
    case PromptId::InjectOutOfContext: return {slot::kSentence, slot::kText};
    case PromptId::XnliQuery: return {slot::kPremise, slot::kHypothesis};
    case PromptId::Translate: return {slot::kText};
  }
  return {};
}

/// Single left-to-right pass: substituted values are never rescanned, so an
/// input that happens to contain a placeholder spelling is copied verbatim.
inline std::string substitute(std::string_view body,
                              std::span<const std::pair<std::string_view, std::string_view>> values) {
  std::string out;
  out.reserve(body.size() + 256);
  std::size_t i = 0;
  while (i < body.size()) {
    bool replaced = false;
    if (body[i] == '<' || body[i] == '{') {
      for (const auto& [placeholder, value] : values) {
        if (body.substr(i, placeholder.size()) == placeholder) {
          out.append(value);
          i += placeholder.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(body[i++]);
  }
  return out;
}

inline void require_text(std::string_view value, std::string_view what) {
  if (trim_view(value).empty()) {
    throw Error(ErrorCode::EmptyInput, std::string(what) + " is empty");
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

enum class NliLabel { Entailment, Contradiction, Neutral };

inline NliLabel parse_nli_label(std::string_view s) {
  const std::string norm = detail::normalize_token(s);
  if (norm == "entailment") return NliLabel::Entailment;
  if (norm == "contradiction") return NliLabel::Contradiction;
  if (norm == "neutral") return NliLabel::Neutral;
  throw Error(ErrorCode::UnknownLabel, "unknown NLI label '" + std::string(s) + "'");
}

/// Accepted-judgment sentences for NLI proxy data.
inline std::string_view nli_target(NliLabel label) {
  switch (label) {
    case NliLabel::Entailment: return "The premise implies the hypothesis";
    case NliLabel::Contradiction: return "The premise contradicts the hypothesis";
    case NliLabel::Neutral: return "The premise neither implies nor contradicts the hypothesis";
  }
  return {};
}

inline bool is_nli_target(std::string_view s) {
  return s == nli_target(NliLabel::Entailment) || s == nli_target(NliLabel::Contradiction) ||
         s == nli_target(NliLabel::Neutral);
}

struct NliPrompt {
  std::string prompt;
  std::string target;
};

/// Immutable set of prompt templates keyed by id. Defaults are compiled in;
/// `load` replaces them from `<dir>/<id>.txt` and records checksums so a run
/// can report whether it used the stock wording.
class PromptSet {
 public:
  PromptSet() {
    for (PromptId id : kAllPrompts) bodies_[id] = std::string(detail::default_template(id));
  }

  static const PromptSet& defaults() {
    static const PromptSet set;
    return set;
  }

  /// Missing files keep the compiled-in default; a present file must carry
  /// every placeholder its template needs.
  static PromptSet load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
      throw Error(ErrorCode::FileNotFound, "prompt directory not found: " + dir.string());
    }
    PromptSet set;
    for (PromptId id : kAllPrompts) {
      const auto file = dir / (std::string(to_string(id)) + ".txt");
      if (!std::filesystem::exists(file)) continue;
      std::ifstream in(file, std::ios::binary);
      std::stringstream buf;
      buf << in.rdbuf();
      std::string body = buf.str();
      for (std::string_view placeholder : detail::required_slots(id)) {
        if (body.find(placeholder) == std::string::npos) {
          throw Error(ErrorCode::InvalidConfig, file.string() + " lacks placeholder " +
                                                    std::string(placeholder));
        }
      }
      set.bodies_[id] = std::move(body);
    }
    return set;
  }

  const std::string& body(PromptId id) const { return bodies_.at(id); }

  std::string checksum(PromptId id) const { return detail::hex64(fnv1a64(body(id))); }

  bool is_default(PromptId id) const { return body(id) == detail::default_template(id); }

  std::string render_judge(std::string_view document, std::string_view statement) const {
    detail::require_text(document, "document");
    detail::require_text(statement, "statement");
    const std::pair<std::string_view, std::string_view> values[] = {
        {slot::kText, document}, {slot::kStatement, statement}};
    return detail::substitute(body(PromptId::Judge), values);
  }

  std::string render_faithful_summary(std::string_view article) const {
    detail::require_text(article, "article");
    const std::pair<std::string_view, std::string_view> values[] = {{slot::kArticle, article}};
    return detail::substitute(body(PromptId::FaithfulSummary), values);
  }

  std::string render_corrupt_article(const Document& document) const {
    detail::require_text(document.body, "article body");
    const std::pair<std::string_view, std::string_view> values[] = {
        {slot::kTitle, document.title}, {slot::kArticle, document.body}};
    return detail::substitute(body(PromptId::CorruptArticle), values);
  }

  std::string render_injector(InjectableErrorType error_type, std::string_view sentence,
                              std::string_view document) const {
    detail::require_text(sentence, "sentence");
    detail::require_text(document, "document");
    const std::pair<std::string_view, std::string_view> values[] = {
        {slot::kSentence, sentence}, {slot::kText, document}};
    return detail::substitute(body(injector_prompt(error_type)), values);
  }

  NliPrompt render_xnli(std::string_view premise, std::string_view hypothesis,
                        std::string_view label) const {
    const NliLabel parsed = parse_nli_label(label);
    detail::require_text(premise, "premise");
    detail::require_text(hypothesis, "hypothesis");
    const std::pair<std::string_view, std::string_view> values[] = {
        {slot::kPremise, premise}, {slot::kHypothesis, hypothesis}};
    return NliPrompt{detail::substitute(body(PromptId::XnliQuery), values),
                     std::string(nli_target(parsed))};
  }

  std::string render_translate(std::string_view text) const {
    detail::require_text(text, "text");
    const std::pair<std::string_view, std::string_view> values[] = {{slot::kText, text}};
    return detail::substitute(body(PromptId::Translate), values);
  }

  /// Writes every template to `<dir>/<id>.txt`.
  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    for (PromptId id : kAllPrompts) {
      std::ofstream out(dir / (std::string(to_string(id)) + ".txt"), std::ios::binary);
      out << body(id);
    }
  }

 private:
  std::map<PromptId, std::string> bodies_;
};

}  // namespace stemf
