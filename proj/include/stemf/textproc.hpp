#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemf/core.hpp"

namespace stemf {

// ---------------------------------------------------------------------------
// `###`-separated summaries
// ---------------------------------------------------------------------------

struct SummarySentences {
  std::vector<std::string> sentences;
};

/// Splits model output on `###`. Text before the first marker is preamble and
/// is dropped; segments are trimmed and empty ones removed.
inline SummarySentences split_hash_list(std::string_view raw) {
  static constexpr std::string_view kMarker = "###";
  SummarySentences out;
  std::size_t pos = raw.find(kMarker);
  while (pos != std::string_view::npos) {
    const std::size_t start = pos + kMarker.size();
    const std::size_t next = raw.find(kMarker, start);
    const std::string_view segment =
        raw.substr(start, next == std::string_view::npos ? std::string_view::npos : next - start);
    std::string trimmed = detail::trim(segment);
    if (!trimmed.empty()) out.sentences.push_back(std::move(trimmed));
    pos = next;
  }
  if (out.sentences.empty()) {
    throw Error(ErrorCode::EmptyList, "no non-empty '###' segment in model output");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Judgment JSON
// ---------------------------------------------------------------------------

/// Canonical serialization: the exact key order and spacing of the judge
/// prompt's answer schema.
inline std::string serialize_judgment(const Judgment& j) {
  const nlohmann::json reason = j.reason();
  return "{\"reason\": " + reason.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) +
         ", \"category\": \"" + std::string(canonical_string(j.category())) + "\"}";
}

namespace detail {

inline constexpr std::size_t kMaxJsonCandidates = 256;

/// Start/end offsets of every balanced `{...}` region, ordered by start.
/// Quotes only open string mode inside a brace region, so apostrophes and
/// quotes in surrounding prose do not derail the scan.
inline std::vector<std::pair<std::size_t, std::size_t>> brace_regions(std::string_view s) {
  std::vector<std::pair<std::size_t, std::size_t>> regions;
  std::vector<std::size_t> open;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"' && !open.empty()) {
      in_string = true;
    } else if (c == '{') {
      open.push_back(i);
    } else if (c == '}' && !open.empty()) {
      regions.emplace_back(open.back(), i);
      open.pop_back();
    }
  }
  std::sort(regions.begin(), regions.end());
  return regions;
}

inline std::vector<std::string_view> code_fence_interiors(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = s.find("```", pos);
    if (open == std::string_view::npos) break;
    std::size_t body = open + 3;
    const std::size_t eol = s.find('\n', body);
    const std::size_t close = s.find("```", body);
    if (close == std::string_view::npos) break;
    // Skip an info string such as "json" on the opening fence line.
    if (eol != std::string_view::npos && eol < close) body = eol + 1;
    out.push_back(s.substr(body, close - body));
    pos = close + 3;
  }
  return out;
}

enum class JudgmentScan { NotFound, ObjectWithoutKeys, Found };

struct JudgmentCandidate {
  JudgmentScan status = JudgmentScan::NotFound;
  nlohmann::json object;
};

inline void consider_json(std::string_view text, JudgmentCandidate& best) {
  nlohmann::json parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (!parsed.is_object()) return;
  if (parsed.contains("reason") && parsed.contains("category")) {
    best.status = JudgmentScan::Found;
    best.object = std::move(parsed);
  } else if (best.status == JudgmentScan::NotFound) {
    best.status = JudgmentScan::ObjectWithoutKeys;
  }
}

inline JudgmentCandidate find_judgment_object(std::string_view raw) {
  JudgmentCandidate best;
  std::size_t tried = 0;
  for (const auto& [begin, end] : brace_regions(raw)) {
    if (++tried > kMaxJsonCandidates) break;
    consider_json(raw.substr(begin, end - begin + 1), best);
    if (best.status == JudgmentScan::Found) return best;
  }
  for (std::string_view fence : code_fence_interiors(raw)) {
    consider_json(fence, best);
    if (best.status == JudgmentScan::Found) return best;
  }
  return best;
}

}  // namespace detail

/// Extracts the first JSON object with "reason" and "category" from
/// arbitrary model output. Fails with NoJsonFound, MissingKey or
/// InvalidCategory; never with anything else.
inline Judgment parse_judgment(std::string_view raw) {
  const auto candidate = detail::find_judgment_object(raw);
  switch (candidate.status) {
    case detail::JudgmentScan::NotFound:
      throw Error(ErrorCode::NoJsonFound, "no JSON object in model output");
    case detail::JudgmentScan::ObjectWithoutKeys:
      throw Error(ErrorCode::MissingKey, "JSON object lacks \"reason\" and \"category\"");
    case detail::JudgmentScan::Found:
      break;
  }
  const auto& reason = candidate.object["reason"];
  const auto& category = candidate.object["category"];
  if (!reason.is_string() || detail::trim_view(reason.get_ref<const std::string&>()).empty()) {
    throw Error(ErrorCode::MissingKey, "\"reason\" is not a non-empty string");
  }
  if (!category.is_string()) {
    throw Error(ErrorCode::InvalidCategory, "\"category\" is not a string");
  }
  const auto parsed = parse_category(category.get_ref<const std::string&>());
  if (!parsed) {
    throw Error(ErrorCode::InvalidCategory,
                "unknown category '" + category.get_ref<const std::string&>() + "'");
  }
  return Judgment(reason.get<std::string>(), *parsed);
}

// ---------------------------------------------------------------------------
// Direct-corruption responses
// ---------------------------------------------------------------------------

struct CorruptionResponse {
  std::string modified_sentence;
  std::optional<std::string> strategy_note;
};

namespace detail {

inline constexpr std::array<std::string_view, 12> kCorruptionFieldLabels = {
    "original sentence", "main clause",  "subject",       "predicate",
    "object",            "attributes",   "strategy",      "first clause",
    "second clause",     "third clause", "fourth clause", "fifth clause",
};

inline std::optional<std::string_view> field_label(std::string_view content) {
  const std::size_t colon = content.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  const std::string label = normalize_token(content.substr(0, colon));
  for (std::string_view known : kCorruptionFieldLabels) {
    if (label == known) return known;
  }
  return std::nullopt;
}

}  // namespace detail

/// The modified sentence is the last `### ` line that is not one of the
/// labeled scaffold fields.
inline CorruptionResponse parse_corruption_response(std::string_view raw) {
  std::optional<std::string> modified;
  std::optional<std::string> strategy;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t eol = raw.find('\n', pos);
    if (eol == std::string_view::npos) eol = raw.size();
    std::string_view line = raw.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!detail::starts_with(line, "### ")) continue;
    const std::string_view content = line.substr(4);
    if (const auto label = detail::field_label(content)) {
      if (*label == "strategy") {
        std::string note = detail::trim(content.substr(content.find(':') + 1));
        if (!note.empty()) strategy = std::move(note);
      }
      continue;
    }
    std::string text = detail::trim(content);
    if (!text.empty()) modified = std::move(text);
  }
  if (!modified) {
    throw Error(ErrorCode::NoModifiedSentence, "no unlabeled '### ' line in model output");
  }
  return CorruptionResponse{std::move(*modified), std::move(strategy)};
}

// ---------------------------------------------------------------------------
// Sentence splitting
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::array<std::string_view, 6> kTerminators = {".", "!", "?", "।",
                                                                 "؟", "‼"};
inline constexpr std::array<std::string_view, 9> kClosers = {"\"", "'", ")", "]",
                                                             "’", "”", "»",
                                                             "」", "』"};

inline std::size_t match_any(std::string_view s, std::size_t i,
                             std::span<const std::string_view> options) {
  for (std::string_view opt : options) {
    if (s.substr(i, opt.size()) == opt) return opt.size();
  }
  return 0;
}

inline std::size_t utf8_codepoints(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline const std::unordered_set<std::string>& abbreviations(const LanguageCode& lang) {
  static const std::unordered_set<std::string> en = {
      "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "e.g", "i.e", "approx", "fig"};
  static const std::unordered_set<std::string> fr = {"m", "mme", "mlle", "mm", "dr",
                                                     "pr", "p.ex", "cf", "env"};
  static const std::unordered_set<std::string> de = {"z.b", "bzw", "d.h", "u.a",  "ca", "nr",
                                                     "dr",  "prof", "evtl", "ggf", "inkl", "vgl"};
  static const std::unordered_set<std::string> es = {"sr", "sra", "srta", "dr", "dra",
                                                     "ud", "uds", "p.ej", "pág", "núm"};
  static const std::unordered_set<std::string> it = {"sig", "sigg", "dott", "ing",
                                                     "avv", "prof", "pag", "dr"};
  static const std::unordered_set<std::string> none;
  const std::string& code = lang.str();
  if (code == "en") return en;
  if (code == "fr") return fr;
  if (code == "de") return de;
  if (code == "es") return es;
  if (code == "it") return it;
  return none;
}

/// True when the period ending at `dot` belongs to an abbreviation or an
/// initial rather than ending a sentence.
inline bool guarded_period(std::string_view s, std::size_t dot, const LanguageCode& lang) {
  std::size_t begin = dot;
  while (begin > 0 && !is_ascii_space(s[begin - 1])) --begin;
  std::string_view token = s.substr(begin, dot - begin);
  while (!token.empty() && (token.front() == '(' || token.front() == '"' ||
                            token.front() == '\'' || token.front() == '[')) {
    token.remove_prefix(1);
  }
  if (token.empty()) return false;
  if (utf8_codepoints(token) == 1) {
    const auto c = static_cast<unsigned char>(token.front());
    return std::isalpha(c) || c >= 0x80;
  }
  const std::string lowered = ascii_lower(token);
  if (abbreviations(lang).contains(lowered)) return true;
  if (lang.str() != "en" && abbreviations(LanguageCode::parse("en")).contains(lowered)) {
    return true;
  }
  return false;
}

}  // namespace detail

/// Rule-based segmentation on terminal punctuation followed by whitespace or
/// end of text. Output pieces are contiguous slices of the input, trimmed.
inline std::vector<std::string> split_sentences(std::string_view paragraph,
                                                const LanguageCode& language) {
  if (detail::trim_view(paragraph).empty()) {
    throw Error(ErrorCode::EmptyInput, "paragraph is empty");
  }
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < paragraph.size()) {
    const std::size_t first = detail::match_any(paragraph, i, detail::kTerminators);
    if (first == 0) {
      ++i;
      continue;
    }
    const bool single_period = paragraph[i] == '.';
    std::size_t end = i + first;
    std::size_t run = 1;
    while (end < paragraph.size()) {
      std::size_t n = detail::match_any(paragraph, end, detail::kTerminators);
      if (n > 0) {
        ++run;
      } else {
        n = detail::match_any(paragraph, end, detail::kClosers);
      }
      if (n == 0) break;
      end += n;
    }
    const bool at_boundary = end == paragraph.size() || detail::is_ascii_space(paragraph[end]);
    if (at_boundary && !(single_period && run == 1 && detail::guarded_period(paragraph, i, language))) {
      std::string sentence = detail::trim(paragraph.substr(start, end - start));
      if (!sentence.empty()) out.push_back(std::move(sentence));
      start = end;
    }
    i = end;
  }
  std::string tail = detail::trim(paragraph.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

}  // namespace stemf
