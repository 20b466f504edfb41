#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stemf/core.hpp"

namespace stemf::io {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline std::string dump(const ordered_json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Writes via a temporary sibling and rename, so a present file is complete.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_jsonl(const fs::path& path, const std::vector<ordered_json>& rows) {
  std::string content;
  for (const auto& row : rows) {
    content += dump(row);
    content += '\n';
  }
  write_file_atomic(path, content);
}

inline void write_json(const fs::path& path, const ordered_json& doc) {
  write_file_atomic(path, doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
}

inline ordered_json read_json(const fs::path& path) {
  auto doc = ordered_json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::MalformedRow, path.string() + " is not valid JSON");
  return doc;
}

/// Calls `row(line_number, value)` for every non-blank line. Lines that are not
/// JSON objects go to `bad(line_number, reason)`; the default rethrows.
inline void read_jsonl(
    const fs::path& path, const std::function<void(std::size_t, const ordered_json&)>& row,
    const std::function<void(std::size_t, const std::string&)>& bad = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim_view(line).empty()) continue;
    auto value = ordered_json::parse(line, nullptr, false);
    if (value.is_discarded() || !value.is_object()) {
      const std::string reason = path.string() + ":" + std::to_string(line_no) + ": not a JSON object";
      if (bad) {
        bad(line_no, reason);
        continue;
      }
      throw Error(ErrorCode::MalformedRow, reason);
    }
    row(line_no, value);
  }
}

// ---------------------------------------------------------------------------
// Field accessors that raise MalformedRow instead of json exceptions
// ---------------------------------------------------------------------------

inline const ordered_json& field(const ordered_json& row, const char* key) {
  const auto it = row.find(key);
  if (it == row.end()) throw Error(ErrorCode::MalformedRow, std::string("missing field '") + key + "'");
  return *it;
}

inline std::string string_field(const ordered_json& row, const char* key) {
  const auto& v = field(row, key);
  if (!v.is_string()) throw Error(ErrorCode::MalformedRow, std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

inline long long int_field(const ordered_json& row, const char* key) {
  const auto& v = field(row, key);
  if (!v.is_number_integer()) {
    throw Error(ErrorCode::MalformedRow, std::string("field '") + key + "' is not an integer");
  }
  return v.get<long long>();
}

inline FaithfulnessLabel label_field(const ordered_json& row, const char* key) {
  const long long v = int_field(row, key);
  if (v != 0 && v != 1) throw Error(ErrorCode::MalformedRow, std::string("field '") + key + "' must be 0 or 1");
  return label_from_int(v);
}

// ---------------------------------------------------------------------------
// Domain records
// ---------------------------------------------------------------------------

inline ordered_json to_json(const Document& d) {
  ordered_json j;
  j["id"] = d.id;
  j["language"] = d.language.str();
  j["title"] = d.title;
  j["text"] = d.body;
  return j;
}

inline Document document_from_json(const ordered_json& row) {
  Document d;
  d.id = string_field(row, "id");
  try {
    d.language = LanguageCode::parse(string_field(row, "language"));
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedRow, e.what());
  }
  d.title = row.contains("title") && row["title"].is_string() ? row["title"].get<std::string>() : "";
  d.body = string_field(row, "text");
  if (!d.valid()) throw Error(ErrorCode::MalformedRow, "document '" + d.id + "' has an empty id or body");
  return d;
}

inline void put_provenance(ordered_json& j, const Provenance& p) {
  j["strategy"] = std::string(to_string(p.strategy));
  j["injected_error"] = p.injected_error ? ordered_json(std::string(to_string(*p.injected_error)))
                                         : ordered_json(nullptr);
  j["source_summary_index"] = p.source_summary_index;
}

inline Provenance provenance_from_json(const ordered_json& row) {
  Provenance p;
  try {
    p.strategy = parse_strategy(string_field(row, "strategy"));
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedRow, e.what());
  }
  const auto& err = field(row, "injected_error");
  if (!err.is_null()) {
    if (!err.is_string()) throw Error(ErrorCode::MalformedRow, "injected_error must be a string or null");
    const auto t = parse_injectable(err.get<std::string>());
    if (!t) throw Error(ErrorCode::MalformedRow, "unknown injected_error '" + err.get<std::string>() + "'");
    p.injected_error = *t;
  }
  p.source_summary_index = static_cast<int>(int_field(row, "source_summary_index"));
  return p;
}

inline ordered_json to_json(const SentenceTriplet& t) {
  ordered_json j;
  j["document_id"] = t.document_id();
  j["sentence"] = t.sentence();
  j["label"] = to_int(t.label());
  put_provenance(j, t.provenance());
  return j;
}

inline SentenceTriplet triplet_from_json(const ordered_json& row) {
  try {
    return SentenceTriplet(string_field(row, "document_id"), string_field(row, "sentence"),
                           label_field(row, "label"), provenance_from_json(row));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedRow) throw;
    throw Error(ErrorCode::MalformedRow, e.what());
  }
}

inline ordered_json to_json(const JudgmentRecord& r) {
  ordered_json j;
  j["document_id"] = r.triplet().document_id();
  j["sentence"] = r.triplet().sentence();
  j["label"] = to_int(r.triplet().label());
  j["reason"] = r.judgment().reason();
  j["category"] = std::string(canonical_string(r.judgment().category()));
  j["attempts_used"] = r.attempts_used();
  put_provenance(j, r.triplet().provenance());
  return j;
}

inline JudgmentRecord record_from_json(const ordered_json& row) {
  try {
    const auto category = parse_category(string_field(row, "category"));
    if (!category) throw Error(ErrorCode::MalformedRow, "unknown category");
    return JudgmentRecord(triplet_from_json(row), Judgment(string_field(row, "reason"), *category),
                          static_cast<int>(int_field(row, "attempts_used")));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedRow) throw;
    throw Error(ErrorCode::MalformedRow, e.what());
  }
}

inline std::vector<Document> read_documents(const fs::path& path) {
  std::vector<Document> out;
  read_jsonl(path, [&](std::size_t line, const ordered_json& row) {
    try {
      out.push_back(document_from_json(row));
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedRow, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

inline void write_documents(const fs::path& path, const std::vector<Document>& docs) {
  std::vector<ordered_json> rows;
  rows.reserve(docs.size());
  for (const auto& d : docs) rows.push_back(to_json(d));
  write_jsonl(path, rows);
}

}  // namespace stemf::io
