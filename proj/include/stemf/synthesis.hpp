#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "stemf/backend.hpp"
#include "stemf/core.hpp"
#include "stemf/io.hpp"
#include "stemf/log.hpp"
#include "stemf/parallel.hpp"
#include "stemf/prompts.hpp"
#include "stemf/random.hpp"
#include "stemf/textproc.hpp"

namespace stemf {

// ---------------------------------------------------------------------------
// Corpus and document selection
// ---------------------------------------------------------------------------

/// Documents grouped by language, each group sorted by id.
class Corpus {
 public:
  Corpus() = default;

  static Corpus from_documents(std::vector<Document> docs) {
    Corpus c;
    for (auto& d : docs) {
      if (!d.valid()) throw Error(ErrorCode::MalformedRow, "invalid document '" + d.id + "'");
      if (c.index_.contains(d.id)) {
        throw Error(ErrorCode::MalformedRow, "duplicate document id '" + d.id + "'");
      }
      c.index_.emplace(d.id, Location{d.language, 0});
      c.by_language_[d.language].push_back(std::move(d));
    }
    for (auto& [lang, list] : c.by_language_) {
      std::sort(list.begin(), list.end(),
                [](const Document& a, const Document& b) { return a.id < b.id; });
      for (std::size_t i = 0; i < list.size(); ++i) c.index_[list[i].id].offset = i;
    }
    return c;
  }

  static Corpus load(const std::vector<std::filesystem::path>& files) {
    std::vector<Document> docs;
    for (const auto& f : files) {
      auto part = io::read_documents(f);
      docs.insert(docs.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
    }
    return from_documents(std::move(docs));
  }

  std::size_t count(const LanguageCode& lang) const {
    const auto it = by_language_.find(lang);
    return it == by_language_.end() ? 0 : it->second.size();
  }

  std::size_t size() const { return index_.size(); }

  const std::vector<Document>& documents(const LanguageCode& lang) const {
    static const std::vector<Document> empty;
    const auto it = by_language_.find(lang);
    return it == by_language_.end() ? empty : it->second;
  }

  const Document* find(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    return &by_language_.at(it->second.language)[it->second.offset];
  }

 private:
  struct Location {
    LanguageCode language;
    std::size_t offset;
  };
  std::map<LanguageCode, std::vector<Document>> by_language_;
  std::unordered_map<std::string, Location> index_;
};

struct DocumentBatch {
  std::vector<Document> documents;
  int iteration = 1;
};

/// Per-language quota: an equal share, with the remainder handed out one per
/// language in configured order.
inline std::vector<std::size_t> language_quotas(std::size_t total, std::size_t languages) {
  if (languages == 0) throw Error(ErrorCode::InvalidConfig, "no languages configured");
  std::vector<std::size_t> quotas(languages, total / languages);
  for (std::size_t i = 0; i < total % languages; ++i) ++quotas[i];
  return quotas;
}

/// Seeded uniform sampling without replacement within each language. The
/// stream for (seed, iteration, language) is independent of the others.
inline DocumentBatch select_documents(const Corpus& corpus, const LoopConfig& config,
                                      int iteration) {
  const auto quotas = language_quotas(config.docs_per_iteration, config.languages.size());
  for (std::size_t i = 0; i < config.languages.size(); ++i) {
    const auto& lang = config.languages[i];
    if (corpus.count(lang) < quotas[i]) {
      throw Error(ErrorCode::InsufficientCorpus,
                  lang.str() + ": need " + std::to_string(quotas[i]) + " documents, have " +
                      std::to_string(corpus.count(lang)));
    }
  }
  DocumentBatch batch;
  batch.iteration = iteration;
  batch.documents.reserve(config.docs_per_iteration);
  for (std::size_t i = 0; i < config.languages.size(); ++i) {
    const auto& lang = config.languages[i];
    const auto& pool = corpus.documents(lang);
    Rng rng(mix_seed(config.seed, "select", static_cast<std::uint64_t>(iteration), lang.str()));
    for (std::size_t idx : rng.sample_indices(pool.size(), quotas[i])) {
      batch.documents.push_back(pool[idx]);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Per-document generation
// ---------------------------------------------------------------------------

struct CorruptedSentence {
  std::string sentence;
  std::optional<InjectableErrorType> injected_error;
  int source_index = 0;
};

/// Everything the auxiliary model produced for one document. Entries are
/// generated once and reused by every iteration that samples the document.
struct DocumentSynthesis {
  std::string document_id;
  Strategy strategy = Strategy::Indirect;
  std::vector<std::string> faithful;
  std::optional<std::string> corrupted_document;
  std::vector<CorruptedSentence> corrupted;
  std::vector<std::string> dropped;
};

inline io::ordered_json to_json(const DocumentSynthesis& s) {
  io::ordered_json j;
  j["document_id"] = s.document_id;
  j["strategy"] = std::string(to_string(s.strategy));
  j["faithful"] = s.faithful;
  j["corrupted_document"] =
      s.corrupted_document ? io::ordered_json(*s.corrupted_document) : io::ordered_json(nullptr);
  auto corrupted = io::ordered_json::array();
  for (const auto& c : s.corrupted) {
    io::ordered_json row;
    row["sentence"] = c.sentence;
    row["injected_error"] = c.injected_error
                                ? io::ordered_json(std::string(to_string(*c.injected_error)))
                                : io::ordered_json(nullptr);
    row["source_index"] = c.source_index;
    corrupted.push_back(std::move(row));
  }
  j["corrupted"] = std::move(corrupted);
  j["dropped"] = s.dropped;
  return j;
}

inline DocumentSynthesis synthesis_from_json(const io::ordered_json& j) {
  DocumentSynthesis s;
  s.document_id = io::string_field(j, "document_id");
  s.strategy = parse_strategy(io::string_field(j, "strategy"));
  s.faithful = io::field(j, "faithful").get<std::vector<std::string>>();
  const auto& cd = io::field(j, "corrupted_document");
  if (cd.is_string()) s.corrupted_document = cd.get<std::string>();
  for (const auto& row : io::field(j, "corrupted")) {
    CorruptedSentence c;
    c.sentence = io::string_field(row, "sentence");
    const auto& err = io::field(row, "injected_error");
    if (err.is_string()) c.injected_error = parse_injectable(err.get<std::string>());
    c.source_index = static_cast<int>(io::int_field(row, "source_index"));
    s.corrupted.push_back(std::move(c));
  }
  if (j.contains("dropped")) s.dropped = j["dropped"].get<std::vector<std::string>>();
  return s;
}

/// Keyed store of DocumentSynthesis entries, persisted sorted by document id.
class SynthesisCache {
 public:
  static SynthesisCache load(const std::filesystem::path& path) {
    SynthesisCache cache;
    if (!std::filesystem::exists(path)) return cache;
    io::read_jsonl(path, [&](std::size_t, const io::ordered_json& row) {
      auto entry = synthesis_from_json(row);
      cache.entries_[entry.document_id] = std::move(entry);
    });
    return cache;
  }

  void save(const std::filesystem::path& path) const {
    std::lock_guard lock(mu_);
    std::vector<io::ordered_json> rows;
    rows.reserve(entries_.size());
    for (const auto& [id, entry] : entries_) rows.push_back(to_json(entry));
    io::write_jsonl(path, rows);
  }

  std::optional<DocumentSynthesis> get(const std::string& id, Strategy strategy) const {
    std::lock_guard lock(mu_);
    const auto it = entries_.find(id);
    if (it == entries_.end() || it->second.strategy != strategy) return std::nullopt;
    return it->second;
  }

  void put(DocumentSynthesis entry) {
    std::lock_guard lock(mu_);
    entries_[entry.document_id] = std::move(entry);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  SynthesisCache() = default;
  SynthesisCache(SynthesisCache&& other) noexcept : entries_(std::move(other.entries_)) {}
  SynthesisCache& operator=(SynthesisCache&& other) noexcept {
    entries_ = std::move(other.entries_);
    return *this;
  }

 private:
  std::map<std::string, DocumentSynthesis> entries_;
  mutable std::mutex mu_;
};

struct SynthesisOptions {
  GenerationParams params = GenerationParams::synthesis();
  std::size_t max_in_flight = 8;
  /// Attempts per generation call: 1 initial + 2 retries.
  int generation_attempts = 3;
  /// Abort the iteration when more than this fraction of documents fail.
  double max_skip_fraction = 0.10;
  std::uint64_t seed = 0;
};

/// Injectable error type for sentence `index` of `document_id`: uniform over
/// the five types, reproducible from the seed alone.
inline InjectableErrorType draw_error_type(std::uint64_t seed, std::string_view document_id,
                                          std::size_t index) {
  Rng rng(mix_seed(seed, "direct", document_id, static_cast<std::uint64_t>(index)));
  return kAllInjectable[rng.below(kAllInjectable.size())];
}

/// Steps 0-1: turns documents into labeled summary sentences using the
/// auxiliary model.
class Synthesizer {
 public:
  Synthesizer(ChatBackend& backend, ModelRef auxiliary, const PromptSet& prompts,
              SynthesisOptions options = {})
      : backend_(backend), aux_(std::move(auxiliary)), prompts_(prompts), options_(options) {}

  /// Faithful summary of `document`, retried on unparseable output.
  SummarySentences generate_faithful(const Document& document,
                                     std::string_view request_prefix = "faithful") const {
    ChatRequest request = ChatRequest::user(std::string(request_prefix) + "/" + document.id,
                                            prompts_.render_faithful_summary(document.body),
                                            options_.params);
    request.metadata[std::string(meta::kTemplate)] = to_string(PromptId::FaithfulSummary);
    request.metadata[std::string(meta::kArticle)] = document.body;
    request.metadata[std::string(meta::kLanguage)] = document.language.str();
    return with_attempts(request, [](const ChatResponse& r) { return split_hash_list(r.content); });
  }

  /// Corrupted version of the document, then its faithful summary. The
  /// resulting sentences are unfaithful with respect to the original.
  std::pair<std::string, SummarySentences> corrupt_indirect(const Document& document) const {
    ChatRequest request = ChatRequest::user("corrupt_article/" + document.id,
                                            prompts_.render_corrupt_article(document),
                                            options_.params);
    request.metadata[std::string(meta::kTemplate)] = to_string(PromptId::CorruptArticle);
    request.metadata[std::string(meta::kArticle)] = document.body;
    request.metadata[std::string(meta::kLanguage)] = document.language.str();
    std::string corrupted = with_attempts(request, [](const ChatResponse& r) {
      std::string text = detail::trim(r.content);
      if (text.empty()) throw Error(ErrorCode::MalformedResponse, "empty corrupted document");
      return text;
    });
    Document corrupted_doc = document;
    corrupted_doc.body = corrupted;
    auto summary = generate_faithful(corrupted_doc, "corrupt_summary");
    return {std::move(corrupted), std::move(summary)};
  }

  /// One injected error per faithful sentence; unparseable responses drop
  /// that sentence only.
  std::vector<CorruptedSentence> corrupt_direct(const Document& document,
                                                const SummarySentences& faithful,
                                                std::vector<std::string>* dropped = nullptr) const {
    if (faithful.sentences.empty()) {
      throw Error(ErrorCode::EmptyInput, "no faithful sentences to corrupt");
    }
    std::vector<CorruptedSentence> out;
    for (std::size_t k = 0; k < faithful.sentences.size(); ++k) {
      const InjectableErrorType type = draw_error_type(options_.seed, document.id, k);
      ChatRequest request = ChatRequest::user(
          "inject/" + document.id + "/" + std::to_string(k),
          prompts_.render_injector(type, faithful.sentences[k], document.body), options_.params);
      request.metadata[std::string(meta::kTemplate)] = to_string(injector_prompt(type));
      request.metadata[std::string(meta::kSentence)] = faithful.sentences[k];
      request.metadata[std::string(meta::kErrorType)] = to_string(type);
      request.metadata[std::string(meta::kAttempt)] = "1";
      try {
        const auto response = backend_.complete(aux_, request);
        auto parsed = parse_corruption_response(response.content);
        out.push_back({std::move(parsed.modified_sentence), type, static_cast<int>(k)});
      } catch (const Error& e) {
        log::warn("corruption_dropped", {{"document_id", document.id},
                                         {"sentence_index", k},
                                         {"error", e.what()}});
        if (dropped) dropped->push_back(std::to_string(k) + ": " + e.what());
      }
    }
    return out;
  }

  DocumentSynthesis synthesize_document(const Document& document, Strategy strategy) const {
    DocumentSynthesis s;
    s.document_id = document.id;
    s.strategy = strategy;
    const auto faithful = generate_faithful(document);
    s.faithful = faithful.sentences;
    if (strategy == Strategy::Indirect) {
      auto [corrupted_doc, summary] = corrupt_indirect(document);
      s.corrupted_document = std::move(corrupted_doc);
      for (std::size_t k = 0; k < summary.sentences.size(); ++k) {
        s.corrupted.push_back({summary.sentences[k], std::nullopt, static_cast<int>(k)});
      }
    } else if (strategy == Strategy::Direct) {
      s.corrupted = corrupt_direct(document, faithful, &s.dropped);
    } else {
      throw Error(ErrorCode::InvalidArgument, "synthesis strategy must be direct or indirect");
    }
    return s;
  }

  const SynthesisOptions& options() const { return options_; }

 private:
  template <typename Parse>
  auto with_attempts(ChatRequest request, Parse parse) const -> decltype(parse(ChatResponse{})) {
    const int attempts = std::max(1, options_.generation_attempts);
    for (int attempt = 1;; ++attempt) {
      request.metadata[std::string(meta::kAttempt)] = std::to_string(attempt);
      try {
        return parse(backend_.complete(aux_, request));
      } catch (const Error& e) {
        if (attempt >= attempts) {
          throw Error(ErrorCode::SynthesisFailed,
                      request.id + " failed after " + std::to_string(attempts) +
                          " attempts: " + e.what());
        }
      }
    }
  }

  ChatBackend& backend_;
  ModelRef aux_;
  const PromptSet& prompts_;
  SynthesisOptions options_;
};

// ---------------------------------------------------------------------------
// Sentence dataset
// ---------------------------------------------------------------------------

struct SentenceDataset {
  std::vector<SentenceTriplet> triplets;
  int iteration = 1;
};

struct SynthesisReport {
  std::vector<std::string> skipped;  // "doc_id: reason"
  std::size_t generated = 0;
  std::size_t cache_hits = 0;
};

/// Triplets for one document: faithful sentences (label 1) then corrupted ones
/// (label 0), all referencing the original document.
inline std::vector<SentenceTriplet> triplets_for(const DocumentSynthesis& s) {
  std::vector<SentenceTriplet> out;
  for (std::size_t k = 0; k < s.faithful.size(); ++k) {
    out.emplace_back(s.document_id, s.faithful[k], FaithfulnessLabel::Faithful,
                     Provenance{s.strategy, std::nullopt, static_cast<int>(k)});
  }
  for (const auto& c : s.corrupted) {
    const auto injected = s.strategy == Strategy::Direct ? c.injected_error : std::nullopt;
    out.emplace_back(s.document_id, c.sentence, FaithfulnessLabel::Unfaithful,
                     Provenance{s.strategy, injected, c.source_index});
  }
  return out;
}

/// Builds B_i for a batch, generating only the documents missing from the
/// cache. Generation runs concurrently; assembly follows batch order.
inline SentenceDataset build_sentence_dataset(const DocumentBatch& batch, Strategy strategy,
                                              const Synthesizer& synthesizer,
                                              SynthesisCache& cache,
                                              SynthesisReport* report = nullptr) {
  const std::size_t n = batch.documents.size();
  std::vector<std::optional<DocumentSynthesis>> entries(n);
  std::vector<std::string> failures(n);
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < n; ++i) {
    entries[i] = cache.get(batch.documents[i].id, strategy);
    if (!entries[i]) missing.push_back(i);
  }
  parallel_for(missing.size(), synthesizer.options().max_in_flight, [&](std::size_t m) {
    const std::size_t i = missing[m];
    try {
      auto entry = synthesizer.synthesize_document(batch.documents[i], strategy);
      cache.put(entry);
      entries[i] = std::move(entry);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });

  SentenceDataset dataset;
  dataset.iteration = batch.iteration;
  SynthesisReport local;
  local.cache_hits = n - missing.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!entries[i]) {
      local.skipped.push_back(batch.documents[i].id + ": " + failures[i]);
      log::warn("document_skipped",
                {{"document_id", batch.documents[i].id}, {"error", failures[i]}});
      continue;
    }
    auto triplets = triplets_for(*entries[i]);
    dataset.triplets.insert(dataset.triplets.end(), std::make_move_iterator(triplets.begin()),
                            std::make_move_iterator(triplets.end()));
  }
  local.generated = missing.size() - local.skipped.size();
  const double skip_fraction = n == 0 ? 0.0 : static_cast<double>(local.skipped.size()) / n;
  if (report) *report = local;
  if (skip_fraction > synthesizer.options().max_skip_fraction) {
    throw Error(ErrorCode::SynthesisFailed,
                std::to_string(local.skipped.size()) + " of " + std::to_string(n) +
                    " documents failed generation (limit " +
                    std::to_string(synthesizer.options().max_skip_fraction) + ")");
  }
  return dataset;
}

inline void write_sentence_dataset(const std::filesystem::path& path, const SentenceDataset& ds) {
  std::vector<io::ordered_json> rows;
  rows.reserve(ds.triplets.size());
  for (const auto& t : ds.triplets) rows.push_back(io::to_json(t));
  io::write_jsonl(path, rows);
}

inline SentenceDataset read_sentence_dataset(const std::filesystem::path& path, int iteration) {
  SentenceDataset ds;
  ds.iteration = iteration;
  io::read_jsonl(path, [&](std::size_t, const io::ordered_json& row) {
    ds.triplets.push_back(io::triplet_from_json(row));
  });
  return ds;
}

// ---------------------------------------------------------------------------
// Variations: human labels and NLI proxy data
// ---------------------------------------------------------------------------

struct HumanLabeledData {
  std::vector<SentenceTriplet> triplets;
  std::vector<Document> documents;
};

/// Rows: {document_id, document, sentence, label, language?}.
inline HumanLabeledData load_human_labels(const std::filesystem::path& path) {
  HumanLabeledData out;
  std::map<std::string, std::size_t> seen;
  io::read_jsonl(path, [&](std::size_t line, const io::ordered_json& row) {
    try {
      const std::string doc_id = io::string_field(row, "document_id");
      const std::string body = io::string_field(row, "document");
      if (!seen.contains(doc_id)) {
        Document d;
        d.id = doc_id;
        d.body = body;
        d.language = LanguageCode::parse(
            row.contains("language") ? io::string_field(row, "language") : "en");
        if (!d.valid()) throw Error(ErrorCode::MalformedRow, "empty document");
        seen[doc_id] = out.documents.size();
        out.documents.push_back(std::move(d));
      }
      out.triplets.emplace_back(doc_id, io::string_field(row, "sentence"),
                                io::label_field(row, "label"),
                                Provenance{Strategy::Human, std::nullopt, 0});
    } catch (const Error& e) {
      log::warn("human_row_skipped", {{"path", path.string()}, {"line", line}, {"error", e.what()}});
    }
  });
  return out;
}

/// Replaces round(fraction * |dataset|) synthetic triplets, chosen by seed,
/// with seed-chosen human-labeled triplets. Size and positions are preserved.
inline SentenceDataset mix_human_labels(const SentenceDataset& dataset,
                                        const std::vector<SentenceTriplet>& human,
                                        double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "fraction must be in (0, 1]");
  }
  const auto replace = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(dataset.triplets.size())));
  if (human.size() < replace) {
    throw Error(ErrorCode::InsufficientHumanData,
                "need " + std::to_string(replace) + " human triplets, have " +
                    std::to_string(human.size()));
  }
  Rng slot_rng(mix_seed(seed, "human_slots", static_cast<std::uint64_t>(dataset.iteration)));
  Rng pick_rng(mix_seed(seed, "human_picks", static_cast<std::uint64_t>(dataset.iteration)));
  const auto slots = slot_rng.sample_indices(dataset.triplets.size(), replace);
  const auto picks = pick_rng.sample_indices(human.size(), replace);
  SentenceDataset out = dataset;
  for (std::size_t i = 0; i < replace; ++i) {
    const auto& h = human[picks[i]];
    out.triplets[slots[i]] = SentenceTriplet(h.document_id(), h.sentence(), h.label(),
                                             Provenance{Strategy::Human, std::nullopt, 0});
  }
  return out;
}

namespace detail {

inline std::optional<std::string> xnli_label_text(const io::ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) {
    // Hugging Face XNLI encoding.
    switch (v.get<int>()) {
      case 0: return "entailment";
      case 1: return "neutral";
      case 2: return "contradiction";
      default: return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Rows: {premise, hypothesis, label, language}. Malformed rows are skipped
/// with a warning; the first `count` valid rows after a seeded shuffle are
/// rendered.
inline std::vector<NliPrompt> load_xnli(const std::filesystem::path& path, std::size_t count,
                                        std::uint64_t seed,
                                        const PromptSet& prompts = PromptSet::defaults()) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::FileNotFound, "XNLI file not found: " + path.string());
  }
  std::vector<NliPrompt> rows;
  std::size_t skipped = 0;
  io::read_jsonl(
      path,
      [&](std::size_t line, const io::ordered_json& row) {
        try {
          const auto label = detail::xnli_label_text(io::field(row, "label"));
          if (!label) throw Error(ErrorCode::MalformedRow, "bad label");
          io::string_field(row, "language");
          rows.push_back(prompts.render_xnli(io::string_field(row, "premise"),
                                             io::string_field(row, "hypothesis"), *label));
        } catch (const Error& e) {
          ++skipped;
          log::warn("xnli_row_skipped", {{"line", line}, {"error", e.what()}});
        }
      },
      [&](std::size_t line, const std::string& reason) {
        ++skipped;
        log::warn("xnli_row_skipped", {{"line", line}, {"error", reason}});
      });
  Rng rng(mix_seed(seed, "xnli"));
  rng.shuffle(rows);
  if (rows.size() < count) {
    log::warn("xnli_short", {{"requested", count}, {"available", rows.size()}});
  } else {
    rows.resize(count);
  }
  return rows;
}

}  // namespace stemf
