#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "stemf/core.hpp"
#include "stemf/io.hpp"

namespace stemf::testing {

namespace fs = std::filesystem;

/// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "stemf-test-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline fs::path source_dir() { return STEMF_SOURCE_DIR; }
inline fs::path stub_trainer() { return source_dir() / "tools" / "stub_trainer.sh"; }

inline std::string stub_trainer_command() {
  return "'" + stub_trainer().string() +
         "' --dataset {dataset} --base-model {base_model} --output {output_dir}"
         " --trainable-layers {trainable_layers}";
}

/// `per_language` documents for each language, each with `sentences` sentences.
inline std::vector<Document> synthetic_corpus(const std::vector<std::string>& languages,
                                              std::size_t per_language, std::size_t sentences = 4) {
  std::vector<Document> docs;
  for (const auto& lang : languages) {
    for (std::size_t i = 0; i < per_language; ++i) {
      Document d;
      d.id = lang + "-" + std::to_string(i);
      d.language = LanguageCode::parse(lang);
      d.title = "Report " + std::to_string(i);
      for (std::size_t s = 0; s < sentences; ++s) {
        if (s) d.body += ' ';
        d.body += "Item " + std::to_string(s) + " of report " + std::to_string(i) +
                  " mentions " + lang + " figure " + std::to_string((i * 7 + s) % 13) + ".";
      }
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

inline LoopConfig loop_config(std::vector<std::string> languages, std::size_t docs,
                              Strategy strategy = Strategy::Indirect, std::uint64_t seed = 1) {
  LoopConfig c;
  for (const auto& l : languages) c.languages.push_back(LanguageCode::parse(l));
  c.docs_per_iteration = docs;
  c.strategy = strategy;
  c.seed = seed;
  return c;
}

}  // namespace stemf::testing
