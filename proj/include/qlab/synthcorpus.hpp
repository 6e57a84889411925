#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qlab/calibkit.hpp"

namespace qlab {

// Seeded stand-in for a multilingual text corpus. Each language draws words
// from its own syllable inventory with a skewed frequency; zh uses CJK code
// points (3-byte UTF-8), several African-language tags carry diacritics.
struct SynthCorpusOptions {
  std::uint64_t seed = 0;
  std::size_t docs_per_lang = 8;
  std::size_t words_per_doc = 200;
  std::vector<std::string> langs{std::begin(kMulti10Order), std::end(kMulti10Order)};
};

std::vector<Document> synthetic_corpus(const SynthCorpusOptions& opts);
/// Code and math documents (lang "code" / "math") for the plus_* strategies.
std::vector<Document> synthetic_extra(std::uint64_t seed, std::size_t docs_per_kind, std::size_t lines_per_doc = 20);

/// One JSON object per line, keys sorted.
void write_documents(const std::vector<Document>& docs, const std::filesystem::path& path);
/// One <lang>.jsonl per language tag.
void write_corpus_dir(const std::vector<Document>& docs, const std::filesystem::path& dir);

}  // namespace qlab
