#include "qlab/synthcorpus.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qlab/error.hpp"
#include "qlab/numerics.hpp"

namespace qlab {

namespace {

const std::map<std::string, std::vector<std::string>>& inventories() {
  static const std::map<std::string, std::vector<std::string>> inv = {
      {"en", {"th", "e", "a", "in", "er", "an", "re", "on", "at", "ou", "st", "ing", "o", "ed", "is", "wh", "sh", "le"}},
      {"fr", {"le", "la", "de", "é", "è", "qu", "eu", "ou", "ai", "on", "en", "ç", "ê", "oi", "ti", "ent", "à", "re"}},
      {"sw", {"ka", "wa", "ni", "ku", "ta", "ma", "na", "li", "ya", "mu", "ji", "si", "za", "ha", "pa", "mb", "nd"}},
      {"xh", {"xa", "qa", "ca", "nga", "kwa", "ba", "th", "hl", "ukw", "nge", "ndi", "lo", "ko", "ph", "zo", "e"}},
      {"st", {"ho", "ba", "le", "ts", "tl", "ng", "ka", "se", "di", "ha", "ma", "o", "e", "ntš", "bô", "fe"}},
      {"zu", {"uku", "nga", "zi", "hl", "kh", "ba", "ngi", "le", "thi", "ni", "sa", "we", "mb", "ya", "o"}},
      {"yo", {"ọ", "ẹ", "ṣ", "à", "á", "è", "é", "ò", "ó", "gb", "kp", "yo", "ni", "wa", "ti", "lo", "ba", "mo"}},
      {"ig", {"ị", "ọ", "ụ", "ṅ", "gb", "kw", "nw", "ch", "a", "e", "o", "na", "ka", "di", "ma", "nne"}},
      {"ha", {"ɗ", "ƙ", "ɓ", "ts", "sh", "da", "ka", "wa", "ma", "ya", "na", "za", "ga", "ba", "r", "i"}},
  };
  return inv;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

std::vector<std::string> make_lexicon(const std::string& lang, Rng& rng, std::size_t size) {
  std::vector<std::string> lex;
  if (lang == "zh") {
    for (std::size_t i = 0; i < size; ++i) {
      std::string w;
      const std::size_t len = 1 + rng.below(2);
      for (std::size_t k = 0; k < len; ++k) append_utf8(w, 0x4E00 + static_cast<std::uint32_t>(rng.below(3000)));
      lex.push_back(std::move(w));
    }
    return lex;
  }
  auto it = inventories().find(lang);
  if (it == inventories().end()) {
    // Unknown tags get a Latin inventory of their own.
    std::vector<std::string> syl;
    for (int i = 0; i < 16; ++i) syl.push_back(std::string(1, static_cast<char>('a' + rng.below(26))) + "aeiou"[rng.below(5)]);
    for (std::size_t i = 0; i < size; ++i) {
      std::string w;
      const std::size_t len = 1 + rng.below(3);
      for (std::size_t k = 0; k < len; ++k) w += syl[rng.below(syl.size())];
      lex.push_back(std::move(w));
    }
    return lex;
  }
  const auto& syl = it->second;
  for (std::size_t i = 0; i < size; ++i) {
    std::string w;
    const std::size_t len = 1 + rng.below(3);
    for (std::size_t k = 0; k < len; ++k) w += syl[rng.below(syl.size())];
    lex.push_back(std::move(w));
  }
  return lex;
}

// Squared uniform skews draws towards the head of the lexicon.
std::size_t skewed(Rng& rng, std::size_t n) {
  const double u = rng.uniform();
  return std::min(n - 1, static_cast<std::size_t>(u * u * static_cast<double>(n)));
}

}  // namespace

std::vector<Document> synthetic_corpus(const SynthCorpusOptions& opts) {
  std::vector<Document> docs;
  for (const auto& lang : opts.langs) {
    Rng lex_rng(derive_seed(0, "synth-lexicon:" + lang));
    const auto lex = make_lexicon(lang, lex_rng, 400);
    Rng rng(derive_seed(opts.seed, "synth:" + lang));
    const bool cjk = lang == "zh";
    for (std::size_t d = 0; d < opts.docs_per_lang; ++d) {
      std::string text;
      std::size_t in_sentence = 0;
      const std::size_t sentence_len = 5 + rng.below(8);
      for (std::size_t w = 0; w < opts.words_per_doc; ++w) {
        if (!cjk && in_sentence) text += ' ';
        text += lex[skewed(rng, lex.size())];
        if (++in_sentence == sentence_len || w + 1 == opts.words_per_doc) {
          text += cjk ? "。" : ".";
          if (!cjk && w + 1 != opts.words_per_doc) text += ' ';
          in_sentence = 0;
        }
      }
      docs.push_back({std::move(text), lang, fmt::format("synth:{}:{}", lang, d)});
    }
  }
  return docs;
}

std::vector<Document> synthetic_extra(std::uint64_t seed, std::size_t docs_per_kind, std::size_t lines_per_doc) {
  std::vector<Document> docs;
  Rng rng(derive_seed(seed, "synth-extra"));
  static const char* ops[] = {"+", "-", "*"};
  for (std::size_t d = 0; d < docs_per_kind; ++d) {
    std::string text;
    for (std::size_t l = 0; l < lines_per_doc; ++l) {
      text += fmt::format("def f_{}(x):\n    return x {} {}\n", rng.below(100), ops[rng.below(3)], rng.below(50));
    }
    docs.push_back({std::move(text), "code", fmt::format("synth:code:{}", d)});
  }
  for (std::size_t d = 0; d < docs_per_kind; ++d) {
    std::string text;
    for (std::size_t l = 0; l < lines_per_doc; ++l) {
      const auto a = rng.below(20) + 1, x = rng.below(30), b = rng.below(50);
      text += fmt::format("Let x = {}. Then {}x + {} = {}.\n", x, a, b, a * x + b);
    }
    docs.push_back({std::move(text), "math", fmt::format("synth:math:{}", d)});
  }
  return docs;
}

void write_documents(const std::vector<Document>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  for (const auto& d : docs) {
    out << nlohmann::json{{"lang", d.lang}, {"source", d.source}, {"text", d.text}}.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

void write_corpus_dir(const std::vector<Document>& docs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::vector<Document>> by_lang;
  for (const auto& d : docs) by_lang[d.lang].push_back(d);
  for (const auto& [lang, part] : by_lang) write_documents(part, dir / (lang + ".jsonl"));
}

}  // namespace qlab
