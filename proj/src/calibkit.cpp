#include "qlab/calibkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qlab/error.hpp"
#include "qlab/numerics.hpp"

namespace qlab {

using nlohmann::json;

Tokenizer Tokenizer::from_name(std::string_view name) {
  if (name == "byte_level") return Tokenizer(TokenizerKind::byte_level);
  if (name == "whitespace") return Tokenizer(TokenizerKind::whitespace);
  throw Error(ErrorKind::ConfigError, "unknown tokenizer '" + std::string(name) + "'");
}

std::string_view Tokenizer::name() const noexcept {
  return kind_ == TokenizerKind::byte_level ? "byte_level" : "whitespace";
}

std::size_t Tokenizer::vocab_size() const noexcept {
  return kind_ == TokenizerKind::byte_level ? kByteVocab : (std::size_t{1} << 31);
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  if (kind_ == TokenizerKind::byte_level) {
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(c);
    return ids;
  }
  std::size_t i = 0;
  auto is_space = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) ids.push_back(static_cast<TokenId>(fnv1a64(text.substr(i, j - i)) & 0x7FFFFFFFu));
    i = j;
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  if (kind_ != TokenizerKind::byte_level) {
    throw Error(ErrorKind::TokenizerMismatch, "the whitespace tokenizer is not invertible");
  }
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids)
    if (id < 256) out.push_back(static_cast<char>(id));
  return out;
}

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<Document> read_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::FormatError, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("lang") ||
        !j["lang"].is_string()) {
      throw Error(ErrorKind::FormatError, where + ": expected {\"text\": string, \"lang\": string, ...}");
    }
    Document d{j["text"].get<std::string>(), j["lang"].get<std::string>(),
               j.contains("source") && j["source"].is_string() ? j["source"].get<std::string>() : std::string()};
    if (blank(d.text)) throw Error(ErrorKind::FormatError, where + ": empty text");
    if (d.lang.empty()) throw Error(ErrorKind::FormatError, where + ": empty lang");
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Document> read_corpus_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::IoError, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Document> docs;
  for (const auto& f : files) {
    auto part = read_documents(f);
    docs.insert(docs.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return docs;
}

Corpus group_by_lang(std::vector<Document> docs) {
  Corpus c;
  for (auto& d : docs) c[d.lang].push_back(std::move(d));
  return c;
}

Strategy Strategy::parse(std::string_view text) {
  Strategy s;
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view() : text.substr(colon + 1);
  auto no_arg = [&](StrategyKind k) {
    if (colon != std::string_view::npos) throw Error(ErrorKind::ConfigError, "strategy '" + std::string(head) + "' takes no argument");
    s.kind = k;
  };
  if (head == "single") {
    if (rest.empty()) throw Error(ErrorKind::ConfigError, "strategy 'single' needs a language: single:<lang>");
    s.kind = StrategyKind::single;
    s.lang = std::string(rest);
  } else if (head == "multi10") {
    no_arg(StrategyKind::multi10);
  } else if (head == "multimix") {
    no_arg(StrategyKind::multimix);
  } else if (head == "multi") {
    no_arg(StrategyKind::multi);
  } else if (head == "plus_code" || head == "plus_math" || head == "plus_codemath") {
    s.kind = head == "plus_code" ? StrategyKind::plus_code
                                 : (head == "plus_math" ? StrategyKind::plus_math : StrategyKind::plus_codemath);
    if (rest.empty()) throw Error(ErrorKind::ConfigError, "strategy '" + std::string(head) + "' needs a base: " + std::string(head) + ":<base>");
    const Strategy base = parse(rest);
    if (base.augmented()) throw Error(ErrorKind::ConfigError, "augmented strategies cannot be nested");
    s.base = base.str();
  } else {
    throw Error(ErrorKind::ConfigError, "unknown strategy '" + std::string(text) + "'");
  }
  return s;
}

std::string Strategy::str() const {
  switch (kind) {
    case StrategyKind::single: return "single:" + lang;
    case StrategyKind::multi10: return "multi10";
    case StrategyKind::multimix: return "multimix";
    case StrategyKind::multi: return "multi";
    case StrategyKind::plus_code: return "plus_code:" + base;
    case StrategyKind::plus_math: return "plus_math:" + base;
    case StrategyKind::plus_codemath: return "plus_codemath:" + base;
  }
  return "?";
}

std::size_t CalibrationSet::total_tokens() const noexcept {
  std::size_t total = 0;
  for (const auto& e : examples) total += e.size();
  return total;
}

std::map<std::string, std::size_t> CalibrationSet::lang_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : langs) ++counts[l];
  return counts;
}

std::vector<std::string> CalibrationSet::distinct_langs() const {
  std::set<std::string> s(langs.begin(), langs.end());
  return {s.begin(), s.end()};
}

std::vector<std::vector<TokenId>> chunk_stream(const std::vector<Document>& docs, std::size_t t, std::uint64_t seed,
                                               const Tokenizer& tok) {
  if (t == 0) throw Error(ErrorKind::ConfigError, "tokens per example must be >= 1");
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::vector<TokenId>> chunks;
  std::vector<TokenId> current;
  current.reserve(t);
  for (std::size_t idx : order) {
    for (TokenId id : tok.encode(docs[idx].text)) {
      current.push_back(id);
      if (current.size() == t) {
        chunks.push_back(std::move(current));
        current = {};
        current.reserve(t);
      }
    }
  }
  return chunks;
}

namespace {

const std::vector<Document>& docs_for(const Corpus& corpus, const std::string& lang) {
  static const std::vector<Document> kEmpty;
  auto it = corpus.find(lang);
  return it == corpus.end() ? kEmpty : it->second;
}

std::size_t token_count(const std::vector<Document>& docs, const Tokenizer& tok) {
  std::size_t n = 0;
  for (const auto& d : docs) n += tok.encode(d.text).size();
  return n;
}

std::vector<std::vector<TokenId>> lang_chunks(const Corpus& corpus, const std::string& lang, std::size_t t,
                                              std::uint64_t seed, const Tokenizer& tok) {
  return chunk_stream(docs_for(corpus, lang), t, derive_seed(seed, "lang:" + lang), tok);
}

[[noreturn]] void insufficient(const std::string& what, std::size_t available, std::size_t required) {
  throw Error(ErrorKind::InsufficientData, what + ": " + std::to_string(available) + " tokens available, " +
                                               std::to_string(required) + " required");
}

CalibrationSet empty_set(std::string strategy, std::size_t n, std::size_t t, std::uint64_t seed, const Tokenizer& tok) {
  if (t == 0) throw Error(ErrorKind::ConfigError, "tokens per example must be >= 1");
  CalibrationSet s;
  s.n = n;
  s.t = t;
  s.strategy = std::move(strategy);
  s.seed = seed;
  s.tokenizer = std::string(tok.name());
  return s;
}

}  // namespace

CalibrationSet build_single(const Corpus& corpus, const std::string& lang, std::size_t n, std::size_t t,
                            std::uint64_t seed, const Tokenizer& tok) {
  CalibrationSet set = empty_set("single:" + lang, n, t, seed, tok);
  auto chunks = lang_chunks(corpus, lang, t, seed, tok);
  if (chunks.size() < n) insufficient("language '" + lang + "'", token_count(docs_for(corpus, lang), tok), n * t);
  chunks.resize(n);
  set.examples = std::move(chunks);
  set.langs.assign(n, lang);
  return set;
}

CalibrationSet build_multi10(const Corpus& corpus, const std::vector<std::string>& langs, std::size_t n, std::size_t t,
                             std::uint64_t seed, const Tokenizer& tok) {
  if (langs.size() != 10) {
    throw Error(ErrorKind::WrongLanguageCount, "multi10 needs exactly 10 languages, got " + std::to_string(langs.size()));
  }
  if (std::set<std::string>(langs.begin(), langs.end()).size() != 10) {
    throw Error(ErrorKind::WrongLanguageCount, "multi10 languages must be distinct");
  }
  // Canonical order first, then any other tags in the order given.
  std::vector<std::string> ordered;
  for (std::string_view canon : kMulti10Order)
    if (std::find(langs.begin(), langs.end(), canon) != langs.end()) ordered.emplace_back(canon);
  for (const auto& l : langs)
    if (std::find(ordered.begin(), ordered.end(), l) == ordered.end()) ordered.push_back(l);

  CalibrationSet set = empty_set("multi10", n, t, seed, tok);
  const std::size_t quota = n / 10;
  const std::size_t remainder = n % 10;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const std::size_t want = quota + (i < remainder ? 1 : 0);
    auto chunks = lang_chunks(corpus, ordered[i], t, seed, tok);
    if (chunks.size() < want) {
      insufficient("language '" + ordered[i] + "'", token_count(docs_for(corpus, ordered[i]), tok), want * t);
    }
    for (std::size_t k = 0; k < want; ++k) {
      set.examples.push_back(std::move(chunks[k]));
      set.langs.push_back(ordered[i]);
    }
  }
  std::vector<std::size_t> perm(set.examples.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(seed, "multi10:order"));
  rng.shuffle(perm);
  CalibrationSet shuffled = set;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.examples[i] = set.examples[perm[i]];
    shuffled.langs[i] = set.langs[perm[i]];
  }
  return shuffled;
}

CalibrationSet build_multimix(const Corpus& corpus, std::size_t n, std::size_t t, std::uint64_t seed,
                              const Tokenizer& tok) {
  CalibrationSet set = empty_set("multimix", n, t, seed, tok);
  std::vector<std::vector<TokenId>> pool;
  std::vector<std::string> pool_langs;
  std::size_t tokens = 0;
  for (const auto& [lang, docs] : corpus) {
    tokens += token_count(docs, tok);
    for (auto& c : lang_chunks(corpus, lang, t, seed, tok)) {
      pool.push_back(std::move(c));
      pool_langs.push_back(lang);
    }
  }
  if (pool.size() < n) insufficient("pooled stream", tokens, n * t);
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, "multimix"));
  rng.shuffle(idx);
  for (std::size_t k = 0; k < n; ++k) {
    set.examples.push_back(pool[idx[k]]);
    set.langs.push_back(pool_langs[idx[k]]);
  }
  return set;
}

CalibrationSet build_multi(const Corpus& corpus, std::size_t n, std::size_t t, std::uint64_t seed,
                           const Tokenizer& tok) {
  if (corpus.empty()) throw Error(ErrorKind::InsufficientData, "multi needs at least one language");
  CalibrationSet set = empty_set("multi", n, t, seed, tok);
  std::vector<std::string> urn;
  std::map<std::string, std::vector<std::vector<TokenId>>> chunks;
  std::map<std::string, std::size_t> next;
  for (const auto& [lang, docs] : corpus) {
    urn.push_back(lang);
    chunks[lang] = lang_chunks(corpus, lang, t, seed, tok);
    next[lang] = 0;
  }
  Rng rng(derive_seed(seed, "multi"));
  while (set.examples.size() < n) {
    if (urn.empty()) {
      std::size_t tokens = 0;
      for (const auto& [lang, docs] : corpus) tokens += token_count(docs, tok);
      insufficient("all language streams exhausted", tokens, n * t);
    }
    const std::size_t pick = static_cast<std::size_t>(rng.below(urn.size()));
    const std::string lang = urn[pick];
    auto& pos = next[lang];
    if (pos >= chunks[lang].size()) {
      set.warnings.push_back("language '" + lang + "' exhausted after " + std::to_string(pos) + " examples; dropped");
      urn.erase(urn.begin() + static_cast<std::ptrdiff_t>(pick));
      continue;
    }
    set.examples.push_back(chunks[lang][pos++]);
    set.langs.push_back(lang);
  }
  return set;
}

CalibrationSet augment(const CalibrationSet& base, const std::vector<Document>& extra, double mix_fraction,
                       const std::string& strategy_name, const Tokenizer& tok) {
  if (!(mix_fraction >= 0.0 && mix_fraction <= 1.0)) {
    throw Error(ErrorKind::ConfigError, "mix_fraction must be in [0, 1]");
  }
  if (tok.name() != base.tokenizer) throw Error(ErrorKind::TokenizerMismatch, "augment tokenizer differs from base set");
  CalibrationSet out = base;
  out.strategy = strategy_name;
  out.mix_fraction = mix_fraction;
  const auto k = static_cast<std::size_t>(std::llround(mix_fraction * static_cast<double>(base.examples.size())));
  if (k == 0) return out;

  std::vector<std::vector<TokenId>> pool;
  std::vector<std::string> pool_langs;
  const Corpus grouped = group_by_lang(extra);
  std::size_t tokens = 0;
  for (const auto& [lang, docs] : grouped) {
    tokens += token_count(docs, tok);
    for (auto& c : lang_chunks(grouped, lang, base.t, base.seed, tok)) {
      pool.push_back(std::move(c));
      pool_langs.push_back(lang);
    }
  }
  if (pool.size() < k) insufficient("augmentation stream", tokens, k * base.t);

  std::vector<std::size_t> pool_idx(pool.size());
  for (std::size_t i = 0; i < pool_idx.size(); ++i) pool_idx[i] = i;
  Rng pool_rng(derive_seed(base.seed, "augment:pool"));
  pool_rng.shuffle(pool_idx);

  std::vector<std::size_t> slots(base.examples.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  Rng slot_rng(derive_seed(base.seed, "augment:select"));
  slot_rng.shuffle(slots);
  slots.resize(k);
  std::sort(slots.begin(), slots.end());

  for (std::size_t i = 0; i < k; ++i) {
    out.examples[slots[i]] = pool[pool_idx[i]];
    out.langs[slots[i]] = pool_langs[pool_idx[i]];
  }
  return out;
}

CalibrationSet build_calibration(const BuildRequest& req, const Corpus& corpus, const std::vector<Document>& extra,
                                 const Tokenizer& tok) {
  const Strategy& s = req.strategy;
  CalibrationSet set;
  switch (s.kind) {
    case StrategyKind::single:
      set = build_single(corpus, s.lang, req.n, req.t, req.seed, tok);
      break;
    case StrategyKind::multi10: {
      std::vector<std::string> langs = req.multi10_langs;
      if (langs.empty()) langs.assign(std::begin(kMulti10Order), std::end(kMulti10Order));
      set = build_multi10(corpus, langs, req.n, req.t, req.seed, tok);
      break;
    }
    case StrategyKind::multimix:
      set = build_multimix(corpus, req.n, req.t, req.seed, tok);
      break;
    case StrategyKind::multi:
      set = build_multi(corpus, req.n, req.t, req.seed, tok);
      break;
    case StrategyKind::plus_code:
    case StrategyKind::plus_math:
    case StrategyKind::plus_codemath: {
      BuildRequest base_req = req;
      base_req.strategy = Strategy::parse(s.base);
      const CalibrationSet base = build_calibration(base_req, corpus, {}, tok);
      std::vector<Document> selected;
      for (const auto& d : extra) {
        const bool code = d.lang == "code" && s.kind != StrategyKind::plus_math;
        const bool math = d.lang == "math" && s.kind != StrategyKind::plus_code;
        if (code || math) selected.push_back(d);
      }
      set = augment(base, selected, req.mix_fraction, s.str(), tok);
      break;
    }
  }
  for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";
  return set;
}

std::string serialize_calibration(const CalibrationSet& set) {
  json header = {{"version", kCalibFormatVersion},
                 {"strategy", set.strategy},
                 {"N", set.n},
                 {"T", set.t},
                 {"seed", set.seed},
                 {"tokenizer", set.tokenizer},
                 {"langs", set.distinct_langs()},
                 {"mix_fraction", set.mix_fraction}};
  std::string out = header.dump();
  out += '\n';
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    json line = {{"lang", set.langs[i]}, {"ids", set.examples[i]}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

CalibrationSet parse_calibration(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::FormatError, "calibration file is empty");
  CalibrationSet set;
  try {
    const json h = json::parse(line);
    if (h.at("version").get<int>() != kCalibFormatVersion) {
      throw Error(ErrorKind::FormatError, "unsupported calibration version");
    }
    set.strategy = h.at("strategy").get<std::string>();
    set.n = h.at("N").get<std::size_t>();
    set.t = h.at("T").get<std::size_t>();
    set.seed = h.at("seed").get<std::uint64_t>();
    set.tokenizer = h.at("tokenizer").get<std::string>();
    set.mix_fraction = h.at("mix_fraction").get<double>();
    while (std::getline(in, line)) {
      if (blank(line)) continue;
      const json e = json::parse(line);
      set.langs.push_back(e.at("lang").get<std::string>());
      set.examples.push_back(e.at("ids").get<std::vector<TokenId>>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("calibration file: ") + e.what());
  }
  if (set.examples.size() != set.n) {
    throw Error(ErrorKind::FormatError, "header declares N=" + std::to_string(set.n) + " but file has " +
                                            std::to_string(set.examples.size()) + " examples");
  }
  for (std::size_t i = 0; i < set.examples.size(); ++i) {
    if (set.examples[i].size() != set.t) {
      throw Error(ErrorKind::FormatError, "example " + std::to_string(i) + " has " +
                                              std::to_string(set.examples[i].size()) + " tokens, header declares T=" +
                                              std::to_string(set.t));
    }
  }
  return set;
}

void write_calibration(const CalibrationSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << serialize_calibration(set);
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

CalibrationSet read_calibration(const std::filesystem::path& path) { return parse_calibration(read_file(path)); }

std::vector<TokenId> tokenize_documents(const std::vector<Document>& docs, const Tokenizer& tok) {
  std::vector<TokenId> ids;
  for (const auto& d : docs) {
    auto part = tok.encode(d.text);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

}  // namespace qlab
