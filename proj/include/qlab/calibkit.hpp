#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qlab {

using TokenId = std::uint32_t;

enum class TokenizerKind { byte_level, whitespace };

/// Deterministic self-contained tokenizers. byte_level maps each UTF-8 byte to
/// its value and reserves 256..258 for BOS/EOS/PAD; whitespace hashes each
/// whitespace-delimited word to a 31-bit id (lossy, used for vocabulary analyses).
class Tokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr std::size_t kByteVocab = 259;

  explicit Tokenizer(TokenizerKind kind = TokenizerKind::byte_level) : kind_(kind) {}
  static Tokenizer from_name(std::string_view name);

  TokenizerKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept;
  std::size_t vocab_size() const noexcept;

  std::vector<TokenId> encode(std::string_view text) const;
  // byte_level only; special ids are skipped.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  TokenizerKind kind_;
};

struct Document {
  std::string text;
  std::string lang;
  std::string source;
};

/// Parse JSON Lines of {"text", "lang", "source"}; blank lines are skipped.
std::vector<Document> read_documents(const std::filesystem::path& path);
/// Every *.jsonl file in the directory, in filename order.
std::vector<Document> read_corpus_dir(const std::filesystem::path& dir);

/// Documents grouped by language tag, file order preserved inside each group.
using Corpus = std::map<std::string, std::vector<Document>>;
Corpus group_by_lang(std::vector<Document> docs);

/// The ten-language order used for multi10 quotas and remainders.
inline constexpr std::string_view kMulti10Order[] = {"en", "fr", "sw", "zh", "xh", "st", "zu", "yo", "ig", "ha"};

enum class StrategyKind { single, multi10, multimix, multi, plus_code, plus_math, plus_codemath };

/// Textual form: "single:<lang>", "multi10", "multimix", "multi",
/// "plus_code:<base>", "plus_math:<base>", "plus_codemath:<base>".
struct Strategy {
  StrategyKind kind = StrategyKind::single;
  std::string lang;   // single only
  std::string base;   // plus_* only, itself a strategy string

  static Strategy parse(std::string_view text);
  std::string str() const;
  bool augmented() const noexcept {
    return kind == StrategyKind::plus_code || kind == StrategyKind::plus_math || kind == StrategyKind::plus_codemath;
  }
};

struct CalibrationSet {
  std::vector<std::vector<TokenId>> examples;
  std::vector<std::string> langs;  // one tag per example
  std::size_t n = 0;
  std::size_t t = 0;
  std::string strategy;
  std::uint64_t seed = 0;
  std::string tokenizer = "byte_level";
  double mix_fraction = 0.0;
  std::vector<std::string> warnings;

  std::size_t total_tokens() const noexcept;
  std::map<std::string, std::size_t> lang_counts() const;
  /// Sorted distinct language tags.
  std::vector<std::string> distinct_langs() const;
};

inline constexpr int kCalibFormatVersion = 1;
inline constexpr double kDefaultMixFraction = 0.25;

struct CalibBudget {
  std::size_t n;
  std::size_t t;
};
// Stock English-baseline budgets. The GPTQ budget is usually quoted as
// 1024 x 1042; 1042 reads as a transposition of 1024, so 1024 is the default.
inline constexpr CalibBudget kGptqDefaultBudget{1024, 1024};
inline constexpr CalibBudget kAwqDefaultBudget{512, 512};

/// One language's documents, seeded shuffle, concatenated and cut into exact t-token chunks.
std::vector<std::vector<TokenId>> chunk_stream(const std::vector<Document>& docs, std::size_t t, std::uint64_t seed,
                                               const Tokenizer& tok);

CalibrationSet build_single(const Corpus& corpus, const std::string& lang, std::size_t n, std::size_t t,
                            std::uint64_t seed, const Tokenizer& tok = Tokenizer());
CalibrationSet build_multi10(const Corpus& corpus, const std::vector<std::string>& langs, std::size_t n, std::size_t t,
                             std::uint64_t seed, const Tokenizer& tok = Tokenizer());
CalibrationSet build_multimix(const Corpus& corpus, std::size_t n, std::size_t t, std::uint64_t seed,
                              const Tokenizer& tok = Tokenizer());
CalibrationSet build_multi(const Corpus& corpus, std::size_t n, std::size_t t, std::uint64_t seed,
                           const Tokenizer& tok = Tokenizer());
/// Replaces round(mix_fraction * n) seeded-uniform examples with chunks from `extra`.
CalibrationSet augment(const CalibrationSet& base, const std::vector<Document>& extra, double mix_fraction,
                       const std::string& strategy_name, const Tokenizer& tok = Tokenizer());

struct BuildRequest {
  Strategy strategy;
  std::size_t n = 0;
  std::size_t t = 0;
  std::uint64_t seed = 0;
  double mix_fraction = kDefaultMixFraction;
  // multi10 languages; defaults to kMulti10Order.
  std::vector<std::string> multi10_langs;
};

/// Dispatch on the strategy. `extra` holds code/math documents for plus_* variants.
CalibrationSet build_calibration(const BuildRequest& req, const Corpus& corpus, const std::vector<Document>& extra,
                                 const Tokenizer& tok = Tokenizer());

std::string serialize_calibration(const CalibrationSet& set);
CalibrationSet parse_calibration(std::string_view text);
void write_calibration(const CalibrationSet& set, const std::filesystem::path& path);
CalibrationSet read_calibration(const std::filesystem::path& path);

/// Concatenated tokens of all documents in order.
std::vector<TokenId> tokenize_documents(const std::vector<Document>& docs, const Tokenizer& tok = Tokenizer());

}  // namespace qlab
