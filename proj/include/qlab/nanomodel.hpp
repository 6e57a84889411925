#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qlab/awq.hpp"
#include "qlab/calibkit.hpp"
#include "qlab/numerics.hpp"
#include "qlab/quantgrid.hpp"

namespace qlab {

/// Llama-style block: RMS norm, rotary attention, gated-SiLU MLP.
struct ModelConfig {
  std::size_t vocab_size = Tokenizer::kByteVocab;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t context_length = 128;

  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr float kRmsEps = 1e-5f;
inline constexpr double kRopeTheta = 10000.0;

inline constexpr std::string_view kProjectionKinds[] = {"q_proj", "k_proj", "v_proj", "o_proj",
                                                        "gate_proj", "up_proj", "down_proj"};

std::string projection_name(std::size_t layer, std::string_view kind);
/// Every quantizable projection, in layer order.
std::vector<std::string> projection_names(const ModelConfig& cfg);
bool is_projection(std::string_view name);
/// Expected (rows, cols) of every tensor in the store.
std::map<std::string, std::pair<std::size_t, std::size_t>> tensor_shapes(const ModelConfig& cfg);

using NamedTensorStore = std::map<std::string, Matrix>;

struct Model {
  ModelConfig config;
  NamedTensorStore weights;
  // Runtime input division x / s per projection (AWQ layers).
  std::map<std::string, std::vector<float>> input_scales;

  void validate() const;
  const Matrix& at(const std::string& name) const;
};

struct InitOptions {
  std::uint64_t seed = 0;
  // Embedding channels multiplied by outlier_scale, creating salient activation channels.
  std::size_t outlier_channels = 0;
  double outlier_scale = 1.0;
  // Embedding rows of byte ids >= 128 multiplied by this factor (heavier tails for non-ASCII text).
  double high_byte_scale = 1.0;
};

Model init_random(const ModelConfig& cfg, const InitOptions& opts);

/// Input columns of named projections, capped per projection with seeded
/// reservoir sampling once the cap is exceeded.
class CaptureBuffer {
 public:
  CaptureBuffer(std::set<std::string> names, std::size_t cap, std::uint64_t seed = 0);

  bool wants(const std::string& name) const { return names_.count(name) != 0; }
  const std::set<std::string>& names() const noexcept { return names_; }
  std::size_t cap() const noexcept { return cap_; }

  void add(const std::string& name, std::span<const float> column);

  bool has(const std::string& name) const { return slots_.count(name) != 0; }
  std::size_t columns(const std::string& name) const;
  std::size_t seen(const std::string& name) const;
  /// d x n matrix of the kept columns.
  Matrix matrix(const std::string& name) const;

 private:
  struct Slot {
    std::size_t dim = 0;
    std::size_t seen = 0;
    std::vector<float> data;
    Rng rng{0};
  };
  std::set<std::string> names_;
  std::size_t cap_;
  std::uint64_t seed_;
  std::map<std::string, Slot> slots_;
};

/// Logits (tokens x vocab). When `capture` is given, the input of each projection
/// it names is appended to it, one column per token.
Matrix forward(const Model& model, std::span<const TokenId> tokens, CaptureBuffer* capture = nullptr);

struct PerplexityResult {
  double ppl = 0.0;
  double nll_sum = 0.0;
  std::size_t predicted = 0;
};

/// Non-overlapping windows of `context_length`; base-e, token-weighted over windows.
PerplexityResult evaluate_perplexity(const Model& model, std::span<const TokenId> tokens, std::size_t context_length);
double perplexity(const Model& model, std::span<const TokenId> tokens, std::size_t context_length);

/// Runs every calibration example (split at the context length) through the
/// model, batch_size examples at a time, capturing the named projection inputs.
CaptureBuffer capture_calibration(const Model& model, const CalibrationSet& calib, const std::vector<std::string>& names,
                                  std::size_t cap, std::size_t batch_size = 2);

struct QuantizedModel {
  ModelConfig config;
  // Embedding, norms and lm_head stay full precision.
  NamedTensorStore dense;
  std::map<std::string, QuantizedTensor> quantized;
  // tr((W - Q) H (W - Q)^T) per projection, H from the calibration set; empty for data-free runs.
  std::map<std::string, double> proxy_error;
  Method method = Method::rtn;
};

/// Runs the calibration forward passes, captures projection inputs, then quantizes every projection.
QuantizedModel quantize_model(const Model& model, Method method, const CalibrationSet& calib, const QuantSpec& spec);

/// Full-precision Model view of a quantized model: dequantized projections plus AWQ runtime scales.
Model dequantized_model(const QuantizedModel& qm);

/// Projections in the original parameterization, deq(Q) diag(s)^-1, next to the dense tensors.
NamedTensorStore effective_store(const QuantizedModel& qm);

// Binary containers. Layouts are documented in the README.
std::vector<std::uint8_t> encode_qlb1(const Model& model);
Model decode_qlb1(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_qlq1(const QuantizedModel& qm);
QuantizedModel decode_qlq1(std::span<const std::uint8_t> bytes);

void save_qlb1(const Model& model, const std::filesystem::path& path);
Model load_qlb1(const std::filesystem::path& path);
void save_qlq1(const QuantizedModel& qm, const std::filesystem::path& path);
QuantizedModel load_qlq1(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace qlab
