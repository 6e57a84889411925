#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "qlab/numerics.hpp"

namespace qlab {

enum class Method : std::uint8_t { rtn = 0, gptq = 1, awq = 2 };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

enum class AwqScaleMode : std::uint8_t { activation_ratio = 0, weight_max = 1 };

std::string_view to_string(AwqScaleMode m);
AwqScaleMode parse_scale_mode(std::string_view s);

/// Quantization hyperparameters shared by every quantizer.
struct QuantSpec {
  int bits = 4;
  std::size_t group_size = 128;
  Method method = Method::rtn;

  // GPTQ: damping as a fraction of mean(diag(2 X X^T)).
  double damping = 0.01;
  // GPTQ: extend error compensation past the current group to all trailing columns.
  bool cross_group_propagation = false;
  // Calibration sequences per forward batch.
  std::size_t batch_size = 2;

  // AWQ.
  double salience_fraction = 0.01;
  AwqScaleMode scale_mode = AwqScaleMode::activation_ratio;
  double max_scale = 16.0;
  double weight_max_factor = 1.0;

  // Captured input columns kept per projection.
  std::size_t capture_cap = 8192;

  void validate() const;
};

/// Affine integer grid: value = (code - zero_point) * scale.
struct GridParams {
  float scale = 1.0f;
  int zero_point = 0;
  int bits = 4;

  int max_code() const noexcept { return (1 << bits) - 1; }
  friend bool operator==(const GridParams&, const GridParams&) = default;
};

inline constexpr double kMinGridScale = 1e-12;

GridParams fit_grid(std::span<const double> values, int bits);
GridParams fit_grid(std::span<const float> values, int bits);

// Round half away from zero, then clamp to [0, 2^bits - 1].
std::uint8_t quantize_value(double w, const GridParams& g) noexcept;
double dequantize_value(std::uint8_t code, const GridParams& g) noexcept;

/// Two 4-bit codes per byte (low nibble = even index) when bits == 4, one per byte otherwise.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits);
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count, int bits);
std::size_t packed_size(std::size_t count, int bits) noexcept;

/// Grouped low-bit weight matrix. Codes are packed row by row, each row starting
/// on a byte boundary; grid parameters are stored row-major over (row, group).
class QuantizedTensor {
 public:
  QuantizedTensor() = default;
  QuantizedTensor(std::size_t rows, std::size_t cols, int bits, std::size_t group_size, Method method);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int bits() const noexcept { return bits_; }
  std::size_t group_size() const noexcept { return group_size_; }
  Method method() const noexcept { return method_; }
  std::size_t groups_per_row() const noexcept { return (cols_ + group_size_ - 1) / group_size_; }
  std::size_t bytes_per_row() const noexcept { return packed_size(cols_, bits_); }

  std::uint8_t code(std::size_t r, std::size_t c) const noexcept;
  void set_code(std::size_t r, std::size_t c, std::uint8_t code) noexcept;

  const GridParams& params(std::size_t r, std::size_t group) const noexcept {
    return params_[r * groups_per_row() + group];
  }
  GridParams& params(std::size_t r, std::size_t group) noexcept { return params_[r * groups_per_row() + group]; }
  const GridParams& params_for(std::size_t r, std::size_t c) const noexcept { return params(r, c / group_size_); }

  std::span<const std::uint8_t> packed() const noexcept { return packed_; }
  std::span<const GridParams> all_params() const noexcept { return params_; }

  const std::optional<std::vector<float>>& channel_scales() const noexcept { return channel_scales_; }
  void set_channel_scales(std::vector<float> s);

  /// Reassemble from serialized parts; validates sizes and code range.
  static QuantizedTensor from_parts(std::size_t rows, std::size_t cols, int bits, std::size_t group_size,
                                    Method method, std::vector<std::uint8_t> packed,
                                    std::vector<GridParams> params,
                                    std::optional<std::vector<float>> channel_scales);

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  int bits_ = 4;
  std::size_t group_size_ = 128;
  Method method_ = Method::rtn;
  std::vector<std::uint8_t> packed_;
  std::vector<GridParams> params_;
  std::optional<std::vector<float>> channel_scales_;
};

/// (code - zero_point) * scale per entry. AWQ channel scales are not folded in.
Matrix dequantize(const QuantizedTensor& q);

/// Data-free round-to-nearest baseline: per (row, group) fit then round.
QuantizedTensor rtn_quantize(const Matrix& w, const QuantSpec& spec);

/// Shared by rtn and awq: grouped min-max quantization under a given method tag.
QuantizedTensor grouped_quantize(const Matrix& w, int bits, std::size_t group_size, Method method);

}  // namespace qlab
