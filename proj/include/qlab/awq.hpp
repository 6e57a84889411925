#pragma once

#include <cstddef>
#include <vector>

#include "qlab/numerics.hpp"
#include "qlab/quantgrid.hpp"

namespace qlab {

/// Per-input-channel activation magnitudes folded over calibration batches.
class ChannelStats {
 public:
  explicit ChannelStats(std::size_t dim);

  /// batch is d x m.
  void collect(const Matrix& batch);

  std::size_t dim() const noexcept { return sum_abs_.size(); }
  std::size_t n_samples() const noexcept { return n_samples_; }
  std::vector<double> mean_abs() const;
  const std::vector<double>& max_abs() const noexcept { return max_abs_; }

 private:
  std::vector<double> sum_abs_;
  std::vector<double> max_abs_;
  std::size_t n_samples_ = 0;
};

struct AwqScales {
  // Ascending channel indices.
  std::vector<std::size_t> salient;
  // s_j >= 1, exactly 1 outside the salient set.
  std::vector<float> scales;
  double salience_fraction = 0.01;
  AwqScaleMode mode = AwqScaleMode::activation_ratio;

  std::size_t dim() const noexcept { return scales.size(); }
};

std::size_t salient_count(std::size_t dim, double fraction);

AwqScales select_scales(const ChannelStats& stats, const Matrix& w, const QuantSpec& spec);

/// Quantizes W diag(s) group-wise and stores s in the container.
QuantizedTensor awq_quantize(const Matrix& w, const AwqScales& scales, const QuantSpec& spec);

/// W diag(s).
Matrix scale_columns(const Matrix& w, std::span<const float> s);

/// deq(Q) diag(s)^-1: the quantized weight in the original parameterization.
/// Containers without channel scales dequantize unchanged.
Matrix effective_weight(const QuantizedTensor& q);

}  // namespace qlab
