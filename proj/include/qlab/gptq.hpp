#pragma once

#include <cstddef>
#include <vector>

#include "qlab/numerics.hpp"
#include "qlab/quantgrid.hpp"

namespace qlab {

/// Running sum of X X^T over calibration columns, in 64-bit.
class HessianAccumulator {
 public:
  explicit HessianAccumulator(std::size_t dim, double damping_fraction = 0.01);

  /// batch is d x m, one calibration column per input sample.
  void accumulate(const Matrix& batch);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t n_samples() const noexcept { return n_samples_; }
  double damping_fraction() const noexcept { return damping_fraction_; }
  const MatrixD& sum_xxt() const noexcept { return sum_xxt_; }

 private:
  std::size_t dim_;
  double damping_fraction_;
  MatrixD sum_xxt_;
  std::size_t n_samples_ = 0;
};

inline constexpr double kMinDamping = 1e-8;

/// H = 2 sum_xxT + lambda I, lambda = fraction * mean(diag(2 sum_xxT)) floored at kMinDamping.
MatrixD finalize_hessian_f64(const HessianAccumulator& acc);
Matrix finalize_hessian(const HessianAccumulator& acc);

struct GptqResult {
  QuantizedTensor quantized;
  // tr((W - Q) H (W - Q)^T) against the original weights.
  double proxy_error = 0.0;
  // Per column: sum over rows of (w - q)^2 / Hinv[j,j] at the moment column j is rounded.
  std::vector<double> per_column_error;
};

GptqResult gptq_quantize(const Matrix& w, const MatrixD& h, const QuantSpec& spec);
GptqResult gptq_quantize(const Matrix& w, const Matrix& h, const QuantSpec& spec);

/// tr((W - Q) H (W - Q)^T) with Q given densely.
double proxy_error(const Matrix& w, const Matrix& q, const MatrixD& h);

}  // namespace qlab
