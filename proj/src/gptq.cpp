#include "qlab/gptq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qlab/error.hpp"

namespace qlab {

HessianAccumulator::HessianAccumulator(std::size_t dim, double damping_fraction)
    : dim_(dim), damping_fraction_(damping_fraction), sum_xxt_(dim, dim) {
  if (dim == 0) throw Error(ErrorKind::DimMismatch, "Hessian dimension must be >= 1");
  if (!(damping_fraction > 0.0)) throw Error(ErrorKind::ConfigError, "damping fraction must be > 0");
}

void HessianAccumulator::accumulate(const Matrix& batch) {
  if (batch.rows() != dim_) {
    throw Error(ErrorKind::DimMismatch,
                "batch has " + std::to_string(batch.rows()) + " rows, Hessian dim is " + std::to_string(dim_));
  }
  if (!batch.all_finite()) throw Error(ErrorKind::NonFiniteInput, "calibration batch has non-finite entries");
  const std::size_t m = batch.cols();
  for (std::size_t i = 0; i < dim_; ++i) {
    const auto xi = batch.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      const auto xj = batch.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += static_cast<double>(xi[k]) * static_cast<double>(xj[k]);
      sum_xxt_(i, j) += s;
      if (i != j) sum_xxt_(j, i) = sum_xxt_(i, j);
    }
  }
  n_samples_ += m;
}

MatrixD finalize_hessian_f64(const HessianAccumulator& acc) {
  if (acc.n_samples() == 0) throw Error(ErrorKind::DegenerateCalibration, "no calibration samples accumulated");
  const std::size_t d = acc.dim();
  MatrixD h(d, d);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) h(i, j) = 2.0 * acc.sum_xxt()(i, j);
    trace += h(i, i);
  }
  if (trace == 0.0) throw Error(ErrorKind::DegenerateCalibration, "all calibration activations are zero");
  const double lambda = std::max(acc.damping_fraction() * trace / static_cast<double>(d), kMinDamping);
  for (std::size_t i = 0; i < d; ++i) h(i, i) += lambda;
  return h;
}

Matrix finalize_hessian(const HessianAccumulator& acc) { return finalize_hessian_f64(acc).cast<float>(); }

double proxy_error(const Matrix& w, const Matrix& q, const MatrixD& h) {
  if (w.rows() != q.rows() || w.cols() != q.cols()) throw Error(ErrorKind::ShapeMismatch, "W and Q differ in shape");
  if (h.rows() != w.cols() || h.cols() != w.cols()) throw Error(ErrorKind::DimMismatch, "H does not match W columns");
  const std::size_t d = w.cols();
  std::vector<double> delta(d);
  double total = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) delta[c] = static_cast<double>(w(r, c)) - static_cast<double>(q(r, c));
    for (std::size_t i = 0; i < d; ++i) {
      if (delta[i] == 0.0) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += h(i, j) * delta[j];
      total += delta[i] * s;
    }
  }
  return std::max(total, 0.0);
}

MatrixD upper_factor(const MatrixD& a) {
  const LowerTriangular l = cholesky(a);
  const std::size_t n = a.rows();
  MatrixD u(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) u(j, i) = l.at(i, j);
  return u;
}

GptqResult gptq_quantize(const Matrix& w, const MatrixD& h, const QuantSpec& spec) {
  spec.validate();
  const std::size_t rows = w.rows();
  const std::size_t d = w.cols();
  if (h.rows() != d || h.cols() != d) {
    throw Error(ErrorKind::DimMismatch,
                "W has " + std::to_string(d) + " columns, H is " + std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
  }
  if (!w.all_finite()) throw Error(ErrorKind::NonFiniteInput, "weight matrix has non-finite entries");

  // Cross-group mode factors the full inverse; within-group mode factors the
  // inverse of each group's diagonal block, so compensation stays exact inside the group.
  MatrixD hinv = spec.cross_group_propagation ? upper_factor(invert_spd_f64(h)) : MatrixD(d, d);
  MatrixD work = w.cast<double>();
  const std::size_t block = spec.group_size;

  GptqResult result{QuantizedTensor(rows, d, spec.bits, block, Method::gptq), 0.0, std::vector<double>(d, 0.0)};
  QuantizedTensor& q = result.quantized;

  std::vector<GridParams> grids(rows);
  std::vector<double> err(rows);
  for (std::size_t i = 0; i < d; i += block) {
    const std::size_t end = std::min(i + block, d);
    const std::size_t group = i / block;
    // Grid per row from the current, already-compensated weights of this group.
    for (std::size_t r = 0; r < rows; ++r) {
      grids[r] = fit_grid(std::span<const double>(work.row(r).subspan(i, end - i)), spec.bits);
      q.params(r, group) = grids[r];
    }
    const std::size_t update_end = spec.cross_group_propagation ? d : end;
    if (!spec.cross_group_propagation) {
      const std::size_t n = end - i;
      MatrixD block_h(n, n);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) block_h(a, b) = h(i + a, i + b);
      const MatrixD u = upper_factor(invert_spd_f64(block_h));
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a; b < n; ++b) hinv(i + a, i + b) = u(a, b);
    }
    for (std::size_t j = i; j < end; ++j) {
      const double diag = hinv(j, j);
      if (!(diag >= 1e-12)) {
        throw Error(ErrorKind::NotPositiveDefinite,
                    "inverse Hessian diagonal " + std::to_string(j) + " is " + std::to_string(diag));
      }
      double col_loss = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double wv = work(r, j);
        const std::uint8_t code = quantize_value(wv, grids[r]);
        q.set_code(r, j, code);
        const double residual = wv - dequantize_value(code, grids[r]);
        err[r] = residual / diag;
        col_loss += residual * residual / (diag * diag);
      }
      result.per_column_error[j] = col_loss;
      for (std::size_t r = 0; r < rows; ++r) {
        if (err[r] == 0.0) continue;
        auto wr = work.row(r);
        for (std::size_t k = j + 1; k < update_end; ++k) wr[k] -= err[r] * hinv(j, k);
      }
    }
  }
  result.proxy_error = proxy_error(w, dequantize(q), h);
  return result;
}

GptqResult gptq_quantize(const Matrix& w, const Matrix& h, const QuantSpec& spec) {
  return gptq_quantize(w, h.cast<double>(), spec);
}

}  // namespace qlab
