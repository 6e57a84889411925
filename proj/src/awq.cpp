#include "qlab/awq.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "qlab/error.hpp"

namespace qlab {

ChannelStats::ChannelStats(std::size_t dim) : sum_abs_(dim, 0.0), max_abs_(dim, 0.0) {
  if (dim == 0) throw Error(ErrorKind::DimMismatch, "channel stats dimension must be >= 1");
}

void ChannelStats::collect(const Matrix& batch) {
  if (batch.rows() != dim()) {
    throw Error(ErrorKind::DimMismatch,
                "batch has " + std::to_string(batch.rows()) + " rows, stats dim is " + std::to_string(dim()));
  }
  if (!batch.all_finite()) throw Error(ErrorKind::NonFiniteInput, "calibration batch has non-finite entries");
  for (std::size_t j = 0; j < dim(); ++j) {
    double s = 0.0;
    double mx = max_abs_[j];
    for (float v : batch.row(j)) {
      const double a = std::abs(static_cast<double>(v));
      s += a;
      mx = std::max(mx, a);
    }
    sum_abs_[j] += s;
    max_abs_[j] = mx;
  }
  n_samples_ += batch.cols();
}

std::vector<double> ChannelStats::mean_abs() const {
  std::vector<double> out(dim(), 0.0);
  if (n_samples_ == 0) return out;
  for (std::size_t j = 0; j < dim(); ++j) out[j] = sum_abs_[j] / static_cast<double>(n_samples_);
  return out;
}

std::size_t salient_count(std::size_t dim, double fraction) {
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(dim)));
  return std::clamp<std::size_t>(n, 1, dim);
}

namespace {

double median(std::vector<double> v) {
  const double half = 0.5;
  return quantiles(v, std::span<const double>(&half, 1))[0];
}

float ratio_scale(double value, double reference, double max_scale) {
  double r;
  if (reference > 0.0) {
    r = value / reference;
  } else {
    r = value > 0.0 ? max_scale : 1.0;
  }
  return static_cast<float>(std::clamp(r, 1.0, max_scale));
}

}  // namespace

AwqScales select_scales(const ChannelStats& stats, const Matrix& w, const QuantSpec& spec) {
  spec.validate();
  if (stats.n_samples() == 0) throw Error(ErrorKind::DegenerateCalibration, "no activation samples collected");
  const std::size_t d = stats.dim();
  if (w.cols() != d) {
    throw Error(ErrorKind::DimMismatch, "W has " + std::to_string(w.cols()) + " input channels, stats have " +
                                            std::to_string(d));
  }
  const std::vector<double> mean = stats.mean_abs();
  if (std::all_of(mean.begin(), mean.end(), [](double v) { return v == 0.0; })) {
    throw Error(ErrorKind::DegenerateCalibration, "all channel activations are zero");
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });

  AwqScales out;
  out.salience_fraction = spec.salience_fraction;
  out.mode = spec.scale_mode;
  out.salient.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(salient_count(d, spec.salience_fraction)));
  std::sort(out.salient.begin(), out.salient.end());
  out.scales.assign(d, 1.0f);

  if (spec.scale_mode == AwqScaleMode::activation_ratio) {
    const double ref = median(mean);
    for (std::size_t j : out.salient) out.scales[j] = ratio_scale(mean[j], ref, spec.max_scale);
  } else {
    std::vector<double> col_max(d, 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) col_max[c] = std::max(col_max[c], std::abs(static_cast<double>(w(r, c))));
    const double ref = median(col_max);
    for (std::size_t j : out.salient)
      out.scales[j] = ratio_scale(spec.weight_max_factor * col_max[j], ref, spec.max_scale);
  }
  return out;
}

Matrix scale_columns(const Matrix& w, std::span<const float> s) {
  if (s.size() != w.cols()) throw Error(ErrorKind::DimMismatch, "scale vector length != W columns");
  Matrix out = w;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < w.cols(); ++c) row[c] *= s[c];
  }
  return out;
}

QuantizedTensor awq_quantize(const Matrix& w, const AwqScales& scales, const QuantSpec& spec) {
  spec.validate();
  if (scales.dim() != w.cols()) {
    throw Error(ErrorKind::DimMismatch, "scales have " + std::to_string(scales.dim()) + " channels, W has " +
                                            std::to_string(w.cols()));
  }
  QuantizedTensor q = grouped_quantize(scale_columns(w, scales.scales), spec.bits, spec.group_size, Method::awq);
  q.set_channel_scales(scales.scales);
  return q;
}

Matrix effective_weight(const QuantizedTensor& q) {
  Matrix out = dequantize(q);
  if (!q.channel_scales()) return out;
  const auto& s = *q.channel_scales();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) row[c] /= s[c];
  }
  return out;
}

}  // namespace qlab
