#include "qlab/quantgrid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qlab/error.hpp"

namespace qlab {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::rtn: return "rtn";
    case Method::gptq: return "gptq";
    case Method::awq: return "awq";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "rtn") return Method::rtn;
  if (s == "gptq") return Method::gptq;
  if (s == "awq") return Method::awq;
  throw Error(ErrorKind::ConfigError, "unknown method '" + std::string(s) + "'");
}

std::string_view to_string(AwqScaleMode m) {
  return m == AwqScaleMode::activation_ratio ? "activation-ratio" : "weight-max";
}

AwqScaleMode parse_scale_mode(std::string_view s) {
  if (s == "activation-ratio") return AwqScaleMode::activation_ratio;
  if (s == "weight-max") return AwqScaleMode::weight_max;
  throw Error(ErrorKind::ConfigError, "unknown AWQ scale mode '" + std::string(s) + "'");
}

void QuantSpec::validate() const {
  if (bits < 2 || bits > 8) throw Error(ErrorKind::ConfigError, "bits must be in [2, 8]");
  if (group_size == 0) throw Error(ErrorKind::ConfigError, "group_size must be >= 1");
  if (!(damping > 0.0)) throw Error(ErrorKind::ConfigError, "damping must be > 0");
  if (batch_size == 0) throw Error(ErrorKind::ConfigError, "batch_size must be >= 1");
  if (!(salience_fraction > 0.0 && salience_fraction <= 1.0))
    throw Error(ErrorKind::ConfigError, "salience_fraction must be in (0, 1]");
  if (!(max_scale >= 1.0)) throw Error(ErrorKind::ConfigError, "max_scale must be >= 1");
  if (!(weight_max_factor > 0.0)) throw Error(ErrorKind::ConfigError, "weight_max_factor must be > 0");
  if (capture_cap == 0) throw Error(ErrorKind::ConfigError, "capture_cap must be >= 1");
}

namespace {

template <typename T>
GridParams fit_grid_impl(std::span<const T> values, int bits) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "fit_grid on empty values");
  if (bits < 2 || bits > 8) throw Error(ErrorKind::ConfigError, "bits must be in [2, 8]");
  double lo = static_cast<double>(values[0]);
  double hi = lo;
  for (T v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "fit_grid on non-finite value");
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  // The fitted range always contains zero, so an integer zero point exists
  // inside [0, levels] and both extremes stay representable.
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  GridParams g;
  g.bits = bits;
  const double levels = static_cast<double>(g.max_code());
  const double span = hi - lo;
  double zp;
  if (span / levels > kMinGridScale) {
    g.scale = static_cast<float>(span / levels);
    // Algebraically -lo / scale, kept in this form so exact halves stay exact.
    zp = std::round(-lo * levels / span);
  } else {
    g.scale = static_cast<float>(kMinGridScale);
    zp = std::round(-lo / kMinGridScale);
  }
  g.zero_point = static_cast<int>(std::clamp(zp, 0.0, levels));
  return g;
}

}  // namespace

GridParams fit_grid(std::span<const double> values, int bits) { return fit_grid_impl(values, bits); }
GridParams fit_grid(std::span<const float> values, int bits) { return fit_grid_impl(values, bits); }

std::uint8_t quantize_value(double w, const GridParams& g) noexcept {
  double q = std::round(w / static_cast<double>(g.scale)) + g.zero_point;
  q = std::clamp(q, 0.0, static_cast<double>(g.max_code()));
  return static_cast<std::uint8_t>(q);
}

double dequantize_value(std::uint8_t code, const GridParams& g) noexcept {
  return static_cast<double>(static_cast<int>(code) - g.zero_point) * static_cast<double>(g.scale);
}

std::size_t packed_size(std::size_t count, int bits) noexcept { return bits == 4 ? (count + 1) / 2 : count; }

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, int bits) {
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  if (bits != 4) {
    std::copy(codes.begin(), codes.end(), out.begin());
    return out;
  }
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto nibble = static_cast<std::uint8_t>(codes[i] & 0x0F);
    out[i / 2] |= (i % 2 == 0) ? nibble : static_cast<std::uint8_t>(nibble << 4);
  }
  return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count, int bits) {
  if (packed.size() != packed_size(count, bits)) {
    throw Error(ErrorKind::ShapeMismatch, "packed code buffer has " + std::to_string(packed.size()) +
                                              " bytes, expected " + std::to_string(packed_size(count, bits)));
  }
  if (bits != 4) return {packed.begin(), packed.end()};
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = (i % 2 == 0) ? (packed[i / 2] & 0x0F) : (packed[i / 2] >> 4);
  }
  return out;
}

QuantizedTensor::QuantizedTensor(std::size_t rows, std::size_t cols, int bits, std::size_t group_size, Method method)
    : rows_(rows), cols_(cols), bits_(bits), group_size_(group_size), method_(method) {
  if (bits < 2 || bits > 8) throw Error(ErrorKind::ConfigError, "bits must be in [2, 8]");
  if (group_size == 0) throw Error(ErrorKind::ConfigError, "group_size must be >= 1");
  packed_.assign(rows_ * bytes_per_row(), 0);
  params_.assign(rows_ * groups_per_row(), GridParams{1.0f, 0, bits});
}

std::uint8_t QuantizedTensor::code(std::size_t r, std::size_t c) const noexcept {
  const std::uint8_t* row = packed_.data() + r * bytes_per_row();
  if (bits_ != 4) return row[c];
  return (c % 2 == 0) ? (row[c / 2] & 0x0F) : (row[c / 2] >> 4);
}

void QuantizedTensor::set_code(std::size_t r, std::size_t c, std::uint8_t code) noexcept {
  std::uint8_t* row = packed_.data() + r * bytes_per_row();
  if (bits_ != 4) {
    row[c] = code;
    return;
  }
  std::uint8_t& b = row[c / 2];
  if (c % 2 == 0) {
    b = static_cast<std::uint8_t>((b & 0xF0) | (code & 0x0F));
  } else {
    b = static_cast<std::uint8_t>((b & 0x0F) | ((code & 0x0F) << 4));
  }
}

void QuantizedTensor::set_channel_scales(std::vector<float> s) {
  if (s.size() != cols_) {
    throw Error(ErrorKind::DimMismatch, "channel scales length " + std::to_string(s.size()) + " != cols " +
                                            std::to_string(cols_));
  }
  for (float v : s)
    if (!(std::isfinite(v) && v > 0.0f)) throw Error(ErrorKind::FormatError, "channel scales must be finite and > 0");
  channel_scales_ = std::move(s);
}

QuantizedTensor QuantizedTensor::from_parts(std::size_t rows, std::size_t cols, int bits, std::size_t group_size,
                                            Method method, std::vector<std::uint8_t> packed,
                                            std::vector<GridParams> params,
                                            std::optional<std::vector<float>> channel_scales) {
  QuantizedTensor q(rows, cols, bits, group_size, method);
  if (packed.size() != q.packed_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "packed codes: " + std::to_string(packed.size()) + " bytes, expected " +
                                              std::to_string(q.packed_.size()));
  }
  if (params.size() != q.params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "grid params: " + std::to_string(params.size()) + ", expected " +
                                              std::to_string(q.params_.size()));
  }
  for (const GridParams& g : params) {
    if (g.bits != bits || !(g.scale > 0.0f) || !std::isfinite(g.scale) || g.zero_point < 0 ||
        g.zero_point > g.max_code()) {
      throw Error(ErrorKind::FormatError, "invalid grid parameters");
    }
  }
  q.packed_ = std::move(packed);
  q.params_ = std::move(params);
  // Padding nibble of odd-length rows must be zero for a canonical container.
  if (bits == 4 && cols % 2 == 1) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (q.packed_[r * q.bytes_per_row() + q.bytes_per_row() - 1] & 0xF0)
        throw Error(ErrorKind::FormatError, "non-zero padding nibble");
    }
  }
  if (bits != 4 && bits != 8) {
    for (std::uint8_t b : q.packed_)
      if (b > (1 << bits) - 1) throw Error(ErrorKind::FormatError, "code out of range for bit width");
  }
  if (channel_scales) q.set_channel_scales(std::move(*channel_scales));
  return q;
}

Matrix dequantize(const QuantizedTensor& q) {
  Matrix out(q.rows(), q.cols());
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < q.cols(); ++c)
      out(r, c) = static_cast<float>(dequantize_value(q.code(r, c), q.params_for(r, c)));
  return out;
}

QuantizedTensor grouped_quantize(const Matrix& w, int bits, std::size_t group_size, Method method) {
  if (!w.all_finite()) throw Error(ErrorKind::NonFiniteInput, "weight matrix has non-finite entries");
  QuantizedTensor q(w.rows(), w.cols(), bits, group_size, method);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    for (std::size_t g = 0; g < q.groups_per_row(); ++g) {
      const std::size_t begin = g * group_size;
      const std::size_t end = std::min(begin + group_size, w.cols());
      const GridParams grid = fit_grid(row.subspan(begin, end - begin), bits);
      q.params(r, g) = grid;
      for (std::size_t c = begin; c < end; ++c) q.set_code(r, c, quantize_value(row[c], grid));
    }
  }
  return q;
}

QuantizedTensor rtn_quantize(const Matrix& w, const QuantSpec& spec) {
  spec.validate();
  return grouped_quantize(w, spec.bits, spec.group_size, Method::rtn);
}

}  // namespace qlab
