#include "qlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qlab/error.hpp"

namespace qlab {

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorKind::ShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                              " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

template <typename T>
bool BasicMatrix<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::transposed() const {
  BasicMatrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

template class BasicMatrix<float>;
template class BasicMatrix<double>;

MatrixD LowerTriangular::dense() const {
  MatrixD out(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j <= i; ++j) out(i, j) = at(i, j);
  return out;
}

MatrixD LowerTriangular::times_transpose() const {
  MatrixD out(n_, n_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= j; ++k) s += at(i, k) * at(j, k);
      out(i, j) = s;
      out(j, i) = s;
    }
  }
  return out;
}

namespace {

template <typename T>
void check_symmetric(const BasicMatrix<T>& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw Error(ErrorKind::ShapeMismatch, "expected a non-empty square matrix, got " +
                                              std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
  double scale = 0.0;
  for (T v : a.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteInput, "matrix has non-finite entries");
    scale = std::max(scale, std::abs(static_cast<double>(v)));
  }
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double diff = std::abs(static_cast<double>(a(i, j)) - static_cast<double>(a(j, i)));
      if (diff > kSymmetryTolerance * scale) {
        throw Error(ErrorKind::NotSymmetric,
                    "entries (" + std::to_string(i) + "," + std::to_string(j) + ") differ by " + std::to_string(diff));
      }
    }
  }
}

template <typename T>
LowerTriangular cholesky_impl(const BasicMatrix<T>& a) {
  check_symmetric(a);
  const std::size_t n = a.rows();
  LowerTriangular l(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      // Lower triangle of A only.
      double sum = static_cast<double>(a(i, j));
      for (std::size_t k = 0; k < j; ++k) sum -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (!(sum > 0.0)) {
          throw Error(ErrorKind::NotPositiveDefinite,
                      "pivot " + std::to_string(i) + " is " + std::to_string(sum) + "; increase damping");
        }
        l.at(i, i) = std::sqrt(sum);
      } else {
        l.at(i, j) = sum / l.at(j, j);
      }
    }
  }
  return l;
}

}  // namespace

LowerTriangular cholesky(const Matrix& a) { return cholesky_impl(a); }
LowerTriangular cholesky(const MatrixD& a) { return cholesky_impl(a); }

MatrixD invert_spd_f64(const MatrixD& a) {
  const LowerTriangular l = cholesky(a);
  const std::size_t n = l.dim();

  // L^{-1}, lower triangular, by forward substitution on unit vectors.
  MatrixD linv(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    linv(c, c) = 1.0 / l.at(c, c);
    for (std::size_t i = c + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = c; k < i; ++k) s -= l.at(i, k) * linv(k, c);
      linv(i, c) = s / l.at(i, i);
    }
  }
  // A^{-1} = L^{-T} L^{-1}; fill one triangle and mirror.
  MatrixD inv(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
      inv(i, j) = s;
      inv(j, i) = s;
    }
  }
  return inv;
}

Matrix invert_spd(const Matrix& a) { return invert_spd_f64(a.cast<double>()).cast<float>(); }

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

SpearmanResult spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw Error(ErrorKind::LengthMismatch, "need at least 2 observations");

  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<double> quantiles(std::span<const double> v, std::span<const double> qs) {
  if (v.empty()) throw Error(ErrorKind::EmptyInput, "quantiles of an empty vector");
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(qs.size());
  const double last = static_cast<double>(sorted.size() - 1);
  for (double q : qs) {
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::DegenerateInput, "quantile probability outside [0,1]");
    double h = q * last;
    auto lo = static_cast<std::size_t>(std::floor(h));
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = h - static_cast<double>(lo);
    out.push_back(sorted[lo] + frac * (sorted[hi] - sorted[lo]));
  }
  return out;
}

double frobenius_norm(const MatrixD& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

MatrixD matmul(const MatrixD& a, const MatrixD& b) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::DimMismatch, "matmul inner dimensions differ");
  MatrixD out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) { return splitmix64(seed ^ fnv1a64(tag)); }

}  // namespace qlab
