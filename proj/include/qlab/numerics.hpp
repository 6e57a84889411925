#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace qlab {

/// Dense row-major matrix. `Matrix` (32-bit storage) carries weights, activations
/// and Hessians; `MatrixD` is the 64-bit working form used where accumulation
/// precision matters.
template <typename T>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  bool all_finite() const noexcept;

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  BasicMatrix transposed() const;

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

extern template class BasicMatrix<float>;
extern template class BasicMatrix<double>;

/// Packed lower-triangular factor, row i holds entries (i,0..i).
class LowerTriangular {
 public:
  LowerTriangular() = default;
  explicit LowerTriangular(std::size_t n) : n_(n), data_(n * (n + 1) / 2, 0.0) {}

  std::size_t dim() const noexcept { return n_; }
  double& at(std::size_t i, std::size_t j) noexcept { return data_[i * (i + 1) / 2 + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return data_[i * (i + 1) / 2 + j]; }
  // Zero above the diagonal.
  double get(std::size_t i, std::size_t j) const noexcept { return j <= i ? at(i, j) : 0.0; }

  MatrixD dense() const;
  MatrixD times_transpose() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

// Symmetry tolerance is relative to the largest absolute entry.
inline constexpr double kSymmetryTolerance = 1e-6;

LowerTriangular cholesky(const Matrix& a);
LowerTriangular cholesky(const MatrixD& a);

/// Inverse of a symmetric positive definite matrix via Cholesky and two
/// triangular solves per column. The result is exactly symmetric.
MatrixD invert_spd_f64(const MatrixD& a);
Matrix invert_spd(const Matrix& a);

struct SpearmanResult {
  double rho = 0.0;
  // Either input was constant; rho is defined as 0.
  bool degenerate = false;
};

SpearmanResult spearman_rho(std::span<const double> x, std::span<const double> y);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> v);

/// Type-7 quantiles: linear interpolation between closest ranks.
std::vector<double> quantiles(std::span<const double> v, std::span<const double> qs);

double frobenius_norm(const MatrixD& a);

MatrixD matmul(const MatrixD& a, const MatrixD& b);

/// Seeded generator with portable distributions. The standard library's
/// distributions are implementation-defined, so every draw is derived from the
/// raw mt19937_64 stream here to keep artifacts byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace qlab
