// Test-side helpers and reference oracles. Nothing here calls into the
// library's numerical routines, so the oracles stay independent.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "qlab/numerics.hpp"

namespace qt {

using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const qlab::MatrixD& m) {
  Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

inline qlab::MatrixD from_dense(const Dense& d) {
  qlab::MatrixD m(d.size(), d.empty() ? 0 : d[0].size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = d[i][j];
  return m;
}

inline Dense mul(const Dense& a, const Dense& b) {
  Dense c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Gauss-Jordan with partial pivoting.
inline Dense gauss_jordan_inverse(Dense a) {
  const std::size_t n = a.size();
  Dense inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(inv[col], inv[piv]);
    const double p = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

inline qlab::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  qlab::Matrix m(rows, cols);
  for (auto& v : m.data()) v = static_cast<float>(nd(gen));
  return m;
}

// A A^T + shift I, well conditioned for moderate shift.
inline qlab::MatrixD random_spd(std::size_t n, std::mt19937_64& gen, double shift = 1.0) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Dense a(n, std::vector<double>(n));
  for (auto& row : a)
    for (auto& v : row) v = nd(gen);
  Dense s(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) s[i][j] += a[i][k] * a[j][k];
      if (i == j) s[i][j] += shift;
    }
  return from_dense(s);
}

inline double max_abs_diff(const Dense& a, const Dense& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
  return m;
}

// Ranks by brute force: for each element, count smaller and equal elements.
inline std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) ++less;
      if (w == v[i]) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double sorted_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// tr((W - Q) H (W - Q)^T) in plain loops.
inline double proxy_oracle(const qlab::Matrix& w, const qlab::Matrix& q, const qlab::MatrixD& h) {
  double total = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t i = 0; i < w.cols(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double di = static_cast<double>(w(r, i)) - q(r, i);
        const double dj = static_cast<double>(w(r, j)) - q(r, j);
        total += di * h(i, j) * dj;
      }
  return total;
}

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("qlab_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace qt
