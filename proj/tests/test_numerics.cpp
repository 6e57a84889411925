#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "qlab/error.hpp"
#include "qlab/numerics.hpp"
#include "support.hpp"

using namespace qlab;

namespace {

double rel_frob(const MatrixD& a, const MatrixD& b) {
  double d = 0.0, n = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    n += b.data()[i] * b.data()[i];
  }
  return std::sqrt(d / n);
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("matrix construction checks the data length") {
  CHECK(kind_of([] { Matrix(2, 3, std::vector<float>(5)); }) == ErrorKind::ShapeMismatch);
  const Matrix m(2, 3, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(m(1, 0) == 4.0f);
  CHECK(m.transposed()(0, 1) == 4.0f);
  CHECK(m.all_finite());
}

TEST_CASE("cholesky of identity is identity") {
  const auto l = cholesky(MatrixD::identity(3));
  CHECK(l.dense() == MatrixD::identity(3));
}

TEST_CASE("cholesky hand example [[4,2],[2,3]]") {
  const MatrixD a(2, 2, std::vector<double>{4, 2, 2, 3});
  const auto l = cholesky(a);
  CHECK(l.get(0, 0) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(l.get(0, 1) == 0.0);
  CHECK(l.get(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(l.get(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("cholesky rejects indefinite and asymmetric input") {
  CHECK(kind_of([] { cholesky(MatrixD(2, 2, std::vector<double>{1, 2, 2, 1})); }) == ErrorKind::NotPositiveDefinite);
  CHECK(kind_of([] { cholesky(MatrixD(2, 2, std::vector<double>{2, 1, 0, 2})); }) == ErrorKind::NotSymmetric);
  CHECK(kind_of([] { cholesky(MatrixD(2, 3)); }) == ErrorKind::ShapeMismatch);
  MatrixD nan = MatrixD::identity(2);
  nan(0, 0) = std::nan("");
  CHECK(kind_of([&] { cholesky(nan); }) == ErrorKind::NonFiniteInput);
}

TEST_CASE("cholesky tolerates tiny asymmetry within the relative tolerance") {
  MatrixD a(2, 2, std::vector<double>{4, 2, 2, 3});
  a(0, 1) += 1e-8;
  CHECK_NOTHROW(cholesky(a));
}

TEST_CASE("cholesky reconstructs random SPD matrices to 1e-8") {
  std::mt19937_64 gen(11);
  for (std::size_t n : {1u, 2u, 5u, 16u, 48u}) {
    const MatrixD a = qt::random_spd(n, gen);
    CHECK(rel_frob(cholesky(a).times_transpose(), a) <= 1e-8);
  }
}

TEST_CASE("invert_spd diagonal and identity") {
  const Matrix inv = invert_spd(Matrix(2, 2, std::vector<float>{2, 0, 0, 4}));
  CHECK(inv(0, 0) == 0.5f);
  CHECK(inv(1, 1) == 0.25f);
  CHECK(inv(0, 1) == 0.0f);
  CHECK(invert_spd_f64(MatrixD::identity(5)) == MatrixD::identity(5));
}

TEST_CASE("invert_spd matches a Gauss-Jordan oracle on random 8x8 SPD") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixD a = qt::random_spd(8, gen);
    const MatrixD inv = invert_spd_f64(a);
    const auto oracle = qt::gauss_jordan_inverse(qt::to_dense(a));
    CHECK(qt::max_abs_diff(qt::to_dense(inv), oracle) <= 1e-6);
    // A * inv == I and exact symmetry.
    const auto prod = qt::mul(qt::to_dense(a), qt::to_dense(inv));
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        CHECK(std::abs(prod[i][j] - (i == j ? 1.0 : 0.0)) <= 1e-6);
        CHECK(inv(i, j) == inv(j, i));
      }
  }
}

TEST_CASE("invert_spd is an involution on well-conditioned input") {
  std::mt19937_64 gen(3);
  const MatrixD a = qt::random_spd(12, gen, 12.0);
  CHECK(rel_frob(invert_spd_f64(invert_spd_f64(a)), a) <= 1e-5);
}

TEST_CASE("invert_spd propagates NotPositiveDefinite") {
  CHECK(kind_of([] { invert_spd(Matrix(2, 2, std::vector<float>{1, 2, 2, 1})); }) == ErrorKind::NotPositiveDefinite);
}

TEST_CASE("spearman monotone and anti-monotone") {
  const std::vector<double> x{1, 2, 3}, up{10, 20, 30}, down{3, 2, 1};
  CHECK(spearman_rho(x, up).rho == doctest::Approx(1.0));
  CHECK(spearman_rho(x, down).rho == doctest::Approx(-1.0));
}

TEST_CASE("spearman with ties matches a rank-then-Pearson oracle") {
  const std::vector<double> x{1, 2, 2, 4}, y{1, 3, 2, 4};
  const double oracle = qt::pearson(qt::brute_ranks(x), qt::brute_ranks(y));
  CHECK(spearman_rho(x, y).rho == doctest::Approx(oracle).epsilon(1e-12));

  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> small(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(9), b(9);
    for (auto& v : a) v = small(gen);
    for (auto& v : b) v = small(gen);
    const auto r = spearman_rho(a, b);
    if (r.degenerate) continue;
    CHECK(r.rho == doctest::Approx(qt::pearson(qt::brute_ranks(a), qt::brute_ranks(b))).epsilon(1e-12));
    CHECK(r.rho >= -1.0);
    CHECK(r.rho <= 1.0);
    CHECK(spearman_rho(b, a).rho == r.rho);
    CHECK(spearman_rho(a, a).rho == doctest::Approx(1.0));
  }
}

TEST_CASE("spearman errors and degenerate input") {
  const std::vector<double> a{1, 2, 3}, b{1, 2};
  CHECK(kind_of([&] { spearman_rho(a, b); }) == ErrorKind::LengthMismatch);
  const std::vector<double> one{1};
  CHECK(kind_of([&] { spearman_rho(one, one); }) == ErrorKind::LengthMismatch);
  const std::vector<double> flat{2, 2, 2};
  const auto r = spearman_rho(flat, a);
  CHECK(r.degenerate);
  CHECK(r.rho == 0.0);
}

TEST_CASE("average ranks share tied positions") {
  const std::vector<double> v{10, 20, 20, 5};
  const auto r = average_ranks(v);
  CHECK(r == std::vector<double>{2.0, 3.5, 3.5, 1.0});
}

TEST_CASE("quantiles examples") {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  const std::vector<double> qs{0, 0.5, 1};
  CHECK(quantiles(v, qs) == std::vector<double>{1, 50.5, 100});
  const std::vector<double> seven{7}, q25{0.25};
  CHECK(quantiles(seven, q25)[0] == 7);
  const std::vector<double> three{3, 1, 2}, top{1.0};
  CHECK(quantiles(three, top)[0] == 3);
}

TEST_CASE("quantiles match a sort-based oracle, are monotone and permutation invariant") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> nd;
  std::vector<double> v(257);
  for (auto& x : v) x = nd(gen);
  std::vector<double> qs;
  for (int i = 0; i <= 40; ++i) qs.push_back(i / 40.0);
  const auto out = quantiles(v, qs);
  for (std::size_t i = 0; i < qs.size(); ++i) {
    CHECK(out[i] == doctest::Approx(qt::sorted_quantile(v, qs[i])).epsilon(1e-12));
    if (i) CHECK(out[i] >= out[i - 1]);
  }
  std::shuffle(v.begin(), v.end(), gen);
  CHECK(quantiles(v, qs) == out);
}

TEST_CASE("quantiles errors") {
  const std::vector<double> empty, qs{0.5}, v{1, 2}, bad{1.5};
  CHECK(kind_of([&] { quantiles(empty, qs); }) == ErrorKind::EmptyInput);
  CHECK(kind_of([&] { quantiles(v, bad); }) == ErrorKind::DegenerateInput);
}

TEST_CASE("frobenius norm and matmul") {
  const MatrixD a(2, 2, std::vector<double>{3, 0, 0, 4});
  CHECK(frobenius_norm(a) == 5.0);
  const MatrixD b(2, 1, std::vector<double>{1, 1});
  CHECK(matmul(a, b) == MatrixD(2, 1, std::vector<double>{3, 4}));
}

TEST_CASE("rng is reproducible and derive_seed separates tags") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(1, "x") != derive_seed(1, "y"));
  CHECK(derive_seed(1, "x") == derive_seed(1, "x"));
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  // Normal draws: mean near 0, variance near 1.
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 0.05);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
