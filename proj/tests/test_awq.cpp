#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "qlab/awq.hpp"
#include "qlab/error.hpp"
#include "support.hpp"

using namespace qlab;

namespace {

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

ChannelStats stats_from_mean(const std::vector<float>& mean) {
  ChannelStats s(mean.size());
  s.collect(Matrix(mean.size(), 1, mean));
  return s;
}

QuantSpec awq_spec(double fraction, std::size_t group = 16) {
  QuantSpec s;
  s.method = Method::awq;
  s.salience_fraction = fraction;
  s.group_size = group;
  return s;
}

std::vector<double> matvec(const Matrix& w, const std::vector<double>& x) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) y[r] += static_cast<double>(w(r, c)) * x[c];
  return y;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("collect example [[1,-3],[0,0]]") {
  ChannelStats s(2);
  s.collect(Matrix(2, 2, std::vector<float>{1, -3, 0, 0}));
  CHECK(s.mean_abs() == std::vector<double>{2, 0});
  CHECK(s.max_abs() == std::vector<double>{3, 0});
  CHECK(s.n_samples() == 2);
}

TEST_CASE("collect over split batches equals one batch") {
  std::mt19937_64 gen(1);
  const Matrix all = qt::random_matrix(6, 10, gen);
  Matrix a(6, 3), b(6, 7);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 10; ++c) (c < 3 ? a(r, c) : b(r, c - 3)) = all(r, c);
  ChannelStats one(6), two(6);
  one.collect(all);
  two.collect(a);
  two.collect(b);
  CHECK(one.max_abs() == two.max_abs());
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(one.mean_abs()[j] - two.mean_abs()[j]) <= 1e-12);
}

TEST_CASE("collect of a zero batch only advances the count") {
  std::mt19937_64 gen(2);
  ChannelStats s(3);
  s.collect(qt::random_matrix(3, 4, gen));
  const auto max_before = s.max_abs();
  const auto sum_before = s.mean_abs();
  s.collect(Matrix(3, 4));
  CHECK(s.n_samples() == 8);
  CHECK(s.max_abs() == max_before);
  for (std::size_t j = 0; j < 3; ++j) CHECK(s.mean_abs()[j] == doctest::Approx(sum_before[j] / 2.0));
  for (double v : s.mean_abs()) CHECK(v >= 0.0);
}

TEST_CASE("collect errors") {
  ChannelStats s(3);
  CHECK(kind_of([&] { s.collect(Matrix(2, 1)); }) == ErrorKind::DimMismatch);
  Matrix nan(3, 1);
  nan(1, 0) = NAN;
  CHECK(kind_of([&] { s.collect(nan); }) == ErrorKind::NonFiniteInput);
}

TEST_CASE("select_scales example (10,1,1,1)") {
  const auto s = select_scales(stats_from_mean({10, 1, 1, 1}), Matrix(2, 4), awq_spec(0.25));
  CHECK(s.salient == std::vector<std::size_t>{0});
  CHECK(s.scales[0] == 10.0f);
  for (std::size_t j = 1; j < 4; ++j) CHECK(s.scales[j] == 1.0f);
}

TEST_CASE("select_scales clamps at max_scale") {
  QuantSpec spec = awq_spec(0.25);
  const auto s = select_scales(stats_from_mean({1000, 1, 1, 1}), Matrix(2, 4), spec);
  CHECK(s.scales[0] == 16.0f);
  spec.max_scale = 4.0;
  CHECK(select_scales(stats_from_mean({1000, 1, 1, 1}), Matrix(2, 4), spec).scales[0] == 4.0f);
}

TEST_CASE("select_scales with equal means is a no-op") {
  const auto s = select_scales(stats_from_mean({3, 3, 3, 3, 3}), Matrix(1, 5), awq_spec(0.4));
  CHECK(s.salient.size() == 2);
  for (float v : s.scales) CHECK(v == 1.0f);
}

TEST_CASE("select_scales breaks ties by lower index") {
  const auto s = select_scales(stats_from_mean({1, 5, 5, 2}), Matrix(1, 4), awq_spec(0.25));
  CHECK(s.salient == std::vector<std::size_t>{1});
}

TEST_CASE("salient count is ceil of the fraction with a floor of one") {
  CHECK(salient_count(64, 0.01) == 1);
  CHECK(salient_count(200, 0.01) == 2);
  CHECK(salient_count(201, 0.01) == 3);
  CHECK(salient_count(4, 1.0) == 4);
}

TEST_CASE("weight-max mode uses column maxima") {
  QuantSpec spec = awq_spec(0.25);
  spec.scale_mode = AwqScaleMode::weight_max;
  const Matrix w(2, 4, std::vector<float>{4, 1, 1, 1, -2, -1, 0.5f, 1});
  const auto s = select_scales(stats_from_mean({1, 9, 1, 1}), w, spec);
  CHECK(s.mode == AwqScaleMode::weight_max);
  CHECK(s.salient == std::vector<std::size_t>{1});
  // Column maxima (4,1,1,1), median 1: channel 1 ratio is 1.
  CHECK(s.scales[1] == 1.0f);
  spec.weight_max_factor = 3.0;
  CHECK(select_scales(stats_from_mean({1, 9, 1, 1}), w, spec).scales[1] == 3.0f);
}

TEST_CASE("select_scales errors") {
  CHECK(kind_of([] { select_scales(ChannelStats(3), Matrix(1, 3), awq_spec(0.5)); }) ==
        ErrorKind::DegenerateCalibration);
  CHECK(kind_of([] { select_scales(stats_from_mean({0, 0, 0}), Matrix(1, 3), awq_spec(0.5)); }) ==
        ErrorKind::DegenerateCalibration);
  CHECK(kind_of([] { select_scales(stats_from_mean({1, 2, 3}), Matrix(1, 4), awq_spec(0.5)); }) ==
        ErrorKind::DimMismatch);
}

TEST_CASE("awq with unit scales matches rtn") {
  std::mt19937_64 gen(3);
  const Matrix w = qt::random_matrix(8, 24, gen);
  AwqScales ones;
  ones.scales.assign(24, 1.0f);
  const QuantSpec spec = awq_spec(0.01, 8);
  const auto a = awq_quantize(w, ones, spec);
  const auto r = rtn_quantize(w, spec);
  CHECK(a.method() == Method::awq);
  CHECK(std::equal(a.packed().begin(), a.packed().end(), r.packed().begin(), r.packed().end()));
  CHECK(std::equal(a.all_params().begin(), a.all_params().end(), r.all_params().begin(), r.all_params().end()));
  CHECK(effective_weight(a) == dequantize(r));
}

TEST_CASE("awq stores scales and rejects a mismatched scale vector") {
  std::mt19937_64 gen(4);
  const Matrix w = qt::random_matrix(4, 8, gen);
  AwqScales s;
  s.scales = {1, 2, 1, 1, 1, 1, 1, 3};
  const auto q = awq_quantize(w, s, awq_spec(0.25, 4));
  REQUIRE(q.channel_scales());
  CHECK(*q.channel_scales() == s.scales);
  s.scales.pop_back();
  CHECK(kind_of([&] { awq_quantize(w, s, awq_spec(0.25, 4)); }) == ErrorKind::DimMismatch);
}

TEST_CASE("scaled weights on rescaled inputs reproduce W x in full precision") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> su(1.0, 16.0);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix w = qt::random_matrix(16, 24, gen);
    std::vector<float> s(24);
    for (auto& v : s) v = static_cast<float>(su(gen));
    std::vector<double> x(24), xs(24);
    for (std::size_t j = 0; j < 24; ++j) {
      x[j] = nd(gen);
      xs[j] = x[j] / s[j];
    }
    const auto ref = matvec(w, x);
    const auto got = matvec(scale_columns(w, s), xs);
    std::vector<double> diff(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) diff[i] = got[i] - ref[i];
    CHECK(norm(diff) / norm(ref) <= 1e-5);
  }
}

TEST_CASE("awq lowers output error on an engineered outlier channel") {
  std::mt19937_64 gen(6);
  int wins = 0;
  for (int seed = 0; seed < 50; ++seed) {
    const Matrix w = qt::random_matrix(64, 64, gen);
    const std::size_t hot = seed % 64;
    auto make_x = [&](std::size_t m) {
      Matrix x = qt::random_matrix(64, m, gen);
      for (auto& v : x.row(hot)) v *= 100.0f;
      return x;
    };
    const Matrix calib = make_x(128);
    const Matrix held = make_x(50);
    ChannelStats stats(64);
    stats.collect(calib);
    const QuantSpec spec = awq_spec(0.01, 16);
    const AwqScales s = select_scales(stats, w, spec);
    REQUIRE(s.salient == std::vector<std::size_t>{hot});
    AwqScales ones;
    ones.scales.assign(64, 1.0f);
    auto held_error = [&](const AwqScales& sc) {
      const Matrix eff = effective_weight(awq_quantize(w, sc, spec));
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < held.cols(); ++k) {
        std::vector<double> x(64);
        for (std::size_t j = 0; j < 64; ++j) x[j] = held(j, k);
        const auto ref = matvec(w, x);
        const auto got = matvec(eff, x);
        for (std::size_t i = 0; i < 64; ++i) {
          num += (ref[i] - got[i]) * (ref[i] - got[i]);
          den += ref[i] * ref[i];
        }
      }
      return std::sqrt(num / den);
    };
    if (held_error(s) < held_error(ones)) ++wins;
  }
  CHECK(wins >= 45);
}

TEST_CASE("argmax of mean activation survives positive rescaling") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix x = qt::random_matrix(32, 40, gen);
    ChannelStats a(32), b(32);
    a.collect(x);
    for (auto& v : x.data()) v *= 7.5f;
    b.collect(x);
    const auto ma = a.mean_abs(), mb = b.mean_abs();
    CHECK(std::max_element(ma.begin(), ma.end()) - ma.begin() == std::max_element(mb.begin(), mb.end()) - mb.begin());
  }
}

TEST_CASE("batch order does not change selected scales") {
  std::mt19937_64 gen(8);
  const Matrix w = qt::random_matrix(8, 32, gen);
  std::vector<Matrix> batches;
  for (int i = 0; i < 6; ++i) batches.push_back(qt::random_matrix(32, 5, gen, 1.0 + i));
  ChannelStats fwd(32), rev(32);
  for (const auto& b : batches) fwd.collect(b);
  for (auto it = batches.rbegin(); it != batches.rend(); ++it) rev.collect(*it);
  const QuantSpec spec = awq_spec(0.1);
  const auto sf = select_scales(fwd, w, spec), sr = select_scales(rev, w, spec);
  CHECK(sf.salient == sr.salient);
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(std::abs(sf.scales[j] - sr.scales[j]) <= 1e-12);
    CHECK(sf.scales[j] >= 1.0f);
    if (!std::binary_search(sf.salient.begin(), sf.salient.end(), j)) CHECK(sf.scales[j] == 1.0f);
  }
}
