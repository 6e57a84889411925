// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlab/awq.hpp"
#include "qlab/calibkit.hpp"
#include "qlab/diagnostics.hpp"
#include "qlab/error.hpp"
#include "qlab/gptq.hpp"
#include "qlab/nanomodel.hpp"
#include "qlab/pipeline.hpp"
#include "qlab/quantgrid.hpp"
#include "qlab/synthcorpus.hpp"
#include "support.hpp"

using namespace qlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<double> matvec(const Matrix& w, const std::vector<double>& x) {
  std::vector<double> y(w.rows(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) y[i] += static_cast<double>(w(i, j)) * x[j];
  return y;
}

MatrixD hessian_of(const Matrix& x) {
  HessianAccumulator acc(x.rows());
  acc.accumulate(x);
  return finalize_hessian_f64(acc);
}

QuantSpec spec_for(Method m, std::size_t group, int bits = 4) {
  QuantSpec s;
  s.method = m;
  s.group_size = group;
  s.bits = bits;
  return s;
}

// ---- 1 --------------------------------------------------------------------
Outcome grid_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(101);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-4.0, 4.0);
  std::size_t checked = 0, violations = 0;
  double outside_worst = 0.0;  // in scale units, for values the rounded zero point pushed out of span
  for (int bits : {2, 3, 4, 8}) {
    // 10k values in groups of 100, each group with its own offset and spread.
    for (int g = 0; g < 100; ++g) {
      std::vector<double> v(100);
      const double off = shift(gen), spread = std::exp(nd(gen));
      for (auto& x : v) x = off + spread * nd(gen);
      const GridParams p = fit_grid(v, bits);
      const double lo = (0 - p.zero_point) * static_cast<double>(p.scale);
      const double hi = (p.max_code() - p.zero_point) * static_cast<double>(p.scale);
      for (double x : v) {
        if (x < lo || x > hi) {
          outside_worst = std::max(outside_worst, std::abs(x - dequantize_value(quantize_value(x, p), p)) / p.scale);
          continue;
        }
        ++checked;
        const double err = std::abs(x - dequantize_value(quantize_value(x, p), p));
        if (err > p.scale / 2.0 * (1 + 1e-6)) ++violations;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 1.0,
          fmt::format("{} of 40000 values in span, {} violations, worst clamp outside span {:.3f} steps, {:.3f}s",
                      checked, violations, outside_worst, secs)};
}

// ---- 2 --------------------------------------------------------------------
Outcome gptq_diagonal() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(202);
  int equal = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix w = qt::random_matrix(32, 32, gen);
    // Orthonormal calibration rows: X = c * I over 32 columns gives a diagonal H.
    Matrix x(32, 32);
    for (std::size_t i = 0; i < 32; ++i) x(i, i) = 1.0f + static_cast<float>(trial % 5);
    const QuantSpec spec = spec_for(Method::gptq, 8);
    const auto g = gptq_quantize(w, hessian_of(x), spec).quantized;
    const auto r = rtn_quantize(w, spec);
    if (std::equal(g.packed().begin(), g.packed().end(), r.packed().begin(), r.packed().end()) &&
        std::equal(g.all_params().begin(), g.all_params().end(), r.all_params().begin(), r.all_params().end()))
      ++equal;
  }
  const double secs = seconds_since(t0);
  return {equal == 50 && secs < 5.0, fmt::format("{}/50 bit-exact, {:.3f}s", equal, secs)};
}

// ---- 3 --------------------------------------------------------------------
Outcome gptq_brute_force() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(303);
  int within = 0, optimal = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix w = qt::random_matrix(1, 4, gen);
    const MatrixD h = hessian_of(qt::random_matrix(4, 256, gen));
    const auto r = gptq_quantize(w, h, spec_for(Method::gptq, 4, 2));
    const double got = qt::proxy_oracle(w, dequantize(r.quantized), h);
    const GridParams p = r.quantized.params(0, 0);
    double best = INFINITY;
    for (int code = 0; code < 256; ++code) {
      Matrix q(1, 4);
      for (std::size_t c = 0; c < 4; ++c)
        q(0, c) = static_cast<float>(((code >> (2 * c)) & 3) - p.zero_point) * p.scale;
      best = std::min(best, qt::proxy_oracle(w, q, h));
    }
    if (got <= 2.0 * best + 1e-12) ++within;
    if (got <= best * (1 + 1e-9) + 1e-15) ++optimal;
  }
  const double secs = seconds_since(t0);
  return {within == 200 && optimal >= 80 && secs < 30.0,
          fmt::format("{}/200 within 2x, {}/200 optimal, {:.3f}s", within, optimal, secs)};
}

// ---- 4 --------------------------------------------------------------------
Outcome gptq_beats_rtn() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(404);
  std::normal_distribution<double> nd(0.0, 1.0);
  int wins = 0;
  double reduction = 0.0;
  const int trials = 200;
  for (int trial = 0; trial < trials; ++trial) {
    const Matrix w = qt::random_matrix(64, 64, gen);
    // AR(1) channel correlation, rho 0.9.
    Matrix x(64, 256);
    for (std::size_t c = 0; c < 256; ++c) {
      double prev = nd(gen);
      for (std::size_t j = 0; j < 64; ++j) {
        if (j > 0) prev = 0.9 * prev + std::sqrt(1 - 0.81) * nd(gen);
        x(j, c) = static_cast<float>(prev);
      }
    }
    const MatrixD h = hessian_of(x);
    const QuantSpec spec = spec_for(Method::gptq, 16);
    const double g = qt::proxy_oracle(w, dequantize(gptq_quantize(w, h, spec).quantized), h);
    const double r = qt::proxy_oracle(w, dequantize(rtn_quantize(w, spec)), h);
    if (g <= r) ++wins;
    reduction += (r - g) / r;
  }
  reduction /= trials;
  const double secs = seconds_since(t0);
  return {wins >= 190 && reduction >= 0.10 && secs < 120.0,
          fmt::format("{}/200 wins, mean reduction {:.1f}%, {:.1f}s", wins, 100 * reduction, secs)};
}

// ---- 5 --------------------------------------------------------------------
Outcome awq_identity() {
  std::mt19937_64 gen(505);
  std::uniform_real_distribution<double> su(1.0, 16.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix w = qt::random_matrix(48, 40, gen);
    const Matrix xm = qt::random_matrix(40, 1, gen);
    std::vector<float> s(40);
    for (auto& v : s) v = static_cast<float>(su(gen));
    const Matrix ws = scale_columns(w, s);
    std::vector<double> x(40), xs(40);
    for (std::size_t j = 0; j < 40; ++j) {
      x[j] = xm(j, 0);
      xs[j] = x[j] / s[j];
    }
    const auto ref = matvec(w, x), got = matvec(ws, xs);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      num += (got[i] - ref[i]) * (got[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    worst = std::max(worst, std::sqrt(num / den));
  }

  // Whole model: install AWQ scales on every projection without rounding.
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 48;
  cfg.context_length = 32;
  InitOptions init;
  init.seed = 55;
  init.outlier_channels = 2;
  init.outlier_scale = 20.0;
  const Model model = init_random(cfg, init);
  CalibrationSet calib;
  calib.n = 4;
  calib.t = 32;
  std::uniform_int_distribution<TokenId> tok(0, 255);
  for (std::size_t i = 0; i < calib.n; ++i) {
    std::vector<TokenId> ex(calib.t);
    for (auto& v : ex) v = tok(gen);
    calib.examples.push_back(ex);
    calib.langs.push_back("en");
  }
  const auto names = projection_names(cfg);
  const CaptureBuffer cap = capture_calibration(model, calib, names, 8192);
  QuantSpec spec = spec_for(Method::awq, 16);
  spec.salience_fraction = 0.1;
  Model scaled = model;
  for (const auto& name : names) {
    ChannelStats st(model.at(name).cols());
    st.collect(cap.matrix(name));
    const AwqScales s = select_scales(st, model.at(name), spec);
    scaled.weights[name] = scale_columns(model.at(name), s.scales);
    scaled.input_scales[name] = s.scales;
  }
  std::vector<TokenId> probe(32);
  for (auto& v : probe) v = tok(gen);
  const Matrix a = forward(model, probe), b = forward(scaled, probe);
  double logit_gap = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    logit_gap = std::max(logit_gap, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return {worst <= 1e-5 && logit_gap <= 1e-4,
          fmt::format("worst relative output gap {:.2e}, model logit max-abs {:.2e}", worst, logit_gap)};
}

// ---- 6 --------------------------------------------------------------------
Outcome awq_outlier() {
  std::mt19937_64 gen(606);
  int wins = 0;
  for (int seed = 0; seed < 50; ++seed) {
    const Matrix w = qt::random_matrix(64, 64, gen);
    const std::size_t hot = static_cast<std::size_t>(seed) % 64;
    auto make_x = [&](std::size_t m) {
      Matrix x = qt::random_matrix(64, m, gen);
      for (auto& v : x.row(hot)) v *= 100.0f;
      return x;
    };
    const Matrix calib = make_x(128), held = make_x(64);
    ChannelStats stats(64);
    stats.collect(calib);
    QuantSpec spec = spec_for(Method::awq, 16);
    spec.salience_fraction = 0.01;
    const AwqScales s = select_scales(stats, w, spec);
    AwqScales ones;
    ones.scales.assign(64, 1.0f);
    auto held_error = [&](const AwqScales& sc) {
      const Matrix eff = effective_weight(awq_quantize(w, sc, spec));
      double num = 0.0;
      for (std::size_t k = 0; k < held.cols(); ++k) {
        std::vector<double> x(64);
        for (std::size_t j = 0; j < 64; ++j) x[j] = held(j, k);
        const auto ref = matvec(w, x), got = matvec(eff, x);
        for (std::size_t i = 0; i < 64; ++i) num += (ref[i] - got[i]) * (ref[i] - got[i]);
      }
      return num;
    };
    const bool covers = std::find(s.salient.begin(), s.salient.end(), hot) != s.salient.end();
    if (covers && held_error(s) < held_error(ones)) ++wins;
  }
  return {wins >= 45, fmt::format("{}/50 seeds lower held-out error", wins)};
}

// ---- 7 --------------------------------------------------------------------
Outcome budget_law() {
  SynthCorpusOptions opts;
  opts.seed = 7;
  opts.docs_per_lang = 12;
  opts.words_per_doc = 300;
  const Corpus corpus = group_by_lang(synthetic_corpus(opts));
  const auto extra = synthetic_extra(8, 6, 30);
  const std::vector<std::string> strategies = {
      "single:en", "single:zh", "multi10", "multimix", "multi", "plus_code:multi10", "plus_math:single:en",
      "plus_codemath:multi"};
  int ok = 0;
  std::string bad;
  for (const auto& s : strategies) {
    BuildRequest req;
    req.strategy = Strategy::parse(s);
    req.n = 40;
    req.t = 48;
    req.seed = 77;
    const auto a = build_calibration(req, corpus, extra);
    const auto b = build_calibration(req, corpus, extra);
    bool good = a.total_tokens() == req.n * req.t && a.examples.size() == req.n;
    for (const auto& ex : a.examples) good = good && ex.size() == req.t;
    good = good && serialize_calibration(a) == serialize_calibration(b);
    if (good)
      ++ok;
    else
      bad += " " + s;
  }

  BuildRequest big;
  big.strategy = Strategy::parse("multi10");
  big.n = 1024;
  big.t = 16;
  big.seed = 3;
  const auto m10 = build_calibration(big, corpus, extra);
  const auto counts = m10.lang_counts();
  bool quota = m10.total_tokens() == 1024 * 16;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto it = counts.find(std::string(kMulti10Order[i]));
    quota = quota && it != counts.end() && it->second == (i < 4 ? 103u : 102u);
  }
  quota = quota && serialize_calibration(m10) == serialize_calibration(build_calibration(big, corpus, extra));
  return {ok == static_cast<int>(strategies.size()) && quota,
          fmt::format("{}/{} strategies exact and deterministic{}, multi10 N=1024 quotas {}", ok, strategies.size(),
                      bad.empty() ? "" : " (failed:" + bad + ")", quota ? "103x4/102x6" : "wrong")};
}

// ---- 8 --------------------------------------------------------------------
Outcome pipeline_run() {
  const auto t0 = Clock::now();
  qt::TempDir dir("accept");
  SynthCorpusOptions corpus;
  corpus.seed = 11;
  corpus.docs_per_lang = 6;
  corpus.words_per_doc = 300;
  write_corpus_dir(synthetic_corpus(corpus), dir.path / "corpus");
  SynthCorpusOptions eval = corpus;
  eval.seed = 12;
  eval.docs_per_lang = 3;
  eval.langs = {"en", "zh"};
  write_corpus_dir(synthetic_corpus(eval), dir.path / "eval");
  write_documents(synthetic_extra(13, 4, 20), dir.path / "extra.jsonl");
  const nlohmann::json j = {
      {"model",
       {{"config", {{"d_model", 32}, {"n_layers", 4}, {"n_heads", 4}, {"d_ff", 64}, {"context_length", 128}}},
        {"init", {{"seed", 21}, {"high_byte_scale", 3.0}}}}},
      {"corpus_dir", "corpus"},
      {"extra", "extra.jsonl"},
      {"eval_dir", "eval"},
      {"eval_tokens", 4096},
      {"tokenizer", "byte_level"},
      {"calibrations", {"single:en", "single:zh", "multi10"}},
      {"methods", {"rtn", "gptq", "awq"}},
      {"n", 32},
      {"t", 128},
      {"seed", 5},
      {"quant", {{"group_size", 32}}},
      {"out_dir", "runs"}};
  const PipelineConfig cfg = parse_pipeline_config(j, dir.path);
  const auto first = run_pipeline(cfg, PipelineOptions{});
  if (first.exit_code != 0) return {false, fmt::format("pipeline exit code {}", first.exit_code)};
  const std::string manifest = qt::slurp(first.run_dir / "manifest.json");
  const std::string csv = qt::slurp(first.run_dir / "delta_ppl.csv");
  const auto second = run_pipeline(cfg, PipelineOptions{});
  const bool rerun = second.exit_code == 0 && qt::slurp(second.run_dir / "manifest.json") == manifest &&
                     qt::slurp(second.run_dir / "delta_ppl.csv") == csv;

  // Baseline rows must be exactly zero; all 9 cells present.
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  const bool header = line == "method,calibration,en,zh,Avg";
  int rows = 0, zero_baseline = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",single:en,") != std::string::npos &&
        line.substr(line.find(",single:en,") + 10) == ",0.0000,0.0000,0.0000")
      ++zero_baseline;
  }
  const double secs = seconds_since(t0);
  return {header && rows == 9 && zero_baseline == 3 && rerun && secs < 300.0,
          fmt::format("{} rows, {}/3 zero baseline rows, rerun hashes {}, {:.1f}s", rows, zero_baseline,
                      rerun ? "match" : "differ", secs)};
}

// ---- 9 --------------------------------------------------------------------
Outcome diagnostics_identities() {
  std::mt19937_64 gen(909);
  std::vector<std::string> failed;
  NamedTensorStore s;
  s["layer0.q_proj"] = qt::random_matrix(8, 8, gen);
  s["layer1.down_proj"] = qt::random_matrix(8, 12, gen);
  const auto mse = layer_mse(s, s);
  for (const auto& [name, v] : mse.per_tensor)
    if (v != 0.0) failed.push_back("layer_mse " + name);

  const MatrixD a = qt::random_spd(12, gen);
  MatrixD a2 = a;
  for (auto& v : a2.data()) v *= 2.0;
  if (hessian_distance(a, a) != 0.0) failed.push_back("hessian_distance(A,A)");
  if (std::abs(hessian_distance(a, a2) - 2.0 / 3.0) > 1e-9) failed.push_back("hessian_distance(A,2A)");

  std::vector<double> x(30), neg(30), mono(30);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = nd(gen);
    neg[i] = -x[i];
    mono[i] = std::exp(x[i]);
  }
  if (spearman_rho(x, x).rho != 1.0) failed.push_back("spearman(x,x)");
  if (spearman_rho(x, mono).rho != 1.0) failed.push_back("spearman(x,exp x)");
  if (spearman_rho(x, neg).rho != -1.0) failed.push_back("spearman(x,-x)");

  std::uniform_int_distribution<TokenId> id(0, 80);
  int law = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CalibrationSet sets[3];
    for (auto& cs : sets) {
      std::vector<TokenId> ex(30);
      for (auto& v : ex) v = id(gen);
      cs.examples = {ex};
      cs.langs = {"en"};
      cs.n = 1;
      cs.t = ex.size();
    }
    const auto o = vocab_overlap({&sets[0], &sets[1], &sets[2]});
    if (*o.abc <= std::min({o.ab, *o.ac, *o.bc})) ++law;
  }
  if (law != 100) failed.push_back(fmt::format("overlap law {}/100", law));
  std::string detail = "all identities hold";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  return {failed.empty(), detail};
}

// ---- 10 -------------------------------------------------------------------
Outcome container_fidelity() {
  std::mt19937_64 gen(1010);
  int identical = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig cfg;
    cfg.d_model = 8 + 4 * static_cast<std::size_t>(trial % 3);
    cfg.n_layers = 1 + static_cast<std::size_t>(trial % 2);
    cfg.n_heads = 2;
    cfg.d_ff = 9 + 2 * static_cast<std::size_t>(trial);  // always odd
    cfg.context_length = 16;
    InitOptions init;
    init.seed = static_cast<std::uint64_t>(trial) + 1;
    const Model model = init_random(cfg, init);
    const auto qlb = encode_qlb1(model);
    const bool qlb_ok = encode_qlb1(decode_qlb1(qlb)) == qlb;

    CalibrationSet calib;
    calib.n = 2;
    calib.t = 16;
    std::uniform_int_distribution<TokenId> tok(0, 255);
    for (std::size_t i = 0; i < calib.n; ++i) {
      std::vector<TokenId> ex(calib.t);
      for (auto& v : ex) v = tok(gen);
      calib.examples.push_back(ex);
      calib.langs.push_back("en");
    }
    const Method method = static_cast<Method>(trial % 3);
    const QuantSpec spec = spec_for(method, trial % 2 ? 4 : 5);
    const QuantizedModel qm = quantize_model(model, method, calib, spec);
    const auto qlq = encode_qlq1(qm);
    const bool qlq_ok = encode_qlq1(decode_qlq1(qlq)) == qlq;

    qt::TempDir dir("c10");
    save_qlb1(model, dir.path / "m.qlb1");
    save_qlq1(qm, dir.path / "m.qlq1");
    save_qlb1(load_qlb1(dir.path / "m.qlb1"), dir.path / "m2.qlb1");
    save_qlq1(load_qlq1(dir.path / "m.qlq1"), dir.path / "m2.qlq1");
    const bool files_ok = qt::slurp(dir.path / "m.qlb1") == qt::slurp(dir.path / "m2.qlb1") &&
                          qt::slurp(dir.path / "m.qlq1") == qt::slurp(dir.path / "m2.qlq1");
    if (qlb_ok && qlq_ok && files_ok) ++identical;
  }
  return {identical == 20, fmt::format("{}/20 models byte-identical", identical)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"grid round trip", grid_round_trip},
      {"gptq diagonal reduction", gptq_diagonal},
      {"gptq vs brute force", gptq_brute_force},
      {"gptq beats rtn", gptq_beats_rtn},
      {"awq full-precision identity", awq_identity},
      {"awq engineered outlier", awq_outlier},
      {"calibration budget law", budget_law},
      {"pipeline run", pipeline_run},
      {"diagnostics identities", diagnostics_identities},
      {"container fidelity", container_fidelity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    fmt::print("[{}] {:2d} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
