#include "qlab/nanomodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qlab/error.hpp"
#include "qlab/gptq.hpp"

namespace qlab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::ConfigError, "model config: " + m); };
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || context_length == 0) {
    fail("all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embeddings");
}

std::string projection_name(std::size_t layer, std::string_view kind) {
  return "layer" + std::to_string(layer) + "." + std::string(kind);
}

std::vector<std::string> projection_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::string_view k : kProjectionKinds) names.push_back(projection_name(l, k));
  return names;
}

bool is_projection(std::string_view name) {
  const auto dot = name.find('.');
  if (dot == std::string_view::npos || name.substr(0, 5) != "layer") return false;
  const auto kind = name.substr(dot + 1);
  return std::find(std::begin(kProjectionKinds), std::end(kProjectionKinds), kind) != std::end(kProjectionKinds);
}

std::map<std::string, std::pair<std::size_t, std::size_t>> tensor_shapes(const ModelConfig& cfg) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> s;
  const std::size_t d = cfg.d_model;
  s["embed"] = {cfg.vocab_size, d};
  s["lm_head"] = {cfg.vocab_size, d};
  s["final_norm"] = {1, d};
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    s[p + "attn_norm"] = {1, d};
    s[p + "mlp_norm"] = {1, d};
    s[p + "q_proj"] = {d, d};
    s[p + "k_proj"] = {d, d};
    s[p + "v_proj"] = {d, d};
    s[p + "o_proj"] = {d, d};
    s[p + "gate_proj"] = {cfg.d_ff, d};
    s[p + "up_proj"] = {cfg.d_ff, d};
    s[p + "down_proj"] = {d, cfg.d_ff};
  }
  return s;
}

void Model::validate() const {
  config.validate();
  const auto shapes = tensor_shapes(config);
  for (const auto& [name, shape] : shapes) {
    auto it = weights.find(name);
    if (it == weights.end()) throw Error(ErrorKind::ShapeMismatch, "missing tensor " + name);
    if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " is " + std::to_string(it->second.rows()) + "x" +
                                                std::to_string(it->second.cols()) + ", expected " +
                                                std::to_string(shape.first) + "x" + std::to_string(shape.second));
    }
  }
  for (const auto& [name, w] : weights) {
    if (!shapes.count(name)) throw Error(ErrorKind::ShapeMismatch, "unexpected tensor " + name);
  }
  for (const auto& [name, s] : input_scales) {
    if (!is_projection(name) || !weights.count(name)) throw Error(ErrorKind::UnknownProjection, name);
    if (s.size() != weights.at(name).cols()) throw Error(ErrorKind::DimMismatch, "input scales for " + name);
  }
}

const Matrix& Model::at(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw Error(ErrorKind::UnknownProjection, "no tensor named " + name);
  return it->second;
}

Model init_random(const ModelConfig& cfg, const InitOptions& opts) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(opts.seed);
  // Fixed iteration order over the sorted shape map keeps init reproducible.
  for (const auto& [name, shape] : tensor_shapes(cfg)) {
    Matrix w(shape.first, shape.second);
    if (name.find("norm") != std::string::npos) {
      std::fill(w.data().begin(), w.data().end(), 1.0f);
    } else {
      const double std = name == "embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(shape.second));
      for (float& v : w.data()) v = static_cast<float>(std * rng.normal());
    }
    m.weights.emplace(name, std::move(w));
  }
  Matrix& embed = m.weights.at("embed");
  if (opts.outlier_channels > 0) {
    std::vector<std::size_t> channels(cfg.d_model);
    for (std::size_t i = 0; i < channels.size(); ++i) channels[i] = i;
    rng.shuffle(channels);
    channels.resize(std::min(opts.outlier_channels, cfg.d_model));
    for (std::size_t r = 0; r < embed.rows(); ++r)
      for (std::size_t c : channels) embed(r, c) *= static_cast<float>(opts.outlier_scale);
  }
  if (opts.high_byte_scale != 1.0) {
    for (std::size_t r = 128; r < std::min<std::size_t>(256, embed.rows()); ++r)
      for (float& v : embed.row(r)) v *= static_cast<float>(opts.high_byte_scale);
  }
  return m;
}

CaptureBuffer::CaptureBuffer(std::set<std::string> names, std::size_t cap, std::uint64_t seed)
    : names_(std::move(names)), cap_(cap), seed_(seed) {
  if (cap_ == 0) throw Error(ErrorKind::ConfigError, "capture cap must be >= 1");
}

void CaptureBuffer::add(const std::string& name, std::span<const float> column) {
  if (!wants(name)) return;
  auto [it, inserted] = slots_.try_emplace(name);
  Slot& slot = it->second;
  if (inserted) {
    slot.dim = column.size();
    slot.rng = Rng(derive_seed(seed_, "capture:" + name));
  } else if (slot.dim != column.size()) {
    throw Error(ErrorKind::DimMismatch, "capture column for " + name + " changed dimension");
  }
  ++slot.seen;
  if (slot.seen <= cap_) {
    slot.data.insert(slot.data.end(), column.begin(), column.end());
    return;
  }
  const std::uint64_t j = slot.rng.below(slot.seen);
  if (j < cap_) std::copy(column.begin(), column.end(), slot.data.begin() + static_cast<std::ptrdiff_t>(j * slot.dim));
}

std::size_t CaptureBuffer::columns(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? 0 : it->second.data.size() / it->second.dim;
}

std::size_t CaptureBuffer::seen(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? 0 : it->second.seen;
}

Matrix CaptureBuffer::matrix(const std::string& name) const {
  auto it = slots_.find(name);
  if (it == slots_.end()) throw Error(ErrorKind::UnknownProjection, "nothing captured for " + name);
  const Slot& s = it->second;
  const std::size_t n = s.data.size() / s.dim;
  Matrix out(s.dim, n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 0; r < s.dim; ++r) out(r, c) = s.data[c * s.dim + r];
  return out;
}

namespace {

// y = W (x / s); s optional.
void linear(const Matrix& w, const std::vector<float>* scales, std::span<const float> x, std::span<float> y) {
  std::vector<float> scaled;
  if (scales) {
    scaled.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) scaled[i] = x[i] / (*scales)[i];
    x = scaled;
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const auto row = w.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += static_cast<double>(row[c]) * static_cast<double>(x[c]);
    y[r] = static_cast<float>(s);
  }
}

void rms_norm(std::span<const float> x, std::span<const float> weight, std::span<float> out) {
  double ss = 0.0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kRmsEps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] * inv * weight[i]);
}

void rotate(std::span<float> v, std::size_t n_heads, std::size_t head_dim, std::size_t pos) {
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < head_dim; i += 2) {
      const double freq = std::pow(kRopeTheta, -static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(pos) * freq;
      const double c = std::cos(angle), s = std::sin(angle);
      float& a = v[h * head_dim + i];
      float& b = v[h * head_dim + i + 1];
      const double x0 = a, x1 = b;
      a = static_cast<float>(x0 * c - x1 * s);
      b = static_cast<float>(x0 * s + x1 * c);
    }
  }
}

struct Projector {
  const Model& model;
  CaptureBuffer* capture;

  void operator()(const std::string& name, std::span<const float> x, std::span<float> y) const {
    if (capture) capture->add(name, x);
    auto it = model.input_scales.find(name);
    linear(model.at(name), it == model.input_scales.end() ? nullptr : &it->second, x, y);
  }
};

}  // namespace

Matrix forward(const Model& model, std::span<const TokenId> tokens, CaptureBuffer* capture) {
  const ModelConfig& cfg = model.config;
  if (tokens.size() > cfg.context_length) {
    throw Error(ErrorKind::ContextOverflow, std::to_string(tokens.size()) + " tokens exceed context length " +
                                                std::to_string(cfg.context_length));
  }
  if (capture) {
    for (const auto& n : capture->names()) {
      if (!is_projection(n) || !model.weights.count(n)) throw Error(ErrorKind::UnknownProjection, n);
    }
  }
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim();
  const Projector project{model, capture};

  Matrix x(n, d);
  const Matrix& embed = model.at("embed");
  for (std::size_t t = 0; t < n; ++t) {
    if (tokens[t] >= cfg.vocab_size) {
      throw Error(ErrorKind::VocabMismatch, "token id " + std::to_string(tokens[t]) + " >= vocab size " +
                                                std::to_string(cfg.vocab_size));
    }
    std::copy(embed.row(tokens[t]).begin(), embed.row(tokens[t]).end(), x.row(t).begin());
  }

  Matrix h(n, d), q(n, d), k(n, d), v(n, d), att(n, d), gate(n, cfg.d_ff), up(n, cfg.d_ff);
  std::vector<float> tmp(d);
  std::vector<double> scores(n);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const auto attn_norm = model.at(p + "attn_norm").row(0);
    for (std::size_t t = 0; t < n; ++t) {
      rms_norm(x.row(t), attn_norm, h.row(t));
      project(p + "q_proj", h.row(t), q.row(t));
      project(p + "k_proj", h.row(t), k.row(t));
      project(p + "v_proj", h.row(t), v.row(t));
      rotate(q.row(t), cfg.n_heads, hd, t);
      rotate(k.row(t), cfg.n_heads, hd, t);
    }
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const std::size_t off = head * hd;
        double mx = -INFINITY;
        for (std::size_t u = 0; u <= t; ++u) {
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += static_cast<double>(q(t, off + i)) * k(u, off + i);
          scores[u] = s * inv_sqrt;
          mx = std::max(mx, scores[u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u <= t; ++u) {
          scores[u] = std::exp(scores[u] - mx);
          z += scores[u];
        }
        for (std::size_t i = 0; i < hd; ++i) {
          double acc = 0.0;
          for (std::size_t u = 0; u <= t; ++u) acc += scores[u] * v(u, off + i);
          att(t, off + i) = static_cast<float>(acc / z);
        }
      }
    }
    const auto mlp_norm = model.at(p + "mlp_norm").row(0);
    for (std::size_t t = 0; t < n; ++t) {
      project(p + "o_proj", att.row(t), tmp);
      for (std::size_t i = 0; i < d; ++i) x(t, i) += tmp[i];
      rms_norm(x.row(t), mlp_norm, h.row(t));
      project(p + "gate_proj", h.row(t), gate.row(t));
      project(p + "up_proj", h.row(t), up.row(t));
      for (std::size_t i = 0; i < cfg.d_ff; ++i) {
        const double g = gate(t, i);
        gate(t, i) = static_cast<float>(g / (1.0 + std::exp(-g)) * up(t, i));
      }
      project(p + "down_proj", gate.row(t), tmp);
      for (std::size_t i = 0; i < d; ++i) x(t, i) += tmp[i];
    }
  }

  Matrix logits(n, cfg.vocab_size);
  const auto final_norm = model.at("final_norm").row(0);
  const Matrix& head = model.at("lm_head");
  for (std::size_t t = 0; t < n; ++t) {
    rms_norm(x.row(t), final_norm, h.row(t));
    linear(head, nullptr, h.row(t), logits.row(t));
  }
  return logits;
}

PerplexityResult evaluate_perplexity(const Model& model, std::span<const TokenId> tokens, std::size_t context_length) {
  if (context_length == 0) throw Error(ErrorKind::ConfigError, "context length must be >= 1");
  PerplexityResult r;
  for (std::size_t start = 0; start < tokens.size(); start += context_length) {
    const auto window = tokens.subspan(start, std::min(context_length, tokens.size() - start));
    if (window.size() < 2) continue;
    const Matrix logits = forward(model, window);
    for (std::size_t t = 0; t + 1 < window.size(); ++t) {
      const auto row = logits.row(t);
      double mx = -INFINITY;
      for (float v : row) mx = std::max(mx, static_cast<double>(v));
      double z = 0.0;
      for (float v : row) z += std::exp(static_cast<double>(v) - mx);
      r.nll_sum += mx + std::log(z) - static_cast<double>(row[window[t + 1]]);
      ++r.predicted;
    }
  }
  if (r.predicted == 0) throw Error(ErrorKind::EmptyStream, "no next-token predictions in stream");
  r.ppl = std::exp(r.nll_sum / static_cast<double>(r.predicted));
  return r;
}

double perplexity(const Model& model, std::span<const TokenId> tokens, std::size_t context_length) {
  return evaluate_perplexity(model, tokens, context_length).ppl;
}

CaptureBuffer capture_calibration(const Model& model, const CalibrationSet& calib, const std::vector<std::string>& names,
                                  std::size_t cap, std::size_t batch_size) {
  CaptureBuffer capture(std::set<std::string>(names.begin(), names.end()), cap);
  const std::size_t ctx = model.config.context_length;
  batch_size = std::max<std::size_t>(batch_size, 1);
  for (std::size_t b = 0; b < calib.examples.size(); b += batch_size) {
    const std::size_t end = std::min(b + batch_size, calib.examples.size());
    for (std::size_t e = b; e < end; ++e) {
      const std::span<const TokenId> ex = calib.examples[e];
      for (std::size_t s = 0; s < ex.size(); s += ctx) forward(model, ex.subspan(s, std::min(ctx, ex.size() - s)), &capture);
    }
  }
  return capture;
}

QuantizedModel quantize_model(const Model& model, Method method, const CalibrationSet& calib, const QuantSpec& spec) {
  spec.validate();
  model.validate();
  QuantizedModel qm;
  qm.config = model.config;
  qm.method = method;
  for (const auto& [name, w] : model.weights)
    if (!is_projection(name)) qm.dense.emplace(name, w);

  const auto names = projection_names(model.config);
  if (!calib.examples.empty() && calib.tokenizer != "byte_level") {
    throw Error(ErrorKind::VocabMismatch, "calibration tokenizer '" + calib.tokenizer + "' does not match the model");
  }
  for (const auto& ex : calib.examples)
    for (TokenId id : ex)
      if (id >= model.config.vocab_size) {
        throw Error(ErrorKind::VocabMismatch, "calibration token " + std::to_string(id) + " outside model vocab");
      }

  CaptureBuffer capture = capture_calibration(model, calib, names, spec.capture_cap, spec.batch_size);
  const bool have_data = !calib.examples.empty();
  if (!have_data && method != Method::rtn) {
    throw Error(ErrorKind::DegenerateCalibration, std::string(to_string(method)) + " needs a non-empty calibration set");
  }

  for (const auto& name : names) {
    const Matrix& w = model.at(name);
    MatrixD h;
    Matrix x;
    if (have_data) {
      x = capture.matrix(name);
      HessianAccumulator acc(w.cols(), spec.damping);
      acc.accumulate(x);
      h = finalize_hessian_f64(acc);
    }
    QuantizedTensor q;
    switch (method) {
      case Method::rtn:
        q = rtn_quantize(w, spec);
        if (have_data) qm.proxy_error[name] = proxy_error(w, dequantize(q), h);
        break;
      case Method::gptq: {
        GptqResult r = gptq_quantize(w, h, spec);
        qm.proxy_error[name] = r.proxy_error;
        q = std::move(r.quantized);
        break;
      }
      case Method::awq: {
        ChannelStats stats(w.cols());
        stats.collect(x);
        q = awq_quantize(w, select_scales(stats, w, spec), spec);
        qm.proxy_error[name] = proxy_error(w, effective_weight(q), h);
        break;
      }
    }
    qm.quantized.emplace(name, std::move(q));
  }
  return qm;
}

Model dequantized_model(const QuantizedModel& qm) {
  Model m;
  m.config = qm.config;
  m.weights = qm.dense;
  for (const auto& [name, q] : qm.quantized) {
    m.weights[name] = dequantize(q);
    if (q.channel_scales()) m.input_scales[name] = *q.channel_scales();
  }
  m.validate();
  return m;
}

NamedTensorStore effective_store(const QuantizedModel& qm) {
  NamedTensorStore s = qm.dense;
  for (const auto& [name, q] : qm.quantized) s[name] = effective_weight(q);
  return s;
}

}  // namespace qlab
