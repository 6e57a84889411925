#include "qlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qlab/error.hpp"

namespace qlab {

using nlohmann::json;

void DiagnosticsReport::validate() const {
  for (const char* field : kRequiredManifestFields) {
    auto it = manifest.find(field);
    if (it == manifest.end() || it->second.empty()) {
      throw Error(ErrorKind::FormatError, std::string("report manifest field '") + field + "' is missing or empty");
    }
  }
  auto finite = [](double v) { return std::isfinite(v); };
  for (const auto& [name, value] : metrics) {
    bool ok = true;
    if (const auto* s = std::get_if<double>(&value)) ok = finite(*s);
    if (const auto* v = std::get_if<std::vector<double>>(&value)) ok = std::all_of(v->begin(), v->end(), finite);
    if (const auto* m = std::get_if<std::vector<std::vector<double>>>(&value)) {
      for (const auto& row : *m) ok = ok && std::all_of(row.begin(), row.end(), finite);
    }
    if (!ok) throw Error(ErrorKind::NonFiniteInput, "metric '" + name + "' has non-finite values");
  }
}

std::string format_number(double v) {
  if (v == 0.0) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

void emit(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += json(it.key()).dump();
        out += ':';
        emit(it.value(), out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        emit(j[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float:
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
      out += format_number(j.get<double>());
      break;
    default:
      out += j.dump();
  }
}

json metric_json(const MetricValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

MetricValue metric_from_json(const std::string& name, const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    if (!j.empty() && j[0].is_array()) return j.get<std::vector<std::vector<double>>>();
    return j.get<std::vector<double>>();
  }
  throw Error(ErrorKind::FormatError, "metric '" + name + "' has an unsupported type");
}

}  // namespace

std::string report_to_json(const DiagnosticsReport& report) {
  report.validate();
  json j;
  j["schema_version"] = report.schema_version;
  j["manifest"] = report.manifest;
  json metrics = json::object();
  for (const auto& [name, v] : report.metrics) metrics[name] = metric_json(v);
  j["metrics"] = metrics;
  std::string out;
  emit(j, out);
  out += '\n';
  return out;
}

DiagnosticsReport report_from_json(std::string_view text) {
  DiagnosticsReport r;
  try {
    const json j = json::parse(text);
    r.schema_version = j.at("schema_version").get<int>();
    r.manifest = j.at("manifest").get<std::map<std::string, std::string>>();
    for (auto it = j.at("metrics").begin(); it != j.at("metrics").end(); ++it) {
      r.metrics.emplace(it.key(), metric_from_json(it.key(), it.value()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("report: ") + e.what());
  }
  r.validate();
  return r;
}

void report_emit(const DiagnosticsReport& report, const std::filesystem::path& path) {
  const std::string text = report_to_json(report);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

LayerMse layer_mse(const NamedTensorStore& original, const NamedTensorStore& quantized) {
  if (original.size() != quantized.size()) throw Error(ErrorKind::ShapeMismatch, "stores hold different tensor sets");
  LayerMse out;
  double worst = -1.0;
  std::map<std::size_t, double> layer_worst;
  for (const auto& [name, a] : original) {
    auto it = quantized.find(name);
    if (it == quantized.end()) throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " missing from quantized store");
    const Matrix& b = it->second;
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " shape differs");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
      s += d * d;
    }
    const double mse = a.size() ? s / static_cast<double>(a.size()) : 0.0;
    out.per_tensor[name] = mse;
    if (mse > worst) {
      worst = mse;
      out.most_error_prone = name;
    }
    if (name.rfind("layer", 0) == 0) {
      const std::size_t layer = std::stoul(name.substr(5, name.find('.') - 5));
      auto lw = layer_worst.find(layer);
      if (lw == layer_worst.end() || mse > lw->second) {
        layer_worst[layer] = mse;
        out.per_layer_worst[layer] = name;
      }
    }
  }
  return out;
}

std::vector<double> max_channel_activations(const Matrix& columns) {
  std::vector<double> out(columns.rows(), 0.0);
  for (std::size_t r = 0; r < columns.rows(); ++r)
    for (float v : columns.row(r)) out[r] = std::max(out[r], std::abs(static_cast<double>(v)));
  return out;
}

std::vector<double> max_channel_activations(const CaptureBuffer& buffer, const std::string& projection) {
  if (!buffer.has(projection)) throw Error(ErrorKind::UnknownProjection, "projection " + projection + " was not captured");
  return max_channel_activations(buffer.matrix(projection));
}

ActivationProfile activation_profile(std::span<const float> activations, const ActivationProfile* reference) {
  if (activations.empty()) throw Error(ErrorKind::EmptyInput, "activation profile of an empty buffer");
  std::vector<double> mags(activations.size());
  for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(static_cast<double>(activations[i]));
  static constexpr double kQs[] = {0.5, 0.9, 0.99, 0.999, 1.0};
  const auto q = quantiles(mags, kQs);
  ActivationProfile p{q[0], q[1], q[2], q[3], q[4], 0.0, std::nullopt};
  const double threshold = reference ? reference->p99 : p.p99;
  const auto above = std::count_if(mags.begin(), mags.end(), [&](double v) { return v > threshold; });
  p.tail_mass = static_cast<double>(above) / static_cast<double>(mags.size());
  if (reference) {
    if (!(reference->max > 0.0)) throw Error(ErrorKind::DegenerateInput, "reference activations are all zero");
    p.range_coverage = p.max / reference->max;
  }
  return p;
}

double hessian_distance(const MatrixD& a, const MatrixD& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::DimMismatch, "Hessian inverses differ in shape");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    diff += d * d;
  }
  const double norm = 0.5 * (frobenius_norm(a) + frobenius_norm(b));
  if (norm == 0.0) return 0.0;
  return std::sqrt(diff) / norm;
}

std::vector<std::vector<double>> pairwise_hessian_distances(const std::vector<MatrixD>& inverses) {
  const std::size_t k = inverses.size();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) out[i][j] = out[j][i] = hessian_distance(inverses[i], inverses[j]);
  return out;
}

VocabStats vocab_stats(const CalibrationSet& set) {
  if (set.examples.empty()) throw Error(ErrorKind::EmptyInput, "vocabulary statistics of an empty set");
  std::set<TokenId> types;
  for (const auto& e : set.examples) types.insert(e.begin(), e.end());
  return {types.size(), static_cast<double>(set.total_tokens()) / static_cast<double>(set.examples.size())};
}

namespace {

std::set<TokenId> type_set(const CalibrationSet& s) {
  std::set<TokenId> t;
  for (const auto& e : s.examples) t.insert(e.begin(), e.end());
  return t;
}

std::set<TokenId> intersect(const std::set<TokenId>& a, const std::set<TokenId>& b) {
  std::set<TokenId> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.begin()));
  return out;
}

}  // namespace

VocabOverlap vocab_overlap(const std::vector<const CalibrationSet*>& sets) {
  if (sets.size() != 2 && sets.size() != 3) throw Error(ErrorKind::DimMismatch, "vocab overlap takes 2 or 3 sets");
  for (const auto* s : sets) {
    if (s->tokenizer != sets[0]->tokenizer) {
      throw Error(ErrorKind::TokenizerMismatch, "'" + s->tokenizer + "' vs '" + sets[0]->tokenizer + "'");
    }
  }
  const auto a = type_set(*sets[0]);
  const auto b = type_set(*sets[1]);
  const auto ab = intersect(a, b);
  VocabOverlap out;
  out.ab = ab.size();
  if (sets.size() == 3) {
    const auto c = type_set(*sets[2]);
    out.ac = intersect(a, c).size();
    out.bc = intersect(b, c).size();
    out.abc = intersect(ab, c).size();
  }
  return out;
}

double delta_ppl(double baseline_ppl, double other_ppl) {
  if (!(baseline_ppl > 0.0) || !(other_ppl > 0.0)) {
    throw Error(ErrorKind::NonPositivePpl, "perplexities must be > 0");
  }
  return baseline_ppl - other_ppl;
}

namespace {

std::string csv_header(const std::vector<std::string>& langs) {
  std::string out = "method,calibration";
  for (const auto& l : langs) out += "," + l;
  return out + ",Avg\n";
}

double avg_of(const PplRow& row, const std::vector<std::string>& langs) {
  double s = 0.0;
  for (const auto& l : langs) s += row.ppl.at(l);
  return s / static_cast<double>(langs.size());
}

}  // namespace

std::string delta_ppl_csv(const std::vector<PplRow>& rows, const std::vector<std::string>& langs,
                          const std::string& baseline) {
  if (langs.empty()) throw Error(ErrorKind::ConfigError, "delta table needs at least one language");
  std::string out = csv_header(langs);
  for (const auto& row : rows) {
    auto base = std::find_if(rows.begin(), rows.end(),
                             [&](const PplRow& r) { return r.method == row.method && r.calibration == baseline; });
    if (base == rows.end()) {
      throw Error(ErrorKind::ConfigError, "no baseline '" + baseline + "' row for method " + row.method);
    }
    out += row.method + "," + row.calibration;
    for (const auto& l : langs) out += fmt::format(",{:.4f}", delta_ppl(base->ppl.at(l), row.ppl.at(l)));
    out += fmt::format(",{:.4f}\n", delta_ppl(avg_of(*base, langs), avg_of(row, langs)));
  }
  return out;
}

std::string ppl_csv(const std::vector<PplRow>& rows, const std::vector<std::string>& langs) {
  std::string out = csv_header(langs);
  for (const auto& row : rows) {
    out += row.method + "," + row.calibration;
    for (const auto& l : langs) out += fmt::format(",{:.4f}", row.ppl.at(l));
    out += fmt::format(",{:.4f}\n", avg_of(row, langs));
  }
  return out;
}

}  // namespace qlab
