#include "qlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qlab/diagnostics.hpp"
#include "qlab/error.hpp"

namespace qlab {

using nlohmann::json;
namespace fs = std::filesystem;

std::string spec_string(const QuantSpec& s) {
  std::string out = fmt::format("w{}g{}", s.bits, s.group_size);
  out += fmt::format(" damp={:g} cross_group={} batch={} cap={}", s.damping, s.cross_group_propagation ? 1 : 0,
                     s.batch_size, s.capture_cap);
  out += fmt::format(" salience={:g} scale_mode={} max_scale={:g}", s.salience_fraction, to_string(s.scale_mode),
                     s.max_scale);
  return out;
}

std::string error_json(ErrorKind kind, const std::string& message, const std::string& stage) {
  json e;
  e["kind"] = std::string(to_string(kind));
  e["exit_code"] = exit_code_for(kind);
  e["message"] = message;
  if (!stage.empty()) e["stage"] = stage;
  return json{{"error", e}}.dump();
}

// ---- config ---------------------------------------------------------------

namespace {

[[noreturn]] void config_fail(const std::string& pointer, const std::string& what) {
  throw Error(ErrorKind::ConfigError, (pointer.empty() ? std::string("/") : pointer) + ": " + what);
}

void check_keys(const json& j, const std::string& pointer, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) config_fail(pointer, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; })) {
      config_fail(pointer + "/" + it.key(), "unknown field");
    }
  }
}

std::size_t get_size(const json& j, const char* key, const std::string& pointer, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) config_fail(pointer + "/" + key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t get_u64(const json& j, const char* key, const std::string& pointer, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    config_fail(pointer + "/" + key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

double get_double(const json& j, const char* key, const std::string& pointer, double fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) config_fail(pointer + "/" + key, "expected a number");
  return v.get<double>();
}

std::string get_string(const json& j, const char* key, const std::string& pointer, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) config_fail(pointer + "/" + key, "expected a string");
  return v.get<std::string>();
}

std::vector<std::string> get_strings(const json& j, const char* key, const std::string& pointer) {
  if (!j.contains(key)) return {};
  const json& v = j.at(key);
  if (!v.is_array()) config_fail(pointer + "/" + key, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string()) config_fail(fmt::format("{}/{}/{}", pointer, key, i), "expected a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

void require(const json& j, const char* key, const std::string& pointer) {
  if (!j.contains(key)) config_fail(pointer + "/" + key, "required field is missing");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

ModelConfig model_config_from_json(const json& j, const std::string& pointer) {
  check_keys(j, pointer, {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "context_length"});
  ModelConfig c;
  c.vocab_size = get_size(j, "vocab_size", pointer, c.vocab_size);
  c.d_model = get_size(j, "d_model", pointer, c.d_model);
  c.n_layers = get_size(j, "n_layers", pointer, c.n_layers);
  c.n_heads = get_size(j, "n_heads", pointer, c.n_heads);
  c.d_ff = get_size(j, "d_ff", pointer, c.d_ff);
  c.context_length = get_size(j, "context_length", pointer, c.context_length);
  try {
    c.validate();
  } catch (const Error& e) {
    config_fail(pointer, e.message());
  }
  return c;
}

InitOptions init_options_from_json(const json& j, const std::string& pointer) {
  check_keys(j, pointer, {"seed", "outlier_channels", "outlier_scale", "high_byte_scale"});
  InitOptions o;
  o.seed = get_u64(j, "seed", pointer, o.seed);
  o.outlier_channels = get_size(j, "outlier_channels", pointer, o.outlier_channels);
  o.outlier_scale = get_double(j, "outlier_scale", pointer, o.outlier_scale);
  o.high_byte_scale = get_double(j, "high_byte_scale", pointer, o.high_byte_scale);
  if (!(o.outlier_scale > 0.0)) config_fail(pointer + "/outlier_scale", "must be > 0");
  if (!(o.high_byte_scale > 0.0)) config_fail(pointer + "/high_byte_scale", "must be > 0");
  return o;
}

QuantSpec quant_spec_from_json(const json& j, const std::string& pointer) {
  check_keys(j, pointer,
             {"bits", "group_size", "damping", "cross_group", "batch_size", "salience_fraction", "scale_mode",
              "max_scale", "weight_max_factor", "capture_cap"});
  QuantSpec s;
  s.bits = static_cast<int>(get_size(j, "bits", pointer, static_cast<std::size_t>(s.bits)));
  s.group_size = get_size(j, "group_size", pointer, s.group_size);
  s.damping = get_double(j, "damping", pointer, s.damping);
  if (j.contains("cross_group")) {
    if (!j.at("cross_group").is_boolean()) config_fail(pointer + "/cross_group", "expected a boolean");
    s.cross_group_propagation = j.at("cross_group").get<bool>();
  }
  s.batch_size = get_size(j, "batch_size", pointer, s.batch_size);
  s.salience_fraction = get_double(j, "salience_fraction", pointer, s.salience_fraction);
  if (j.contains("scale_mode")) {
    try {
      s.scale_mode = parse_scale_mode(get_string(j, "scale_mode", pointer, ""));
    } catch (const Error& e) {
      config_fail(pointer + "/scale_mode", e.message());
    }
  }
  s.max_scale = get_double(j, "max_scale", pointer, s.max_scale);
  s.weight_max_factor = get_double(j, "weight_max_factor", pointer, s.weight_max_factor);
  s.capture_cap = get_size(j, "capture_cap", pointer, s.capture_cap);
  try {
    s.validate();
  } catch (const Error& e) {
    config_fail(pointer, e.message());
  }
  return s;
}

PipelineConfig parse_pipeline_config(const json& j, const fs::path& base_dir) {
  check_keys(j, "",
             {"model", "corpus_dir", "extra", "eval_dir", "eval_langs", "eval_tokens", "calibrations", "methods",
              "baseline", "multi10_langs", "n", "t", "seed", "mix_fraction", "tokenizer", "context_length", "quant",
              "out_dir"});
  for (const char* key : {"model", "corpus_dir", "eval_dir", "calibrations", "methods", "n", "t"}) require(j, key, "");

  PipelineConfig c;
  c.seed = get_u64(j, "seed", "", 0);
  c.n = get_size(j, "n", "", 0);
  c.t = get_size(j, "t", "", 0);
  if (c.t == 0) config_fail("/t", "must be >= 1");
  c.mix_fraction = get_double(j, "mix_fraction", "", kDefaultMixFraction);
  if (!(c.mix_fraction >= 0.0 && c.mix_fraction <= 1.0)) config_fail("/mix_fraction", "must lie in [0, 1]");
  c.tokenizer = get_string(j, "tokenizer", "", "byte_level");
  try {
    (void)Tokenizer::from_name(c.tokenizer);
  } catch (const Error& e) {
    config_fail("/tokenizer", e.message());
  }
  c.eval_tokens = get_size(j, "eval_tokens", "", 0);
  c.context_length = get_size(j, "context_length", "", 0);
  c.baseline = get_string(j, "baseline", "", c.baseline);
  c.multi10_langs = get_strings(j, "multi10_langs", "");
  c.eval_langs = get_strings(j, "eval_langs", "");
  c.out_dir = resolve(base_dir, get_string(j, "out_dir", "", "runs"));
  if (j.contains("quant")) c.quant = quant_spec_from_json(j.at("quant"), "/quant");

  const json& m = j.at("model");
  check_keys(m, "/model", {"path", "config", "init"});
  if (m.contains("path")) {
    if (m.contains("config") || m.contains("init")) config_fail("/model", "give either path or config/init, not both");
    c.model_path = resolve(base_dir, get_string(m, "path", "/model", ""));
    if (!fs::is_regular_file(*c.model_path)) config_fail("/model/path", "file not found: " + c.model_path->string());
    try {
      c.model_config = load_qlb1(*c.model_path).config;
    } catch (const Error& e) {
      config_fail("/model/path", e.message());
    }
  } else {
    c.model_config = m.contains("config") ? model_config_from_json(m.at("config"), "/model/config") : ModelConfig{};
    c.init = m.contains("init") ? init_options_from_json(m.at("init"), "/model/init") : InitOptions{};
    if (!m.contains("init") || !m.at("init").contains("seed")) c.init.seed = c.seed;
  }
  const std::size_t ctx = c.context_length ? c.context_length : c.model_config.context_length;
  if (ctx < 2) config_fail("/context_length", "must be >= 2");
  if (ctx > c.model_config.context_length) config_fail("/context_length", "exceeds the model context");
  if (Tokenizer::from_name(c.tokenizer).vocab_size() > c.model_config.vocab_size) {
    config_fail("/tokenizer", "tokenizer vocabulary exceeds the model vocabulary");
  }

  const auto methods = get_strings(j, "methods", "");
  if (methods.empty()) config_fail("/methods", "at least one method is required");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    try {
      c.methods.push_back(parse_method(methods[i]));
    } catch (const Error& e) {
      config_fail(fmt::format("/methods/{}", i), e.message());
    }
    if (std::count(c.methods.begin(), c.methods.end(), c.methods.back()) > 1) {
      config_fail(fmt::format("/methods/{}", i), "duplicate method");
    }
  }

  c.calibrations = get_strings(j, "calibrations", "");
  if (c.calibrations.empty()) config_fail("/calibrations", "at least one calibration strategy is required");
  std::vector<Strategy> strategies;
  for (std::size_t i = 0; i < c.calibrations.size(); ++i) {
    try {
      strategies.push_back(Strategy::parse(c.calibrations[i]));
    } catch (const Error& e) {
      config_fail(fmt::format("/calibrations/{}", i), e.message());
    }
    // Canonical spelling keeps cell names stable.
    c.calibrations[i] = strategies.back().str();
    if (std::count(c.calibrations.begin(), c.calibrations.begin() + static_cast<long>(i), c.calibrations[i])) {
      config_fail(fmt::format("/calibrations/{}", i), "duplicate strategy");
    }
  }
  try {
    c.baseline = Strategy::parse(c.baseline).str();
  } catch (const Error& e) {
    config_fail("/baseline", e.message());
  }
  if (std::find(c.calibrations.begin(), c.calibrations.end(), c.baseline) == c.calibrations.end()) {
    config_fail("/baseline", "baseline '" + c.baseline + "' is not among the calibrations");
  }

  // Data availability.
  c.corpus_dir = resolve(base_dir, get_string(j, "corpus_dir", "", ""));
  if (!fs::is_directory(c.corpus_dir)) config_fail("/corpus_dir", "directory not found: " + c.corpus_dir.string());
  c.eval_dir = resolve(base_dir, get_string(j, "eval_dir", "", ""));
  if (!fs::is_directory(c.eval_dir)) config_fail("/eval_dir", "directory not found: " + c.eval_dir.string());
  if (j.contains("extra")) {
    c.extra_path = resolve(base_dir, get_string(j, "extra", "", ""));
    if (!fs::is_regular_file(*c.extra_path)) config_fail("/extra", "file not found: " + c.extra_path->string());
  }

  Corpus corpus;
  Corpus eval;
  try {
    corpus = group_by_lang(read_corpus_dir(c.corpus_dir));
  } catch (const Error& e) {
    config_fail("/corpus_dir", e.message());
  }
  try {
    eval = group_by_lang(read_corpus_dir(c.eval_dir));
  } catch (const Error& e) {
    config_fail("/eval_dir", e.message());
  }
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    const Strategy* s = &strategies[i];
    Strategy base;
    if (s->augmented()) {
      if (!c.extra_path) config_fail(fmt::format("/calibrations/{}", i), "needs an 'extra' document file");
      base = Strategy::parse(s->base);
      s = &base;
    }
    if (s->kind == StrategyKind::single && !corpus.count(s->lang)) {
      config_fail(fmt::format("/calibrations/{}", i), "no corpus documents for language '" + s->lang + "'");
    }
    if (s->kind == StrategyKind::multi10) {
      std::vector<std::string> langs = c.multi10_langs;
      if (langs.empty()) langs.assign(std::begin(kMulti10Order), std::end(kMulti10Order));
      for (const auto& l : langs) {
        if (!corpus.count(l)) config_fail(fmt::format("/calibrations/{}", i), "multi10 language '" + l + "' has no documents");
      }
    }
  }
  if (c.eval_langs.empty()) {
    for (const auto& [lang, docs] : eval) c.eval_langs.push_back(lang);
  }
  if (c.eval_langs.empty()) config_fail("/eval_dir", "no evaluation documents");
  for (std::size_t i = 0; i < c.eval_langs.size(); ++i) {
    if (!eval.count(c.eval_langs[i])) {
      config_fail(fmt::format("/eval_langs/{}", i), "no evaluation documents for '" + c.eval_langs[i] + "'");
    }
  }

  json canon = j;
  canon.erase("out_dir");
  c.canonical = canon.dump();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("/: invalid JSON: ") + e.what());
  }
  return parse_pipeline_config(j, path.parent_path());
}

std::string config_hash(const PipelineConfig& cfg) { return sha256_hex(std::string_view(cfg.canonical)); }

std::string cell_dir_name(Method method, const std::string& calibration) {
  std::string name = std::string(to_string(method)) + "__" + calibration;
  std::replace(name.begin(), name.end(), ':', '-');
  return name;
}

// ---- run ------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::string calib_file_name(const std::string& strategy) {
  std::string name = strategy;
  std::replace(name.begin(), name.end(), ':', '-');
  return name + ".jsonl";
}

struct CellData {
  CellOutcome outcome;
  std::map<std::string, double> ppl;
  std::map<std::string, double> proxy_error;
  LayerMse mse;
  std::string qlq1_hash;
};

struct Shared {
  const PipelineConfig* cfg;
  const Model* model;
  std::string model_hash;
  std::string cfg_hash;
  std::size_t context;
  std::map<std::string, std::vector<TokenId>> eval_streams;
  std::map<std::string, CalibrationSet> calibs;
  std::map<std::string, std::string> calib_errors;  // strategy -> error json
  std::map<std::string, ErrorKind> calib_error_kinds;
  fs::path run_dir;
};

void run_cell(const Shared& sh, CellData& cell) {
  const auto& cfg = *sh.cfg;
  const fs::path dir = sh.run_dir / "cells" / cell_dir_name(cell.outcome.method, cell.outcome.calibration);
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");
  try {
    auto cerr_it = sh.calib_error_kinds.find(cell.outcome.calibration);
    if (cerr_it != sh.calib_error_kinds.end()) {
      throw Error(cerr_it->second, "calibration build failed: " + sh.calib_errors.at(cell.outcome.calibration));
    }
    const CalibrationSet& calib = sh.calibs.at(cell.outcome.calibration);
    const QuantizedModel qm = quantize_model(*sh.model, cell.outcome.method, calib, cfg.quant);
    save_qlq1(qm, dir / "model.qlq1");
    cell.qlq1_hash = sha256_file(dir / "model.qlq1");
    cell.proxy_error = qm.proxy_error;
    cell.mse = layer_mse(sh.model->weights, effective_store(qm));
    const Model deq = dequantized_model(qm);
    for (const auto& [lang, stream] : sh.eval_streams) cell.ppl[lang] = perplexity(deq, stream, sh.context);
    cell.outcome.ok = true;
  } catch (const Error& e) {
    cell.outcome.error = e.kind();
    cell.outcome.message = e.message();
  } catch (const std::exception& e) {
    cell.outcome.error = ErrorKind::IoError;
    cell.outcome.message = e.what();
  }
  if (!cell.outcome.ok) {
    write_text(dir / "FAILED", error_json(*cell.outcome.error, cell.outcome.message, "cell") + "\n");
  }
}

double avg(const std::map<std::string, double>& m) {
  double s = 0.0;
  for (const auto& [k, v] : m) s += v;
  return m.empty() ? 0.0 : s / static_cast<double>(m.size());
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts) {
  PipelineResult result;
  const std::string hash = config_hash(cfg);
  const fs::path out_dir = opts.out_dir.value_or(cfg.out_dir);
  result.run_dir = out_dir / hash.substr(0, 16);
  fs::create_directories(result.run_dir / "cells");
  fs::create_directories(result.run_dir / "calib");
  fs::remove(result.run_dir / "FAILED");

  Shared sh;
  sh.cfg = &cfg;
  sh.cfg_hash = hash;
  sh.run_dir = result.run_dir;
  sh.context = cfg.context_length ? cfg.context_length : cfg.model_config.context_length;

  auto stage_fail = [&](const Error& e, const std::string& stage) {
    write_text(result.run_dir / "FAILED", error_json(e.kind(), e.message(), stage) + "\n");
    result.exit_code = exit_code_for(e.kind());
    return result;
  };

  {
    // run_info carries the non-deterministic fields and stays out of the manifest.
    json info;
    info["command_line"] = opts.command_line;
    info["timestamp"] = static_cast<long long>(std::time(nullptr));
    info["tool_version"] = kToolVersion;
    info["config_hash"] = hash;
    write_text(result.run_dir / "run_info.json", info.dump(2) + "\n");
  }
  write_text(result.run_dir / "config.json", cfg.canonical + "\n");

  Model model;
  std::vector<Document> extra;
  Corpus corpus;
  const Tokenizer tok = Tokenizer::from_name(cfg.tokenizer);
  try {
    model = cfg.model_path ? load_qlb1(*cfg.model_path) : init_random(cfg.model_config, cfg.init);
    save_qlb1(model, result.run_dir / "model.qlb1");
    sh.model_hash = sha256_file(result.run_dir / "model.qlb1");
    corpus = group_by_lang(read_corpus_dir(cfg.corpus_dir));
    if (cfg.extra_path) extra = read_documents(*cfg.extra_path);
    const Corpus eval = group_by_lang(read_corpus_dir(cfg.eval_dir));
    for (const auto& lang : cfg.eval_langs) {
      auto stream = tokenize_documents(eval.at(lang), tok);
      if (cfg.eval_tokens && stream.size() > cfg.eval_tokens) stream.resize(cfg.eval_tokens);
      sh.eval_streams[lang] = std::move(stream);
    }
  } catch (const Error& e) {
    return stage_fail(e, "load");
  }
  sh.model = &model;

  for (const auto& name : cfg.calibrations) {
    try {
      BuildRequest req{Strategy::parse(name), cfg.n, cfg.t, cfg.seed, cfg.mix_fraction, cfg.multi10_langs};
      CalibrationSet set = build_calibration(req, corpus, extra, tok);
      write_calibration(set, result.run_dir / "calib" / calib_file_name(name));
      sh.calibs.emplace(name, std::move(set));
    } catch (const Error& e) {
      sh.calib_errors[name] = e.message();
      sh.calib_error_kinds[name] = e.kind();
    }
  }

  std::vector<CellData> cells;
  for (Method m : cfg.methods)
    for (const auto& c : cfg.calibrations) {
      CellData d;
      d.outcome.method = m;
      d.outcome.calibration = c;
      cells.push_back(std::move(d));
    }

  {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(sh, cells[i]);
    };
    const std::size_t jobs = std::clamp<std::size_t>(opts.jobs, 1, cells.size());
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < jobs; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }

  // Aggregate pass, fixed cell order.
  std::vector<PplRow> rows;
  for (const auto& c : cells) {
    result.cells.push_back(c.outcome);
    if (c.outcome.ok) rows.push_back({std::string(to_string(c.outcome.method)), c.outcome.calibration, c.ppl});
  }
  std::vector<PplRow> delta_rows;
  for (const auto& r : rows) {
    const bool has_base = std::any_of(rows.begin(), rows.end(), [&](const PplRow& b) {
      return b.method == r.method && b.calibration == cfg.baseline;
    });
    if (has_base) delta_rows.push_back(r);
  }

  json manifest;
  manifest["config_hash"] = hash;
  manifest["tool_version"] = kToolVersion;
  manifest["seed"] = cfg.seed;
  manifest["baseline"] = cfg.baseline;
  manifest["model.qlb1"] = sh.model_hash;

  for (const auto& c : cells) {
    if (!c.outcome.ok) continue;
    const std::string method(to_string(c.outcome.method));
    const fs::path dir = result.run_dir / "cells" / cell_dir_name(c.outcome.method, c.outcome.calibration);
    const auto base = std::find_if(rows.begin(), rows.end(), [&](const PplRow& b) {
      return b.method == method && b.calibration == cfg.baseline;
    });

    DiagnosticsReport rep;
    rep.manifest = {{"model_hash", sh.model_hash},
                    {"method", method},
                    {"calib_strategy", c.outcome.calibration},
                    {"seed", std::to_string(cfg.seed)},
                    {"spec", spec_string(cfg.quant)},
                    {"config_hash", hash},
                    {"qlq1_hash", c.qlq1_hash},
                    {"tokenizer", cfg.tokenizer},
                    {"tool_version", kToolVersion},
                    {"unquantized", "embed lm_head norms"}};
    for (const auto& [lang, v] : c.ppl) rep.metrics["ppl." + lang] = v;
    rep.metrics["ppl.avg"] = avg(c.ppl);
    if (base != rows.end()) {
      for (const auto& [lang, v] : c.ppl) rep.metrics["delta_ppl." + lang] = delta_ppl(base->ppl.at(lang), v);
      rep.metrics["delta_ppl.avg"] = delta_ppl(avg(base->ppl), avg(c.ppl));
    }
    double total_proxy = 0.0;
    for (const auto& [name, v] : c.proxy_error) {
      rep.metrics["proxy_error." + name] = v;
      total_proxy += v;
    }
    if (!c.proxy_error.empty()) rep.metrics["proxy_error.total"] = total_proxy;
    for (const auto& [name, v] : c.mse.per_tensor)
      if (is_projection(name)) rep.metrics["layer_mse." + name] = v;
    rep.metrics["most_error_prone"] = c.mse.most_error_prone;
    for (const auto& [layer, name] : c.mse.per_layer_worst) rep.metrics[fmt::format("most_error_prone.layer{}", layer)] = name;
    const VocabStats vs = vocab_stats(sh.calibs.at(c.outcome.calibration));
    rep.metrics["vocab.unique_types"] = static_cast<double>(vs.unique_types);
    rep.metrics["vocab.mean_tokens_per_example"] = vs.mean_tokens_per_example;
    report_emit(rep, dir / "report.json");

    json cm;
    cm["config_hash"] = hash;
    cm["seed"] = cfg.seed;
    cm["tool_version"] = kToolVersion;
    cm["model.qlb1"] = sh.model_hash;
    cm["model.qlq1"] = c.qlq1_hash;
    cm["calibration"] = sha256_file(result.run_dir / "calib" / calib_file_name(c.outcome.calibration));
    write_text(dir / "manifest.json", cm.dump(2) + "\n");
  }

  write_text(result.run_dir / "ppl.csv", ppl_csv(rows, cfg.eval_langs));
  write_text(result.run_dir / "delta_ppl.csv", delta_ppl_csv(delta_rows, cfg.eval_langs, cfg.baseline));

  // Hash every deterministic artifact.
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(result.run_dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), result.run_dir);
    if (rel == "run_info.json" || rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  json artifacts = json::object();
  for (const auto& rel : files) artifacts[rel.generic_string()] = sha256_file(result.run_dir / rel);
  manifest["artifacts"] = artifacts;
  write_text(result.run_dir / "manifest.json", manifest.dump(2) + "\n");

  json failed = json::array();
  for (const auto& c : cells) {
    if (c.outcome.ok) continue;
    failed.push_back({{"cell", cell_dir_name(c.outcome.method, c.outcome.calibration)},
                      {"kind", std::string(to_string(*c.outcome.error))},
                      {"message", c.outcome.message}});
    if (result.exit_code == 0) result.exit_code = exit_code_for(*c.outcome.error);
  }
  if (!failed.empty()) write_text(result.run_dir / "FAILED", json{{"failed_cells", failed}}.dump(2) + "\n");
  return result;
}

}  // namespace qlab
