// qlab: calibration builds, nanomodel quantization, diagnostics and the matrix pipeline.
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "qlab/awq.hpp"
#include "qlab/calibkit.hpp"
#include "qlab/diagnostics.hpp"
#include "qlab/error.hpp"
#include "qlab/gptq.hpp"
#include "qlab/nanomodel.hpp"
#include "qlab/pipeline.hpp"
#include "qlab/synthcorpus.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qlab;

namespace {

struct CalibArgs {
  std::string strategy;
  std::string lang;
  std::size_t n = 0;
  std::size_t t = 0;
  std::uint64_t seed = 0;
  std::string in;
  std::string out;
  double mix_fraction = kDefaultMixFraction;
  std::string extra;
  std::string tokenizer = "byte_level";
  std::vector<std::string> langs;
};

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t docs = 8;
  std::size_t words = 200;
  std::vector<std::string> langs;
  std::string out;
  std::string extra;
  std::size_t extra_docs = 4;
};

struct ModelArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::size_t outlier_channels = 0;
  double outlier_scale = 1.0;
  double high_byte_scale = 1.0;
  std::string model;
  std::string data;
  std::string lang;
  std::size_t context = 0;
  std::size_t max_tokens = 0;
  std::string method = "rtn";
  std::string calib;
  std::string out;
};

struct QuantArgs {
  int bits = 4;
  std::size_t group_size = 128;
  double damping = 0.01;
  bool cross_group = false;
  std::size_t batch_size = 2;
  double salience_fraction = 0.01;
  std::string scale_mode = "activation-ratio";
  double max_scale = 16.0;
  std::size_t capture_cap = 8192;

  QuantSpec spec(Method m) const {
    QuantSpec s;
    s.bits = bits;
    s.group_size = group_size;
    s.method = m;
    s.damping = damping;
    s.cross_group_propagation = cross_group;
    s.batch_size = batch_size;
    s.salience_fraction = salience_fraction;
    s.scale_mode = parse_scale_mode(scale_mode);
    s.max_scale = max_scale;
    s.capture_cap = capture_cap;
    s.validate();
    return s;
  }
};

struct DiagArgs {
  std::string model;
  std::string quantized;
  std::vector<std::string> calibs;
  std::string reference;
  std::string projection = "layer0.q_proj";
  std::string ppl_csv;
  std::string baseline = "single:en";
  std::string csv_out;
  std::string out;
};

struct PipelineArgs {
  std::string config;
  std::size_t jobs = 1;
  std::string out;
};

bool has_magic(const fs::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  std::string head(magic.size(), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  return in && head == magic;
}

// Dense view of either container.
Model load_any_model(const fs::path& path) {
  if (has_magic(path, "QLQ1")) return dequantized_model(load_qlq1(path));
  return load_qlb1(path);
}

std::vector<Document> load_docs(const fs::path& path) {
  if (fs::is_directory(path)) return read_corpus_dir(path);
  return read_documents(path);
}

void print_report(const DiagnosticsReport& rep, const std::string& out) {
  if (out.empty()) {
    std::cout << report_to_json(rep);
  } else {
    report_emit(rep, out);
    std::cout << out << "\n";
  }
}

DiagnosticsReport base_report(const std::string& model_path, const std::string& method, const std::string& strategy,
                              const std::string& seed, const std::string& spec) {
  DiagnosticsReport rep;
  rep.manifest["model_hash"] = model_path.empty() ? "none" : sha256_file(model_path);
  rep.manifest["method"] = method.empty() ? "none" : method;
  rep.manifest["calib_strategy"] = strategy.empty() ? "none" : strategy;
  rep.manifest["seed"] = seed.empty() ? "none" : seed;
  rep.manifest["spec"] = spec.empty() ? "none" : spec;
  rep.manifest["tool_version"] = kToolVersion;
  return rep;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

int cmd_calib_build(const CalibArgs& a) {
  std::string name = a.strategy;
  if (name == "single") {
    if (a.lang.empty()) throw Error(ErrorKind::ConfigError, "--lang is required for the single strategy");
    name += ":" + a.lang;
  }
  const Tokenizer tok = Tokenizer::from_name(a.tokenizer);
  BuildRequest req{Strategy::parse(name), a.n, a.t, a.seed, a.mix_fraction, a.langs};
  if (req.strategy.augmented() && a.extra.empty()) {
    throw Error(ErrorKind::ConfigError, "--extra is required for " + req.strategy.str());
  }
  const Corpus corpus = group_by_lang(read_corpus_dir(a.in));
  const std::vector<Document> extra = a.extra.empty() ? std::vector<Document>{} : read_documents(a.extra);
  const CalibrationSet set = build_calibration(req, corpus, extra, tok);
  write_calibration(set, a.out);
  std::cout << fmt::format("{} examples x {} tokens -> {}\n", set.examples.size(), set.t, a.out);
  return 0;
}

int cmd_calib_synth(const SynthArgs& a) {
  SynthCorpusOptions opts;
  opts.seed = a.seed;
  opts.docs_per_lang = a.docs;
  opts.words_per_doc = a.words;
  if (!a.langs.empty()) opts.langs = a.langs;
  write_corpus_dir(synthetic_corpus(opts), a.out);
  if (!a.extra.empty()) write_documents(synthetic_extra(a.seed, a.extra_docs), a.extra);
  std::cout << a.out << "\n";
  return 0;
}

int cmd_init_random(const ModelArgs& a) {
  ModelConfig cfg;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot read " + a.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("/: invalid JSON: ") + e.what());
    }
    cfg = model_config_from_json(j);
  }
  InitOptions opts{a.seed, a.outlier_channels, a.outlier_scale, a.high_byte_scale};
  save_qlb1(init_random(cfg, opts), a.out);
  std::cout << a.out << "\n";
  return 0;
}

int cmd_eval(const ModelArgs& a) {
  const Model model = load_any_model(a.model);
  std::vector<Document> docs = load_docs(a.data);
  if (!a.lang.empty()) std::erase_if(docs, [&](const Document& d) { return d.lang != a.lang; });
  auto tokens = tokenize_documents(docs);
  if (a.max_tokens && tokens.size() > a.max_tokens) tokens.resize(a.max_tokens);
  const std::size_t ctx = a.context ? a.context : model.config.context_length;
  const PerplexityResult r = evaluate_perplexity(model, tokens, ctx);
  json out{{"ppl", r.ppl}, {"nll_sum", r.nll_sum}, {"predicted", r.predicted}, {"context", ctx}};
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_quantize(const ModelArgs& a, const QuantArgs& q) {
  const Method method = parse_method(a.method);
  const QuantSpec spec = q.spec(method);
  const Model model = load_qlb1(a.model);
  const CalibrationSet calib = a.calib.empty() ? CalibrationSet{} : read_calibration(a.calib);
  const QuantizedModel qm = quantize_model(model, method, calib, spec);
  save_qlq1(qm, a.out);
  double total = 0.0;
  for (const auto& [name, v] : qm.proxy_error) total += v;
  std::cout << json{{"out", a.out}, {"proxy_error_total", total}, {"tensors", qm.quantized.size()}}.dump() << "\n";
  return 0;
}

int cmd_mse(const DiagArgs& a) {
  const Model model = load_qlb1(a.model);
  const QuantizedModel qm = load_qlq1(a.quantized);
  const LayerMse mse = layer_mse(model.weights, effective_store(qm));
  DiagnosticsReport rep = base_report(a.model, std::string(to_string(qm.method)), "", "", "");
  rep.manifest["qlq1_hash"] = sha256_file(a.quantized);
  for (const auto& [name, v] : mse.per_tensor)
    if (is_projection(name)) rep.metrics["layer_mse." + name] = v;
  rep.metrics["most_error_prone"] = mse.most_error_prone;
  for (const auto& [layer, name] : mse.per_layer_worst) rep.metrics[fmt::format("most_error_prone.layer{}", layer)] = name;
  print_report(rep, a.out);
  return 0;
}

int cmd_act(const DiagArgs& a, const QuantArgs& q) {
  if (a.calibs.size() != 1) throw Error(ErrorKind::ConfigError, "act takes exactly one --calib");
  const Model model = load_any_model(a.model);
  const CalibrationSet calib = read_calibration(a.calibs[0]);
  const auto buf = capture_calibration(model, calib, {a.projection}, q.capture_cap, q.batch_size);
  const Matrix x = buf.matrix(a.projection);
  std::optional<ActivationProfile> ref;
  if (!a.reference.empty()) {
    const CalibrationSet rc = read_calibration(a.reference);
    const Matrix rx = capture_calibration(model, rc, {a.projection}, q.capture_cap, q.batch_size).matrix(a.projection);
    ref = activation_profile(rx.values());
  }
  const ActivationProfile p = activation_profile(x.values(), ref ? &*ref : nullptr);
  DiagnosticsReport rep = base_report(a.model, "none", calib.strategy, std::to_string(calib.seed), "");
  rep.manifest["projection"] = a.projection;
  if (!a.reference.empty()) rep.manifest["reference"] = read_calibration(a.reference).strategy;
  rep.metrics["max_channel_activation"] = max_channel_activations(buf, a.projection);
  rep.metrics["p50"] = p.p50;
  rep.metrics["p90"] = p.p90;
  rep.metrics["p99"] = p.p99;
  rep.metrics["p999"] = p.p999;
  rep.metrics["max"] = p.max;
  rep.metrics["tail_mass"] = p.tail_mass;
  if (p.range_coverage) rep.metrics["range_coverage"] = *p.range_coverage;
  print_report(rep, a.out);
  return 0;
}

int cmd_hessdist(const DiagArgs& a, const QuantArgs& q) {
  if (a.calibs.size() < 2) throw Error(ErrorKind::ConfigError, "hessdist needs at least two --calib files");
  const Model model = load_any_model(a.model);
  std::vector<MatrixD> inverses;
  std::vector<std::string> names;
  for (const auto& path : a.calibs) {
    const CalibrationSet calib = read_calibration(path);
    const Matrix x = capture_calibration(model, calib, {a.projection}, q.capture_cap, q.batch_size).matrix(a.projection);
    HessianAccumulator acc(x.rows(), q.damping);
    acc.accumulate(x);
    inverses.push_back(invert_spd_f64(finalize_hessian_f64(acc)));
    names.push_back(calib.strategy);
  }
  DiagnosticsReport rep = base_report(a.model, "gptq", join(names, ","), "none", fmt::format("damp={:g}", q.damping));
  rep.manifest["projection"] = a.projection;
  rep.manifest["distance_metric"] = "normalized_frobenius";
  rep.metrics["hessian_distance"] = pairwise_hessian_distances(inverses);
  print_report(rep, a.out);
  return 0;
}

int cmd_vocab(const DiagArgs& a) {
  if (a.calibs.empty() || a.calibs.size() > 3) throw Error(ErrorKind::ConfigError, "vocab takes one to three --calib files");
  std::vector<CalibrationSet> sets;
  for (const auto& p : a.calibs) sets.push_back(read_calibration(p));
  std::vector<std::string> names;
  std::vector<double> unique, mean;
  for (const auto& s : sets) {
    const VocabStats vs = vocab_stats(s);
    names.push_back(s.strategy);
    unique.push_back(static_cast<double>(vs.unique_types));
    mean.push_back(vs.mean_tokens_per_example);
  }
  DiagnosticsReport rep = base_report("", "none", join(names, ","), std::to_string(sets[0].seed), "");
  rep.manifest["tokenizer"] = sets[0].tokenizer;
  rep.metrics["unique_types"] = unique;
  rep.metrics["mean_tokens_per_example"] = mean;
  if (sets.size() >= 2) {
    std::vector<const CalibrationSet*> ptrs;
    for (const auto& s : sets) ptrs.push_back(&s);
    const VocabOverlap ov = vocab_overlap(ptrs);
    rep.metrics["overlap.ab"] = static_cast<double>(ov.ab);
    if (ov.abc) {
      rep.metrics["overlap.ac"] = static_cast<double>(*ov.ac);
      rep.metrics["overlap.bc"] = static_cast<double>(*ov.bc);
      rep.metrics["overlap.abc"] = static_cast<double>(*ov.abc);
    }
  }
  print_report(rep, a.out);
  return 0;
}

// Reads a ppl.csv produced by the pipeline.
std::pair<std::vector<std::string>, std::vector<PplRow>> read_ppl_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::FormatError, "empty ppl table");
  auto header = split(line);
  if (header.size() < 4 || header[0] != "method" || header[1] != "calibration" || header.back() != "Avg") {
    throw Error(ErrorKind::FormatError, "unexpected ppl table header");
  }
  std::vector<std::string> langs(header.begin() + 2, header.end() - 1);
  std::vector<PplRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw Error(ErrorKind::FormatError, "ragged ppl table row");
    PplRow r{cells[0], cells[1], {}};
    for (std::size_t i = 0; i < langs.size(); ++i) {
      try {
        r.ppl[langs[i]] = std::stod(cells[i + 2]);
      } catch (const std::exception&) {
        throw Error(ErrorKind::FormatError, "non-numeric ppl cell '" + cells[i + 2] + "'");
      }
    }
    rows.push_back(std::move(r));
  }
  return {langs, rows};
}

int cmd_delta(const DiagArgs& a) {
  const auto [langs, rows] = read_ppl_csv(a.ppl_csv);
  const std::string csv = delta_ppl_csv(rows, langs, a.baseline);
  if (!a.csv_out.empty()) {
    std::ofstream out(a.csv_out, std::ios::binary);
    out << csv;
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + a.csv_out);
  }
  std::vector<std::string> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  DiagnosticsReport rep = base_report("", join(methods, ","), a.baseline, "none", "");
  rep.manifest["columns"] = join(langs, ",") + ",Avg";
  for (const auto& r : rows) {
    const auto& base = *std::find_if(rows.begin(), rows.end(), [&](const PplRow& b) {
      return b.method == r.method && b.calibration == a.baseline;
    });
    std::vector<double> deltas;
    double sb = 0.0, so = 0.0;
    for (const auto& l : langs) {
      deltas.push_back(delta_ppl(base.ppl.at(l), r.ppl.at(l)));
      sb += base.ppl.at(l);
      so += r.ppl.at(l);
    }
    deltas.push_back(delta_ppl(sb / langs.size(), so / langs.size()));
    rep.metrics["delta_ppl." + r.method + "." + r.calibration] = deltas;
  }
  print_report(rep, a.out);
  return 0;
}

int cmd_validate(const PipelineArgs& a) {
  (void)load_pipeline_config(a.config);
  std::cout << "ok\n";
  return 0;
}

int cmd_pipeline(const PipelineArgs& a, const std::string& command_line) {
  const PipelineConfig cfg = load_pipeline_config(a.config);
  PipelineOptions opts;
  opts.jobs = a.jobs;
  if (!a.out.empty()) opts.out_dir = fs::path(a.out);
  opts.command_line = command_line;
  const PipelineResult r = run_pipeline(cfg, opts);
  for (const auto& c : r.cells) {
    std::cout << fmt::format("{:<28} {}\n", cell_dir_name(c.method, c.calibration), c.ok ? "ok" : "FAILED");
  }
  std::cout << r.run_dir.string() << "\n";
  if (r.exit_code != 0) {
    for (const auto& c : r.cells)
      if (!c.ok) std::cerr << error_json(*c.error, c.message, cell_dir_name(c.method, c.calibration)) << "\n";
  }
  return r.exit_code;
}

void add_quant_flags(CLI::App* cmd, QuantArgs& q) {
  cmd->add_option("--bits", q.bits, "Weight bit width")->capture_default_str();
  cmd->add_option("--group-size", q.group_size, "Columns per quantization group")->capture_default_str();
  cmd->add_option("--damping", q.damping, "GPTQ damping fraction of mean diag(H)")->capture_default_str();
  cmd->add_flag("--cross-group", q.cross_group, "GPTQ: propagate error past the current group");
  cmd->add_option("--batch-size", q.batch_size, "Calibration examples per forward batch")->capture_default_str();
  cmd->add_option("--salience-fraction", q.salience_fraction, "AWQ salient channel fraction")->capture_default_str();
  cmd->add_option("--scale-mode", q.scale_mode, "AWQ scale rule: activation-ratio | weight-max")->capture_default_str();
  cmd->add_option("--max-scale", q.max_scale, "AWQ scale clamp")->capture_default_str();
  cmd->add_option("--capture-cap", q.capture_cap, "Captured columns kept per projection")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlab: multilingual calibration and weight quantization toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CalibArgs ca;
  SynthArgs sa;
  ModelArgs ma;
  QuantArgs qa;
  DiagArgs da;
  PipelineArgs pa;

  auto* calib = app.add_subcommand("calib", "Calibration sets")->require_subcommand(1);
  auto* build = calib->add_subcommand("build", "Build a calibration set from JSONL documents");
  build->add_option("--strategy", ca.strategy, "single | multi10 | multimix | multi | plus_code:<s> | ...")->required();
  build->add_option("--lang", ca.lang, "Language tag for the single strategy");
  build->add_option("--n", ca.n, "Number of examples")->required();
  build->add_option("--t", ca.t, "Tokens per example")->required();
  build->add_option("--seed", ca.seed, "Seed")->required();
  build->add_option("--in", ca.in, "Directory of JSONL documents")->required()->check(CLI::ExistingDirectory);
  build->add_option("--out", ca.out, "Output calibration file")->required();
  build->add_option("--mix-fraction", ca.mix_fraction, "Replaced fraction for plus_* strategies")->capture_default_str();
  build->add_option("--extra", ca.extra, "Code/math JSONL for plus_* strategies")->check(CLI::ExistingFile);
  build->add_option("--tokenizer", ca.tokenizer, "byte_level | whitespace")->capture_default_str();
  build->add_option("--langs", ca.langs, "multi10 languages (default: en fr sw zh xh st zu yo ig ha)");

  auto* synth = calib->add_subcommand("synth", "Write a seeded synthetic multilingual corpus");
  synth->add_option("--seed", sa.seed, "Seed")->required();
  synth->add_option("--out", sa.out, "Output directory (one <lang>.jsonl per language)")->required();
  synth->add_option("--docs", sa.docs, "Documents per language")->capture_default_str();
  synth->add_option("--words", sa.words, "Words per document")->capture_default_str();
  synth->add_option("--langs", sa.langs, "Language tags (default: the multi10 set)");
  synth->add_option("--extra", sa.extra, "Also write code/math documents to this file");
  synth->add_option("--extra-docs", sa.extra_docs, "Code and math documents each")->capture_default_str();

  auto* model = app.add_subcommand("model", "Model containers")->require_subcommand(1);
  auto* init = model->add_subcommand("init-random", "Seeded random model");
  init->add_option("--config", ma.config, "Model config JSON")->check(CLI::ExistingFile);
  init->add_option("--seed", ma.seed, "Seed")->required();
  init->add_option("--outlier-channels", ma.outlier_channels, "Embedding channels scaled by --outlier-scale");
  init->add_option("--outlier-scale", ma.outlier_scale, "Outlier channel factor");
  init->add_option("--high-byte-scale", ma.high_byte_scale, "Factor on embedding rows of bytes >= 128");
  init->add_option("--out", ma.out, "Output QLB1")->required();
  auto* eval = model->add_subcommand("eval", "Perplexity over a document stream");
  eval->add_option("--model", ma.model, "QLB1 or QLQ1 file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ma.data, "JSONL file or directory")->required()->check(CLI::ExistingPath);
  eval->add_option("--lang", ma.lang, "Only documents with this tag");
  eval->add_option("--context", ma.context, "Window length (default: model context)");
  eval->add_option("--max-tokens", ma.max_tokens, "Truncate the stream");
  auto* quant = model->add_subcommand("quantize", "Quantize every projection");
  quant->add_option("--model", ma.model, "QLB1 input")->required()->check(CLI::ExistingFile);
  quant->add_option("--method", ma.method, "gptq | awq | rtn")->required();
  quant->add_option("--calib", ma.calib, "Calibration file (optional for rtn)")->check(CLI::ExistingFile);
  quant->add_option("--out", ma.out, "Output QLQ1")->required();
  add_quant_flags(quant, qa);

  auto* diag = app.add_subcommand("diagnose", "Diagnostics reports")->require_subcommand(1);
  auto* mse = diag->add_subcommand("mse", "Per-tensor weight MSE");
  mse->add_option("--model", da.model, "Original QLB1")->required()->check(CLI::ExistingFile);
  mse->add_option("--quantized", da.quantized, "QLQ1")->required()->check(CLI::ExistingFile);
  auto* act = diag->add_subcommand("act", "Activation profile of one projection");
  act->add_option("--model", da.model, "Model file")->required()->check(CLI::ExistingFile);
  act->add_option("--calib", da.calibs, "Calibration file")->required()->check(CLI::ExistingFile);
  act->add_option("--reference", da.reference, "Reference calibration (range coverage)")->check(CLI::ExistingFile);
  act->add_option("--projection", da.projection, "Projection name")->capture_default_str();
  auto* hess = diag->add_subcommand("hessdist", "Pairwise inverse-Hessian distances");
  hess->add_option("--model", da.model, "Model file")->required()->check(CLI::ExistingFile);
  hess->add_option("--calib", da.calibs, "Calibration files (two or more)")->required()->check(CLI::ExistingFile);
  hess->add_option("--projection", da.projection, "Projection name")->capture_default_str();
  auto* vocab = diag->add_subcommand("vocab", "Vocabulary statistics and overlaps");
  vocab->add_option("--calib", da.calibs, "Calibration files (one to three)")->required()->check(CLI::ExistingFile);
  auto* delta = diag->add_subcommand("delta", "Delta-PPL table against a baseline calibration");
  delta->add_option("--ppl", da.ppl_csv, "ppl.csv from a pipeline run")->required()->check(CLI::ExistingFile);
  delta->add_option("--baseline", da.baseline, "Baseline calibration")->capture_default_str();
  delta->add_option("--csv", da.csv_out, "Also write the delta CSV here");
  for (auto* sub : {act, hess}) {
    sub->add_option("--capture-cap", qa.capture_cap, "Captured columns kept")->capture_default_str();
    sub->add_option("--batch-size", qa.batch_size, "Examples per batch")->capture_default_str();
  }
  hess->add_option("--damping", qa.damping, "Damping fraction")->capture_default_str();
  for (auto* sub : {mse, act, hess, vocab, delta}) sub->add_option("--out", da.out, "Report path (default: stdout)");

  auto* pipe = app.add_subcommand("pipeline", "Run the method x calibration matrix");
  pipe->add_option("--config", pa.config, "Pipeline config JSON")->required();
  pipe->add_option("--jobs", pa.jobs, "Cells run in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  pipe->add_option("--out", pa.out, "Override the config's out_dir");
  auto* validate = app.add_subcommand("validate", "Check a pipeline config without running it");
  validate->add_option("--config", pa.config, "Pipeline config JSON")->required();
  auto* version = app.add_subcommand("version", "Print the tool version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command_line;
  for (int i = 0; i < argc; ++i) command_line += (i ? " " : "") + std::string(argv[i]);

  try {
    if (*version) {
      std::cout << "qlab " << kToolVersion << "\n";
      return 0;
    }
    if (*build) return cmd_calib_build(ca);
    if (*synth) return cmd_calib_synth(sa);
    if (*init) return cmd_init_random(ma);
    if (*eval) return cmd_eval(ma);
    if (*quant) return cmd_quantize(ma, qa);
    if (*mse) return cmd_mse(da);
    if (*act) return cmd_act(da, qa);
    if (*hess) return cmd_hessdist(da, qa);
    if (*vocab) return cmd_vocab(da);
    if (*delta) return cmd_delta(da);
    if (*validate) return cmd_validate(pa);
    if (*pipe) return cmd_pipeline(pa, command_line);
  } catch (const Error& e) {
    std::cerr << error_json(e.kind(), e.message()) << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << error_json(ErrorKind::IoError, e.what()) << "\n";
    return exit_code_for(ErrorKind::IoError);
  }
  return 2;
}
