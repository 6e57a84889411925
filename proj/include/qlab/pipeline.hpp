#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qlab/calibkit.hpp"
#include "qlab/error.hpp"
#include "qlab/nanomodel.hpp"
#include "qlab/quantgrid.hpp"

namespace qlab {

inline constexpr const char* kToolVersion = "0.1.0";

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// Short human-readable form recorded in report manifests.
std::string spec_string(const QuantSpec& spec);

// Config readers shared by the pipeline and the single-step commands. Errors are
// ConfigError messages prefixed with the JSON pointer of the offending field.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& pointer = "");
InitOptions init_options_from_json(const nlohmann::json& j, const std::string& pointer = "");
QuantSpec quant_spec_from_json(const nlohmann::json& j, const std::string& pointer = "");

struct PipelineConfig {
  // Either a QLB1 file or a random-init recipe.
  std::optional<std::filesystem::path> model_path;
  ModelConfig model_config;
  InitOptions init;

  std::filesystem::path corpus_dir;
  std::optional<std::filesystem::path> extra_path;
  std::filesystem::path eval_dir;
  std::vector<std::string> eval_langs;   // empty: every language in eval_dir
  std::size_t eval_tokens = 0;           // per-language cap, 0 = all

  std::vector<std::string> calibrations;
  std::vector<Method> methods;
  std::string baseline = "single:en";
  std::vector<std::string> multi10_langs;

  std::size_t n = 0;
  std::size_t t = 0;
  std::uint64_t seed = 0;
  double mix_fraction = kDefaultMixFraction;
  std::string tokenizer = "byte_level";
  std::size_t context_length = 0;  // 0: model context
  QuantSpec quant;

  std::filesystem::path out_dir = "runs";
  // Canonical dump of the source document; its hash names the run directory.
  std::string canonical;
};

/// Parses and checks schema plus input availability; paths resolve against `base_dir`.
PipelineConfig parse_pipeline_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string config_hash(const PipelineConfig& cfg);

struct PipelineOptions {
  std::size_t jobs = 1;
  std::optional<std::filesystem::path> out_dir;
  std::string command_line;
};

struct CellOutcome {
  Method method = Method::rtn;
  std::string calibration;
  bool ok = false;
  std::optional<ErrorKind> error;
  std::string message;
};

struct PipelineResult {
  int exit_code = 0;
  std::filesystem::path run_dir;
  std::vector<CellOutcome> cells;
};

/// Directory name of a (method, calibration) cell, e.g. "gptq__single-en".
std::string cell_dir_name(Method method, const std::string& calibration);

PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineOptions& opts);

/// Machine-readable error object printed on failures.
std::string error_json(ErrorKind kind, const std::string& message, const std::string& stage = "");

}  // namespace qlab
