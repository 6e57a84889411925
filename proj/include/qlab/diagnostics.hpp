#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qlab/calibkit.hpp"
#include "qlab/nanomodel.hpp"
#include "qlab/numerics.hpp"

namespace qlab {

// ---- report ---------------------------------------------------------------

inline constexpr int kReportSchemaVersion = 1;

using MetricValue = std::variant<double, std::vector<double>, std::vector<std::vector<double>>, std::string>;

struct DiagnosticsReport {
  std::map<std::string, std::string> manifest;
  std::map<std::string, MetricValue> metrics;
  int schema_version = kReportSchemaVersion;

  /// Manifest must carry non-empty model_hash, method, calib_strategy, seed and spec;
  /// every numeric metric must be finite.
  void validate() const;
};

inline constexpr const char* kRequiredManifestFields[] = {"model_hash", "method", "calib_strategy", "seed", "spec"};

/// Canonical JSON: sorted keys, numbers as %.6g, matrices as nested row-major arrays.
std::string report_to_json(const DiagnosticsReport& report);
DiagnosticsReport report_from_json(std::string_view text);
void report_emit(const DiagnosticsReport& report, const std::filesystem::path& path);

/// %.6g with negative zero folded to zero.
std::string format_number(double v);

// ---- analyses -------------------------------------------------------------

struct LayerMse {
  std::map<std::string, double> per_tensor;
  std::string most_error_prone;
  // layer index -> tensor with the largest MSE in that layer
  std::map<std::size_t, std::string> per_layer_worst;
};

/// Both stores in the original parameterization (see effective_store for AWQ).
LayerMse layer_mse(const NamedTensorStore& original, const NamedTensorStore& quantized);

std::vector<double> max_channel_activations(const CaptureBuffer& buffer, const std::string& projection);
std::vector<double> max_channel_activations(const Matrix& columns);

struct ActivationProfile {
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double p999 = 0.0;
  double max = 0.0;
  // Fraction of |a| strictly above the reference p99 (own p99 without a reference).
  double tail_mass = 0.0;
  // max_self / max_reference; present only against a reference.
  std::optional<double> range_coverage;
};

ActivationProfile activation_profile(std::span<const float> activations,
                                     const ActivationProfile* reference = nullptr);

/// ||A - B||_F / (0.5 (||A||_F + ||B||_F)); 0 when both are zero.
double hessian_distance(const MatrixD& a, const MatrixD& b);
std::vector<std::vector<double>> pairwise_hessian_distances(const std::vector<MatrixD>& inverses);

struct VocabStats {
  std::size_t unique_types = 0;
  double mean_tokens_per_example = 0.0;
};

VocabStats vocab_stats(const CalibrationSet& set);

struct VocabOverlap {
  std::size_t ab = 0;
  std::optional<std::size_t> ac;
  std::optional<std::size_t> bc;
  std::optional<std::size_t> abc;
};

VocabOverlap vocab_overlap(const std::vector<const CalibrationSet*>& sets);

/// baseline - other; positive means the other calibration fit better.
double delta_ppl(double baseline_ppl, double other_ppl);

struct PplRow {
  std::string method;
  std::string calibration;
  std::map<std::string, double> ppl;  // per eval language
};

/// Rows method+calibration, columns eval languages then Avg. Each cell is
/// delta_ppl(baseline row of the same method, this row).
std::string delta_ppl_csv(const std::vector<PplRow>& rows, const std::vector<std::string>& langs,
                          const std::string& baseline);
std::string ppl_csv(const std::vector<PplRow>& rows, const std::vector<std::string>& langs);

}  // namespace qlab
