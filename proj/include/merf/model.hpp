#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/fixed_part.hpp"
#include "merf/mixed_model.hpp"

namespace merf {

/// How the forest of each iteration is seeded. `shared` reuses one seed so
/// every iteration draws the same bootstrap samples and split candidates;
/// `per_iteration` derives a fresh seed per iteration.
enum class IterationSeeding { shared, per_iteration };

inline const char* to_string(IterationSeeding s) { return s == IterationSeeding::shared ? "shared" : "per_iteration"; }

inline IterationSeeding parse_iteration_seeding(const std::string& s) {
  if (s == "shared") return IterationSeeding::shared;
  if (s == "per_iteration") return IterationSeeding::per_iteration;
  throw ConfigError("unknown iteration seeding '" + s + "'");
}

struct MerfConfig {
  /// Relative GLL change that ends the alternation.
  double tolerance = 1e-5;
  std::size_t max_iter = 50;
  /// Forest tuning. Its seed is ignored: forest seeds derive from `seed`.
  ForestConfig forest{};
  IterationSeeding seeding = IterationSeeding::shared;
  /// Compute the bias-corrected residual variance after convergence.
  bool bias_correction = true;
  std::size_t bias_correction_B = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(tolerance > 0.0) || !std::isfinite(tolerance)) throw ConfigError("tolerance must be positive");
    if (max_iter == 0) throw ConfigError("max_iter must be positive");
    if (bias_correction && bias_correction_B == 0) throw ConfigError("bias_correction_B must be positive");
  }
};

struct ConvergenceTrace {
  std::vector<double> gll;
  /// NaN for the first iteration.
  std::vector<double> relative_change;
  std::vector<double> sigma2_v;
  std::vector<double> sigma2_eps;
  std::size_t iterations = 0;
  bool converged = false;
};

struct BiasCorrectionResult {
  double sigma2_naive = 0.0;
  double K_hat = 0.0;
  double sigma2_bc = 0.0;
  std::size_t B = 0;
  bool floored = false;
  /// Per-replicate mean squared OOB discrepancy; K_hat is their average.
  std::vector<double> replicate_terms;
};

struct MerfModel {
  FixedPartKind kind = FixedPartKind::random_forest;
  FixedPartModel fixed_part;
  /// Final OOB (or fitted) predictions at the training rows.
  std::vector<double> oob;
  /// Sampled area labels with their sample sizes; v_hat follows this order.
  std::vector<std::string> areas;
  std::vector<std::size_t> area_n;
  RandomEffects v_hat;
  VarianceComponents vc;
  VarianceFit variance_fit;
  std::optional<BiasCorrectionResult> bias_correction;
  ConvergenceTrace trace;
  MerfConfig config;
  CovariateSchema schema;
  std::vector<std::string> columns;

  /// Random effect of an area; 0 for areas without sample data.
  double random_effect(const std::string& label) const {
    for (std::size_t i = 0; i < areas.size(); ++i)
      if (areas[i] == label) return v_hat.v_hat[i];
    return 0.0;
  }

  std::vector<double> predict_fixed(const Eigen::MatrixXd& X) const { return predict(fixed_part, X); }
};

}  // namespace merf
