#pragma once

// Fixed-part learners f(): a regression forest, or ordinary least squares with
// intercept (whose "OOB" predictions are its fitted values). The linear
// learner turns the MERF alternation into the classic unit-level EBLUP.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "merf/error.hpp"
#include "merf/forest.hpp"

namespace merf {

struct LinearFit {
  /// Intercept first, then one slope per covariate.
  std::vector<double> coef;
  std::vector<double> fitted;

  double intercept() const { return coef.front(); }

  std::vector<double> predict(const Eigen::MatrixXd& X) const {
    if (static_cast<std::size_t>(X.cols()) + 1 != coef.size())
      throw ShapeError("linear fit has " + std::to_string(coef.size() - 1) + " slopes, got " + std::to_string(X.cols()) + " columns");
    std::vector<double> out(static_cast<std::size_t>(X.rows()), coef[0]);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      const double b = coef[static_cast<std::size_t>(j) + 1];
      for (Eigen::Index i = 0; i < X.rows(); ++i) out[static_cast<std::size_t>(i)] += b * X(i, j);
    }
    return out;
  }
};

inline LinearFit fit_linear(const Eigen::MatrixXd& X, std::span<const double> y) {
  const auto n = X.rows();
  if (static_cast<std::size_t>(n) != y.size()) throw ShapeError("X and y lengths differ");
  if (n < X.cols() + 1) throw ConfigError("too few observations for least squares");
  Eigen::MatrixXd A(n, X.cols() + 1);
  A.col(0).setOnes();
  A.rightCols(X.cols()) = X;
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::VectorXd beta = A.colPivHouseholderQr().solve(b);
  LinearFit fit;
  fit.coef.assign(beta.data(), beta.data() + beta.size());
  fit.fitted = fit.predict(X);
  return fit;
}

enum class FixedPartKind { random_forest, linear };

inline const char* to_string(FixedPartKind k) { return k == FixedPartKind::random_forest ? "random_forest" : "linear"; }

inline FixedPartKind parse_fixed_part_kind(const std::string& s) {
  if (s == "random_forest" || s == "forest" || s == "merf") return FixedPartKind::random_forest;
  if (s == "linear" || s == "linear_baseline") return FixedPartKind::linear;
  throw ConfigError("unknown fixed-part learner '" + s + "'");
}

using FixedPartModel = std::variant<Forest, LinearFit>;

/// Trains the fixed part; `forest` supplies tuning for the forest learner and
/// `seed` replaces its seed.
inline FixedPartModel train_fixed_part(FixedPartKind kind, const ForestConfig& forest, const Eigen::MatrixXd& X,
                                       std::span<const double> y, std::uint64_t seed) {
  if (kind == FixedPartKind::linear) return fit_linear(X, y);
  ForestConfig config = forest;
  config.seed = seed;
  return fit_forest(X, y, config);
}

/// OOB predictions for a forest, fitted values for least squares.
inline const std::vector<double>& training_predictions(const FixedPartModel& model) {
  return std::visit(
      [](const auto& m) -> const std::vector<double>& {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Forest>) return m.oob_predictions();
        else return m.fitted;
      },
      model);
}

inline std::vector<double> predict(const FixedPartModel& model, const Eigen::MatrixXd& X) {
  return std::visit([&](const auto& m) { return m.predict(X); }, model);
}

inline std::size_t oob_fallbacks(const FixedPartModel& model) {
  if (const auto* f = std::get_if<Forest>(&model)) return f->oob_fallbacks();
  return 0;
}

}  // namespace merf
