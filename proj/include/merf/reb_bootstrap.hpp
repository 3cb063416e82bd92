#pragma once

// Random-effect-block bootstrap for the MSE of area means. Marginal residuals
// are split into area means (level 2) and within-area deviations (level 1),
// centred and rescaled to the fitted variances, and resampled to synthesize
// bootstrap populations on the census; each population is sampled with the
// original n_i, refitted and re-estimated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "merf/area_estimator.hpp"
#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/forest.hpp"
#include "merf/log.hpp"
#include "merf/merf_fit.hpp"
#include "merf/model.hpp"
#include "merf/parallel.hpp"
#include "merf/random.hpp"

namespace merf {

struct RebConfig {
  std::size_t B = 200;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  /// Replaces the model's forest tuning in the refits (e.g. fewer trees).
  std::optional<ForestConfig> refit_forest;

  void validate() const {
    if (B == 0) throw ConfigError("bootstrap needs B >= 1");
  }
};

struct ResidualDecomposition {
  Grouping groups;
  /// y - f(X) at the survey rows.
  std::vector<double> e_hat;
  /// Per sampled area (groups order).
  std::vector<double> r_bar;
  std::vector<double> r_hat;
  std::vector<double> r_hat_c;
  std::vector<double> r_bar_c;
  double sigma2_bc = 0.0;
  double sigma2_v = 0.0;
};

namespace detail {

/// Centres `x` and rescales it to sample variance `target` (n - 1
/// denominator). A zero spread gives all zeros.
inline std::vector<double> centre_and_scale(const std::vector<double>& x, double target) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double factor = sd > 0.0 ? std::sqrt(target) / sd : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * factor;
  return out;
}

}  // namespace detail

/// Residuals use the model's final OOB predictions as f(X).
inline ResidualDecomposition decompose_residuals(const MerfModel& model, const SurveyDataset& survey) {
  const std::size_t n = survey.n();
  if (model.oob.size() != n) throw ShapeError("model OOB predictions do not match the survey");
  ResidualDecomposition d;
  d.groups = survey.groups();
  if (d.groups.groups() < 2) throw ConfigError("level-2 residuals cannot be scaled with a single sampled area");
  if (n < 2) throw ConfigError("level-1 residuals cannot be scaled with a single observation");
  d.sigma2_v = model.vc.sigma2_v;
  if (!model.vc.sigma2_bc) log::warn("model has no bias-corrected variance; scaling level-1 residuals to the naive one");
  d.sigma2_bc = model.vc.sigma2_bc.value_or(model.vc.sigma2_eps);

  d.e_hat.resize(n);
  for (std::size_t j = 0; j < n; ++j) d.e_hat[j] = survey.y[j] - model.oob[j];
  d.r_bar.assign(d.groups.groups(), 0.0);
  for (std::size_t j = 0; j < n; ++j) d.r_bar[d.groups.code[j]] += d.e_hat[j];
  for (std::size_t i = 0; i < d.groups.groups(); ++i) d.r_bar[i] /= static_cast<double>(d.groups.counts[i]);
  d.r_hat.resize(n);
  for (std::size_t j = 0; j < n; ++j) d.r_hat[j] = d.e_hat[j] - d.r_bar[d.groups.code[j]];

  d.r_hat_c = detail::centre_and_scale(d.r_hat, d.sigma2_bc);
  d.r_bar_c = detail::centre_and_scale(d.r_bar, d.sigma2_v);
  return d;
}

struct BootstrapResult {
  /// Per area, AreaIndex order.
  std::vector<double> mse;
  std::size_t B = 0;
  std::size_t completed = 0;
  std::size_t failures = 0;
  std::optional<ForestConfig> refit_forest;
};

inline BootstrapResult bootstrap_mse(const MerfModel& model, const SurveyDataset& survey, const CensusDataset& census,
                                     const AreaIndex& index, const RebConfig& config) {
  config.validate();
  if (census.columns != model.columns) throw ConsistencyError("census covariates do not match the model");
  for (std::size_t i = 0; i < index.size(); ++i)
    if (index.n[i] > index.N[i])
      throw ConfigError("area '" + index.labels[i] + "' has more sampled units than census units");

  const ResidualDecomposition dec = decompose_residuals(model, survey);
  const std::size_t D = index.size();
  const std::size_t n = survey.n();

  // Level-1 blocks of the scaled residuals per index area; empty for
  // out-of-sample areas, which draw from the pooled vector.
  std::vector<std::vector<double>> block(D);
  for (std::size_t j = 0; j < n; ++j) {
    const auto pos = index.find(dec.groups.labels[dec.groups.code[j]]);
    if (!pos) throw ConsistencyError("survey area '" + survey.area[j] + "' is not in the area index");
    block[*pos].push_back(dec.r_hat_c[j]);
  }
  for (std::size_t i = 0; i < D; ++i)
    if (block[i].size() != index.n[i]) throw ConsistencyError("area index sample sizes do not match the survey");

  const Grouping cg = Grouping::with_order(census.area, index.labels);
  std::vector<std::vector<std::size_t>> rows(D);
  for (std::size_t j = 0; j < census.N(); ++j) rows[cg.code[j]].push_back(j);
  for (std::size_t i = 0; i < D; ++i)
    if (rows[i].empty()) throw ConsistencyError("area '" + index.labels[i] + "' has no census rows");

  const std::vector<double> f_census = model.predict_fixed(census.X);

  MerfConfig refit = model.config;
  refit.bias_correction = false;
  if (config.refit_forest) refit.forest = *config.refit_forest;
  const unsigned outer = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(config.threads), config.B));
  refit.forest.threads = outer > 1 ? 1 : config.threads;

  std::vector<std::vector<double>> sq(config.B);
  std::vector<char> ok(config.B, 0);
  parallel_for(config.B, outer, [&](std::size_t b) {
    Engine rng = make_engine(config.seed, {stream::reb_replicate, b});
    std::vector<double> level2(D);
    for (std::size_t i = 0; i < D; ++i) level2[i] = dec.r_bar_c[uniform_index(rng, dec.r_bar_c.size())];
    std::vector<double> y(census.N());
    std::vector<double> truth(D, 0.0);
    for (std::size_t i = 0; i < D; ++i) {
      const auto& pool = block[i].empty() ? dec.r_hat_c : block[i];
      for (std::size_t j : rows[i]) {
        y[j] = f_census[j] + level2[i] + pool[uniform_index(rng, pool.size())];
        truth[i] += y[j];
      }
      truth[i] /= static_cast<double>(rows[i].size());
    }

    std::vector<std::size_t> picked;
    picked.reserve(n);
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t k : sample_without_replacement(rng, rows[i].size(), index.n[i])) picked.push_back(rows[i][k]);
    SurveyDataset s;
    s.columns = survey.columns;
    s.schema = survey.schema;
    s.X.resize(static_cast<Eigen::Index>(picked.size()), census.X.cols());
    for (std::size_t k = 0; k < picked.size(); ++k) {
      s.X.row(static_cast<Eigen::Index>(k)) = census.X.row(static_cast<Eigen::Index>(picked[k]));
      s.y.push_back(y[picked[k]]);
      s.area.push_back(census.area[picked[k]]);
    }

    try {
      MerfConfig cfg = refit;
      cfg.seed = derive_seed(config.seed, {stream::reb_refit, b});
      const MerfModel m = fit_merf(s, model.kind, cfg);
      const AreaEstimates est = estimate_means(m, census, index);
      sq[b].resize(D);
      for (std::size_t i = 0; i < D; ++i) {
        const double diff = truth[i] - est.areas[i].mu_hat;
        sq[b][i] = diff * diff;
      }
      ok[b] = 1;
    } catch (const std::exception& e) {
      log::warn("bootstrap replicate " + std::to_string(b) + " failed: " + e.what());
    }
  });

  BootstrapResult out;
  out.B = config.B;
  out.refit_forest = config.refit_forest;
  out.mse.assign(D, 0.0);
  for (std::size_t b = 0; b < config.B; ++b) {
    if (!ok[b]) continue;
    ++out.completed;
    for (std::size_t i = 0; i < D; ++i) out.mse[i] += sq[b][i];
  }
  out.failures = config.B - out.completed;
  if (out.completed == 0) throw FitError("every bootstrap replicate failed");
  if (out.failures > 0)
    log::warn(std::to_string(out.failures) + " of " + std::to_string(config.B) + " bootstrap replicates skipped");
  for (double& v : out.mse) v /= static_cast<double>(out.completed);
  return out;
}

}  // namespace merf
