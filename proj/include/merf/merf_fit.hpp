#pragma once

// Mixed effects random forest fitting. Alternates between the fixed part,
// trained on y minus the current random effects, and the random effects,
// estimated from the fixed part's OOB residuals:
//
//   (a) y* = y - Z v          (b) train f on (X, y*)      (c) f_oob
//   (d) ML variance components of y with offset f_oob
//   (e) v = BLUP(y - f_oob)
//
// until the relative change of the GLL criterion drops below the tolerance.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "merf/bias_correction.hpp"
#include "merf/data.hpp"
#include "merf/fixed_part.hpp"
#include "merf/log.hpp"
#include "merf/mixed_model.hpp"
#include "merf/model.hpp"
#include "merf/random.hpp"

namespace merf {

/// State carried between iterations. `iteration` counts completed updates.
struct MerfState {
  std::size_t iteration = 0;
  RandomEffects v_hat;
  std::vector<double> y_star;
  std::optional<FixedPartModel> fixed_part;
  std::vector<double> oob;
  VarianceFit variance;
  double gll = std::numeric_limits<double>::quiet_NaN();
};

/// Initial state: all random effects zero.
inline MerfState initial_state(const Grouping& g) {
  MerfState s;
  s.v_hat.v_hat.assign(g.groups(), 0.0);
  return s;
}

/// One full (a)-(e) cycle. Pure given the seed substream of the iteration.
inline MerfState update_step(const MerfState& state, const SurveyDataset& survey, const Grouping& g, FixedPartKind kind,
                             const MerfConfig& config) {
  const std::size_t n = survey.n();
  MerfState next;
  next.iteration = state.iteration + 1;
  next.y_star.resize(n);
  for (std::size_t j = 0; j < n; ++j) next.y_star[j] = survey.y[j] - state.v_hat.v_hat[g.code[j]];

  const std::uint64_t seed = config.seeding == IterationSeeding::shared
                                 ? derive_seed(config.seed, {stream::merf_iteration})
                                 : derive_seed(config.seed, {stream::merf_iteration, next.iteration});
  next.fixed_part = train_fixed_part(kind, config.forest, survey.X, next.y_star, seed);
  next.oob = training_predictions(*next.fixed_part);

  next.variance = fit_variance_components(next.oob, survey.y, g);
  std::vector<double> e(n);
  for (std::size_t j = 0; j < n; ++j) e[j] = survey.y[j] - next.oob[j];
  next.v_hat = blup(e, g, next.variance.vc);
  next.gll = gll(e, next.v_hat, next.variance.vc, g);
  return next;
}

inline MerfModel fit_merf(const SurveyDataset& survey, FixedPartKind kind, const MerfConfig& config) {
  survey.validate();
  config.validate();
  const Grouping g = survey.groups();
  if (g.groups() < 2) throw ConfigError("MERF needs at least 2 sampled areas");

  MerfModel model;
  model.kind = kind;
  model.config = config;
  model.schema = survey.schema;
  model.columns = survey.columns;
  model.areas = g.labels;
  model.area_n = g.counts;

  MerfState state = initial_state(g);
  auto& trace = model.trace;
  while (state.iteration < config.max_iter) {
    state = update_step(state, survey, g, kind, config);
    const double rel = trace.gll.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : std::abs(state.gll - trace.gll.back()) / std::abs(trace.gll.back());
    trace.gll.push_back(state.gll);
    trace.relative_change.push_back(rel);
    trace.sigma2_v.push_back(state.variance.vc.sigma2_v);
    trace.sigma2_eps.push_back(state.variance.vc.sigma2_eps);
    if (rel < config.tolerance) {
      trace.converged = true;
      break;
    }
  }
  trace.iterations = state.iteration;
  if (!trace.converged)
    log::warn("MERF did not reach relative GLL change " + std::to_string(config.tolerance) + " within " +
              std::to_string(config.max_iter) + " iterations");

  model.fixed_part = std::move(*state.fixed_part);
  model.oob = std::move(state.oob);
  model.v_hat = std::move(state.v_hat);
  model.variance_fit = state.variance;
  model.vc = state.variance.vc;

  if (config.bias_correction) {
    model.bias_correction = bias_corrected_variance(model, survey, config.bias_correction_B);
    model.vc.sigma2_bc = model.bias_correction->sigma2_bc;
  }
  return model;
}

}  // namespace merf
