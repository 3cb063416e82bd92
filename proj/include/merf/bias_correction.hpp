#pragma once

// Bootstrap bias correction of the naive unit-level variance. OOB residuals
// still carry the estimation error of f(); the correction term K measures it
// by refitting on synthetic responses f_oob + resampled centred residuals:
//
//   K = B^-1 sum_b mean_j (f_oob(x_j) - f_oob_b(x_j))^2,   s2_bc = s2_naive - K.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "merf/data.hpp"
#include "merf/error.hpp"
#include "merf/fixed_part.hpp"
#include "merf/log.hpp"
#include "merf/model.hpp"
#include "merf/parallel.hpp"
#include "merf/random.hpp"

namespace merf {

inline BiasCorrectionResult bias_corrected_variance(const MerfModel& model, const SurveyDataset& survey, std::size_t B) {
  if (B == 0) throw ConfigError("bias correction needs B >= 1");
  const std::size_t n = survey.n();
  if (model.oob.size() != n) throw ShapeError("model OOB predictions do not match the survey");

  std::vector<double> resid(n);
  for (std::size_t j = 0; j < n; ++j) resid[j] = survey.y[j] - model.oob[j];
  const double mean = std::accumulate(resid.begin(), resid.end(), 0.0) / static_cast<double>(n);
  for (double& r : resid) r -= mean;

  BiasCorrectionResult out;
  out.B = B;
  out.sigma2_naive = model.vc.sigma2_eps;
  out.replicate_terms.assign(B, 0.0);

  const unsigned outer = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(model.config.forest.threads), B));
  ForestConfig forest = model.config.forest;
  if (outer > 1) forest.threads = 1;
  parallel_for(B, outer, [&](std::size_t b) {
    Engine rng = make_engine(model.config.seed, {stream::bias_correction, b});
    std::vector<double> y_star(n);
    for (std::size_t j = 0; j < n; ++j) y_star[j] = model.oob[j] + resid[uniform_index(rng, n)];
    const std::uint64_t seed = derive_seed(model.config.seed, {stream::bias_correction, b, 1});
    const FixedPartModel refit = train_fixed_part(model.kind, forest, survey.X, y_star, seed);
    const auto& pred = training_predictions(refit);
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = model.oob[j] - pred[j];
      acc += d * d;
    }
    out.replicate_terms[b] = acc / static_cast<double>(n);
  });
  out.K_hat = std::accumulate(out.replicate_terms.begin(), out.replicate_terms.end(), 0.0) / static_cast<double>(B);

  const double ybar = std::accumulate(survey.y.begin(), survey.y.end(), 0.0) / static_cast<double>(n);
  double var_y = 0.0;
  for (double v : survey.y) var_y += (v - ybar) * (v - ybar);
  var_y /= static_cast<double>(std::max<std::size_t>(n - 1, 1));
  const double floor = 1e-8 * var_y;
  out.sigma2_bc = out.sigma2_naive - out.K_hat;
  if (out.sigma2_bc < floor) {
    out.floored = true;
    log::warn("bias-corrected residual variance " + std::to_string(out.sigma2_bc) + " floored at " + std::to_string(floor));
    out.sigma2_bc = std::min(floor, out.sigma2_naive);
  }
  return out;
}

}  // namespace merf
