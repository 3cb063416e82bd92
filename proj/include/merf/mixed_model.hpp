#pragma once

// Random-intercept mixed model on residuals: y = offset + Z v + e with
// v ~ N(0, s2v I_D), e ~ N(0, s2e I_n). The offset enters with coefficient 1,
// so the only free parameters are the two variance components.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merf/data.hpp"
#include "merf/error.hpp"

namespace merf {

struct VarianceComponents {
  double sigma2_v = 0.0;
  double sigma2_eps = 1.0;
  /// Bias-corrected unit-level variance, once computed.
  std::optional<double> sigma2_bc;

  void validate() const {
    if (!std::isfinite(sigma2_v) || sigma2_v < 0.0) throw ConfigError("sigma2_v must be finite and >= 0");
    if (!std::isfinite(sigma2_eps) || sigma2_eps <= 0.0) throw ConfigError("sigma2_eps must be finite and > 0");
    if (sigma2_bc && (!std::isfinite(*sigma2_bc) || *sigma2_bc < 0.0 || *sigma2_bc > sigma2_eps))
      throw ConfigError("sigma2_bc must lie in [0, sigma2_eps]");
  }

  friend bool operator==(const VarianceComponents&, const VarianceComponents&) = default;
};

/// One intercept per group of the grouping used to compute it.
struct RandomEffects {
  std::vector<double> v_hat;
  friend bool operator==(const RandomEffects&, const RandomEffects&) = default;
};

/// Variance components plus the optimizer's record.
struct VarianceFit {
  VarianceComponents vc;
  double log_likelihood = 0.0;
  /// Ratio sigma2_v / sigma2_eps at the optimum.
  double ratio = 0.0;
  bool boundary = false;
  std::size_t evaluations = 0;
  /// Relative log-likelihood change over the final golden-section step.
  double final_relative_change = 0.0;
};

namespace detail {

struct GroupSums {
  std::vector<double> n, sum, sumsq;
  double total_n = 0.0;
};

inline GroupSums group_sums(std::span<const double> e, const Grouping& g) {
  GroupSums s;
  s.n.assign(g.groups(), 0.0);
  s.sum.assign(g.groups(), 0.0);
  s.sumsq.assign(g.groups(), 0.0);
  for (std::size_t j = 0; j < e.size(); ++j) {
    const std::size_t i = g.code[j];
    s.n[i] += 1.0;
    s.sum[i] += e[j];
    s.sumsq[i] += e[j] * e[j];
  }
  s.total_n = static_cast<double>(e.size());
  return s;
}

// Profile log-likelihood at ratio gamma = s2v/s2e, with s2e profiled out.
// Also returns the profiled s2e.
inline double profile_loglik(const GroupSums& s, double gamma, double& sigma2_eps) {
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < s.n.size(); ++i) {
    if (s.n[i] == 0.0) continue;
    const double a = 1.0 + s.n[i] * gamma;
    quad += s.sumsq[i] - gamma * s.sum[i] * s.sum[i] / a;
    logdet += std::log(a);
  }
  sigma2_eps = quad / s.total_n;
  return -0.5 * (s.total_n * (std::log(2.0 * std::numbers::pi) + std::log(sigma2_eps) + 1.0) + logdet);
}

// Derivative of the profile log-likelihood with respect to log(gamma).
inline double profile_score(const GroupSums& s, double gamma) {
  double quad = 0.0, dquad = 0.0, dlogdet = 0.0;
  for (std::size_t i = 0; i < s.n.size(); ++i) {
    if (s.n[i] == 0.0) continue;
    const double a = 1.0 + s.n[i] * gamma;
    quad += s.sumsq[i] - gamma * s.sum[i] * s.sum[i] / a;
    dquad -= s.sum[i] * s.sum[i] / (a * a);
    dlogdet += s.n[i] / a;
  }
  return -0.5 * gamma * (s.total_n * dquad / quad + dlogdet);
}

}  // namespace detail

/// Maximum-likelihood variance components for e = y - offset. The profile
/// likelihood in log(s2v/s2e) is scanned on a grid, refined by golden
/// section and polished by bisection on its score; the boundary s2v = 0 is
/// always a candidate.
inline VarianceFit fit_variance_components(std::span<const double> offset, std::span<const double> y, const Grouping& g) {
  if (offset.size() != y.size() || g.rows() != y.size()) throw ShapeError("offset, y and area lengths differ");
  std::size_t populated = 0;
  for (std::size_t c : g.counts) populated += c > 0;
  if (populated < 2) throw ConfigError("variance components need at least 2 areas with data");

  std::vector<double> e(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (!std::isfinite(offset[j]) || !std::isfinite(y[j])) throw ConfigError("non-finite offset or response");
    e[j] = y[j] - offset[j];
  }
  const auto [lo, hi] = std::minmax_element(e.begin(), e.end());
  const detail::GroupSums s = detail::group_sums(e, g);
  double within = 0.0;
  for (std::size_t i = 0; i < s.n.size(); ++i)
    if (s.n[i] > 0.0) within += std::max(0.0, s.sumsq[i] - s.sum[i] * s.sum[i] / s.n[i]);
  if (*lo == *hi || within == 0.0)
    throw ConfigError("unit-level variance is degenerate (residuals constant within areas); add jitter to the response");

  VarianceFit fit;
  auto eval = [&](double t, double& s2e) {
    ++fit.evaluations;
    return detail::profile_loglik(s, std::exp(t), s2e);
  };

  constexpr double t_min = -20.7, t_max = 20.7;  // ratio in [1e-9, 1e9]
  constexpr int grid = 181;
  double best_t = t_min, best_ll = -std::numeric_limits<double>::infinity(), s2e = 0.0;
  int best_k = 0;
  for (int k = 0; k < grid; ++k) {
    const double t = t_min + (t_max - t_min) * k / (grid - 1);
    const double ll = eval(t, s2e);
    if (ll > best_ll) {
      best_ll = ll;
      best_t = t;
      best_k = k;
    }
  }
  const double step = (t_max - t_min) / (grid - 1);
  double a = t_min + step * std::max(0, best_k - 1);
  double b = t_min + step * std::min(grid - 1, best_k + 1);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = eval(c, s2e), fd = eval(d, s2e);
  double previous = best_ll;
  for (int it = 0; it < 200 && (b - a) > 1e-10 * (1.0 + std::abs(a)); ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = eval(c, s2e);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = eval(d, s2e);
    }
    const double current = std::max(fc, fd);
    fit.final_relative_change = std::abs(current - previous) / std::max(std::abs(previous), 1e-300);
    previous = current;
  }
  double t_opt = fc >= fd ? c : d;
  double s2e_opt = 0.0;
  double ll_opt = eval(t_opt, s2e_opt);
  // Polish on the score, which resolves the optimum beyond the flat top.
  double lo_t = t_min + step * std::max(0, best_k - 1), hi_t = t_min + step * std::min(grid - 1, best_k + 1);
  if (detail::profile_score(s, std::exp(lo_t)) > 0.0 && detail::profile_score(s, std::exp(hi_t)) < 0.0) {
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo_t + hi_t);
      if (mid <= lo_t || mid >= hi_t) break;
      (detail::profile_score(s, std::exp(mid)) > 0.0 ? lo_t : hi_t) = mid;
    }
    const double t_root = 0.5 * (lo_t + hi_t);
    double s2e_root = 0.0;
    const double ll_root = eval(t_root, s2e_root);
    if (ll_root >= ll_opt - 1e-12 * std::abs(ll_opt)) {
      t_opt = t_root;
      s2e_opt = s2e_root;
      ll_opt = ll_root;
    }
  }
  if (ll_opt < best_ll - 1e-12 * std::abs(best_ll)) {
    t_opt = best_t;
    ll_opt = eval(t_opt, s2e_opt);
  }
  fit.ratio = std::exp(t_opt);

  double s2e_zero = 0.0;
  const double ll_zero = detail::profile_loglik(s, 0.0, s2e_zero);
  ++fit.evaluations;
  if (ll_zero >= ll_opt) {
    fit.vc = {0.0, s2e_zero, std::nullopt};
    fit.log_likelihood = ll_zero;
    fit.ratio = 0.0;
    fit.boundary = true;
  } else {
    fit.vc = {fit.ratio * s2e_opt, s2e_opt, std::nullopt};
    fit.log_likelihood = ll_opt;
  }
  return fit;
}

/// Closed-form BLUP under the random-intercept structure:
/// v_i = n_i s2v / (n_i s2v + s2e) * mean_i(e). Groups without rows get 0.
inline RandomEffects blup(std::span<const double> e, const Grouping& g, const VarianceComponents& vc) {
  vc.validate();
  if (g.rows() != e.size()) throw ShapeError("residual and area lengths differ");
  const detail::GroupSums s = detail::group_sums(e, g);
  RandomEffects out;
  out.v_hat.assign(g.groups(), 0.0);
  for (std::size_t i = 0; i < g.groups(); ++i) {
    if (s.n[i] == 0.0 || vc.sigma2_v == 0.0) continue;
    const double shrink = s.n[i] * vc.sigma2_v / (s.n[i] * vc.sigma2_v + vc.sigma2_eps);
    out.v_hat[i] = shrink * (s.sum[i] / s.n[i]);
  }
  return out;
}

/// Reference path: v = H Z' V^{-1} e with dense matrices. O(n^3); intended
/// for verification on small problems.
inline RandomEffects blup_matrix_form(std::span<const double> e, const Grouping& g, const VarianceComponents& vc) {
  vc.validate();
  const auto n = static_cast<Eigen::Index>(e.size());
  const auto D = static_cast<Eigen::Index>(g.groups());
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, D);
  for (Eigen::Index j = 0; j < n; ++j) Z(j, static_cast<Eigen::Index>(g.code[static_cast<std::size_t>(j)])) = 1.0;
  const Eigen::MatrixXd H = vc.sigma2_v * Eigen::MatrixXd::Identity(D, D);
  const Eigen::MatrixXd R = vc.sigma2_eps * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd V = Z * H * Z.transpose() + R;
  const Eigen::VectorXd ev = Eigen::Map<const Eigen::VectorXd>(e.data(), n);
  const Eigen::VectorXd v = H * Z.transpose() * V.llt().solve(ev);
  return {std::vector<double>(v.data(), v.data() + v.size())};
}

/// Generalized log-likelihood criterion
///   sum_i (e_i - Z_i v_i)' R_i^{-1} (e_i - Z_i v_i) + v_i' H_i^{-1} v_i + log|H_i| + log|R_i|
/// over groups with data. With s2v = 0 the H terms are dropped and v is
/// taken as 0.
inline double gll(std::span<const double> e, const RandomEffects& v, const VarianceComponents& vc, const Grouping& g) {
  vc.validate();
  if (g.rows() != e.size()) throw ShapeError("residual and area lengths differ");
  if (v.v_hat.size() != g.groups()) throw ShapeError("random effects do not match the area count");
  const bool degenerate = vc.sigma2_v == 0.0;
  std::vector<double> rss(g.groups(), 0.0);
  for (std::size_t j = 0; j < e.size(); ++j) {
    const double r = e[j] - (degenerate ? 0.0 : v.v_hat[g.code[j]]);
    rss[g.code[j]] += r * r;
  }
  const double log_s2e = std::log(vc.sigma2_eps);
  double total = 0.0;
  for (std::size_t i = 0; i < g.groups(); ++i) {
    if (g.counts[i] == 0) continue;
    total += rss[i] / vc.sigma2_eps + static_cast<double>(g.counts[i]) * log_s2e;
    if (!degenerate) total += v.v_hat[i] * v.v_hat[i] / vc.sigma2_v + std::log(vc.sigma2_v);
  }
  return total;
}

}  // namespace merf
