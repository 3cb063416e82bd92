#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"

using namespace merf;

namespace {

SimResult one_method(std::vector<std::vector<double>> est, std::vector<std::vector<double>> truth,
                     std::vector<std::vector<double>> mse = {}) {
  SimResult r;
  const std::size_t D = est.front().size();
  for (std::size_t i = 0; i < D; ++i) {
    r.areas.push_back("d" + std::to_string(i));
    r.in_sample.push_back(i % 2 == 0);
    r.n.push_back(i % 2 == 0 ? 4 : 0);
  }
  r.replications = est.size();
  MethodRuns m;
  m.method = "m";
  for (std::size_t k = 0; k < est.size(); ++k) {
    m.replication.push_back(k);
    m.converged.push_back(1);
    m.iterations.push_back(1);
  }
  m.estimate = std::move(est);
  m.truth = std::move(truth);
  m.mse = std::move(mse);
  r.methods.push_back(std::move(m));
  return r;
}

}  // namespace

TEST_CASE("perfect estimates give zero bias and error") {
  const auto r = one_method({{5, 6}, {7, 8}}, {{5, 6}, {7, 8}});
  const auto t = compute_metrics(r.methods[0], r);
  for (const auto& a : t.areas) {
    CHECK(*a.rb == 0.0);
    CHECK(*a.rrmse == 0.0);
    CHECK(*a.rmse_emp == 0.0);
    CHECK_FALSE(a.rb_rmse);
  }
}

TEST_CASE("single replication with estimate 110 and truth 100") {
  const auto r = one_method({{110}}, {{100}});
  const auto t = compute_metrics(r.methods[0], r);
  CHECK(*t.areas[0].rb == Catch::Approx(0.10).epsilon(1e-15));
  CHECK(*t.areas[0].rrmse == Catch::Approx(0.10).epsilon(1e-15));
  CHECK(*t.areas[0].rmse_emp == 10.0);
}

TEST_CASE("metric formulas equal a brute-force recomputation") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(50.0, 150.0), s(1.0, 400.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t D = 3 + trial % 4, M = 4 + trial % 3;
    std::vector<std::vector<double>> est(M, std::vector<double>(D)), truth = est, mse = est;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < D; ++i) {
        truth[m][i] = u(rng);
        est[m][i] = truth[m][i] + (u(rng) - 100.0) / 5.0;
        mse[m][i] = s(rng);
      }
    const auto expected = oracle::metrics(est, truth, mse);
    const auto r = one_method(est, truth, mse);
    const auto t = compute_metrics(r.methods[0], r);
    for (std::size_t i = 0; i < D; ++i) {
      const auto& a = t.areas[i];
      const auto& e = expected[i];
      CHECK(*a.rb == Catch::Approx(e.rb).epsilon(1e-12).margin(1e-15));
      CHECK(*a.rrmse == Catch::Approx(e.rrmse).epsilon(1e-12));
      CHECK(*a.rmse_emp == Catch::Approx(e.rmse_emp).epsilon(1e-12));
      CHECK(*a.rb_rmse == Catch::Approx(e.rb_rmse).epsilon(1e-12).margin(1e-15));
      CHECK(*a.rrmse_rmse == Catch::Approx(e.rrmse_rmse).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero true means leave RB undefined with a warning") {
  const auto r = one_method({{1, 2}, {3, 4}}, {{0, 2}, {1, 4}});
  support::CapturedWarnings warnings;
  const auto t = compute_metrics(r.methods[0], r);
  CHECK_FALSE(t.areas[0].rb);
  CHECK(t.areas[1].rb);
  CHECK(warnings.contains("zero true mean"));
  CHECK(t.summary(Metric::rb).areas == 1);
}

TEST_CASE("summaries are restricted to the requested subset") {
  const auto r = one_method({{110, 90, 100, 120}}, {{100, 100, 100, 100}});
  const auto t = compute_metrics(r.methods[0], r);
  const auto all = t.summary(Metric::rb);
  CHECK(all.areas == 4);
  CHECK(all.mean == Catch::Approx(0.05));
  CHECK(all.median == Catch::Approx(0.05));
  const auto in = t.summary(Metric::rb, AreaSubset::in_sample);
  CHECK(in.areas == 2);
  CHECK(in.mean == Catch::Approx(0.05));
  const auto out = t.summary(Metric::rrmse, AreaSubset::out_of_sample);
  CHECK(out.mean == Catch::Approx(0.15));
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(std::isnan(median({})));
}

TEST_CASE("tidy and metric CSV layouts") {
  const auto r = one_method({{110, 90}}, {{100, 100}}, {{4, 9}});
  std::ostringstream tidy;
  write_tidy_csv(tidy, r);
  CHECK(tidy.str() ==
        "replication,method,area,in_sample,estimate,truth,mse_hat\n"
        "0,m,d0,1,110,100,4\n"
        "0,m,d1,0,90,100,9\n");
  std::ostringstream metric;
  write_metric_csv(metric, compute_metrics(r));
  const auto table = support::table(metric.str());
  CHECK(table.header.size() == 10);
  CHECK(table.rows.size() == 2 + 3 * 2);
  CHECK(table.rows[0][5] == "0.1");
  CHECK(table.rows[2][1] == "mean");
  CHECK(table.rows[2][2] == "all");
  CHECK_THROWS_AS(r.method("other"), ConfigError);
}
