#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "policylab/error.hpp"
#include "policylab/simulation.hpp"
#include "policylab/stats.hpp"

using namespace policylab;

namespace {

struct Cohort {
  Matrix X;
  std::vector<int> t;
};

// Standardized Gaussian covariates, logistic treatment along the first axis.
Cohort cohort(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double strength = 1.0) {
  Cohort c;
  c.X = fixtures::gaussian_matrix(n, d, seed);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double m = c.X.col(j).mean();
    const double s = std::sqrt((c.X.col(j).array() - m).square().sum() / static_cast<double>(n - 1));
    c.X.col(j) = (c.X.col(j).array() - m) / s;
  }
  const Vector u = fixtures::gaussian_vector(n, seed + 1000);
  c.t.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-strength * (c.X(i, 0) + 0.5 * c.X(i, 1))));
    c.t[static_cast<std::size_t>(i)] = 0.5 * (1.0 + std::erf(u(i) / std::sqrt(2.0))) < p ? 1 : 0;
  }
  return c;
}

double cosine(const Vector& a, const Vector& b) { return a.dot(b) / (a.norm() * b.norm()); }

Policy constant_policy(std::size_t n, Action a) {
  Policy p;
  p.name = "const";
  p.actions.assign(n, a);
  return p;
}

}  // namespace

TEST_CASE("simulated outcome invariants hold across seeds") {
  const auto c = cohort(400, 8, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = simulate_outcomes(c.X, c.t, {}, seed);
    CHECK(s.beta_prop.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.beta_rand.norm() == doctest::Approx(1.0).epsilon(1e-12));
    double mean_abs = 0.0;
    for (Eigen::Index i = 0; i < c.X.rows(); ++i) mean_abs += std::abs(c.X.row(i).dot(s.delta));
    CHECK(std::abs(mean_abs / 400.0 - 0.5) < 1e-9);
    CHECK((s.w1 - (s.delta + s.w0)).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < c.X.rows(); ++i)
      CHECK(s.optimal[static_cast<std::size_t>(i)] == (c.X.row(i).dot(s.delta) < 0.0 ? 1 : 0));
  }
}

TEST_CASE("lambda endpoints align the effect with one direction") {
  const auto c = cohort(300, 6, 2);
  SimulationSpec spec;
  spec.lambda = 1.0;
  const auto prop = simulate_outcomes(c.X, c.t, spec, 5);
  CHECK(cosine(prop.delta, prop.beta_prop) >= 1.0 - 1e-9);
  spec.lambda = 0.0;
  const auto rand = simulate_outcomes(c.X, c.t, spec, 5);
  CHECK(cosine(rand.delta, rand.beta_rand) >= 1.0 - 1e-9);
}

TEST_CASE("beta_prop follows the treatment assignment direction") {
  const auto c = cohort(4000, 5, 3, 1.5);
  const auto s = simulate_outcomes(c.X, c.t, {}, 1);
  const Vector truth = (Vector(5) << 1.0, 0.5, 0.0, 0.0, 0.0).finished();
  CHECK(cosine(s.beta_prop, truth) > 0.98);
}

TEST_CASE("outcome noise has SD noise_factor times the arm SD") {
  const auto c = cohort(20000, 4, 4);
  const auto s = simulate_outcomes(c.X, c.t, {}, 9);
  const Vector e0 = s.y0 - s.mean0;
  const Vector e1 = s.y1 - s.mean1;
  CHECK(stats::sd(stats::view(e0)) == doctest::Approx(1.2 * s.sigma0).epsilon(0.03));
  CHECK(stats::sd(stats::view(e1)) == doctest::Approx(1.2 * s.sigma1).epsilon(0.03));
  const Vector m0 = c.X * s.w0;
  CHECK(s.sigma0 == doctest::Approx(stats::sd(stats::view(m0))).epsilon(1e-12));
}

TEST_CASE("simulation is reproducible bit for bit") {
  const auto c = cohort(200, 5, 5);
  const auto a = simulate_outcomes(c.X, c.t, {}, 77);
  const auto b = simulate_outcomes(c.X, c.t, {}, 77);
  CHECK(a.y0 == b.y0);
  CHECK(a.y1 == b.y1);
  CHECK(a.delta == b.delta);
  const auto other = simulate_outcomes(c.X, c.t, {}, 78);
  CHECK(a.y0 != other.y0);
}

TEST_CASE("simulation rejects invalid specs and single-arm data") {
  const auto c = cohort(50, 3, 6);
  SimulationSpec bad;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(simulate_outcomes(c.X, c.t, bad, 0), ConfigError);
  bad = {};
  bad.effect = 0.0;
  CHECK_THROWS_AS(simulate_outcomes(c.X, c.t, bad, 0), ConfigError);
  CHECK_THROWS_AS(simulate_outcomes(c.X, std::vector<int>(50, 1), {}, 0), DataError);
}

TEST_CASE("true policy value collapses to arm means") {
  const auto c = cohort(300, 4, 7);
  const auto s = simulate_outcomes(c.X, c.t, {}, 3);
  const auto n = c.t.size();
  CHECK(true_policy_value(constant_policy(n, Action::Treat1), s, c.t) == doctest::Approx(s.y1.mean()).epsilon(1e-12));
  CHECK(true_policy_value(constant_policy(n, Action::Treat0), s, c.t) == doctest::Approx(s.y0.mean()).epsilon(1e-12));
  double factual = 0.0;
  for (std::size_t i = 0; i < n; ++i) factual += c.t[i] ? s.y1(static_cast<Eigen::Index>(i)) : s.y0(static_cast<Eigen::Index>(i));
  factual /= static_cast<double>(n);
  CHECK(true_policy_value(constant_policy(n, Action::Defer), s, c.t) == doctest::Approx(factual).epsilon(1e-12));
}

TEST_CASE("optimal policy minimizes the expected value") {
  const auto c = cohort(500, 6, 8);
  const auto s = simulate_outcomes(c.X, c.t, {}, 4);
  const auto n = c.t.size();
  Policy opt;
  for (int a : s.optimal) opt.actions.push_back(a ? Action::Treat1 : Action::Treat0);
  const double v_opt = true_policy_value(opt, s, c.t, true);
  CHECK(v_opt <= true_policy_value(constant_policy(n, Action::Treat0), s, c.t, true));
  CHECK(v_opt <= true_policy_value(constant_policy(n, Action::Treat1), s, c.t, true));
  CHECK(v_opt <= true_policy_value(constant_policy(n, Action::Defer), s, c.t, true));
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    Policy p = opt;
    for (auto& a : p.actions)
      if (rng() % 5 == 0) a = a == Action::Treat1 ? Action::Treat0 : Action::Treat1;
    CHECK(v_opt <= true_policy_value(p, s, c.t, true));
  }
}

TEST_CASE("T-ridge recovers the simulated effect") {
  const auto c = cohort(2000, 10, 9);
  const auto s = simulate_outcomes(c.X, c.t, {}, 12);
  Vector y(2000);
  for (Eigen::Index i = 0; i < 2000; ++i) y(i) = c.t[static_cast<std::size_t>(i)] ? s.y1(i) : s.y0(i);
  const CateFitSpec spec{MetaKind::T, {"ridge", LearnerType::Ridge}};
  const auto model = fit_meta_learner(spec, c.X, c.t, y, nullptr, 0);
  const Vector tau_hat = model.predict(c.X);
  const Vector tau = c.X * s.delta;
  const auto r = stats::pearson(stats::view(tau_hat), stats::view(tau));
  REQUIRE(r);
  CHECK(*r >= 0.8);
}

TEST_CASE("synthetic cohorts are deterministic and factual") {
  const auto a = synthetic_dataset(300, 5, 21);
  const auto b = synthetic_dataset(300, 5, 21);
  CHECK(a.covariates == b.covariates);
  CHECK(a.treatment == b.treatment);
  CHECK(a.outcome == b.outcome);
  CHECK_NOTHROW(a.validate());
  const auto treated = std::accumulate(a.treatment.begin(), a.treatment.end(), 0);
  CHECK(treated > 60);
  CHECK(treated < 240);
  CHECK(a.columns.front().name == "x1");
}

TEST_CASE("with lambda = 1 the effect is monotone in the propensity logit") {
  // Effect and treatment logit share one direction.
  const auto c = cohort(600, 5, 10, 3.0);
  SimulationSpec spec;
  spec.lambda = 1.0;
  const auto s = simulate_outcomes(c.X, c.t, spec, 2);
  const Vector tau = c.X * s.delta;
  const Vector logit = c.X * s.beta_prop;
  const auto k = stats::kendall(stats::view(tau), stats::view(logit));
  REQUIRE(k);
  CHECK(*k == doctest::Approx(1.0));

  // Observed treatment lands near the propensity rule, far from the optimum.
  const Vector e = (logit.array() * 3.0).unaryExpr([](double z) { return sigmoid(z); });
  const auto base = baselines(c.t, e, 0);
  Policy opt;
  for (int a : s.optimal) opt.actions.push_back(a ? Action::Treat1 : Action::Treat0);
  const double v_doc = true_policy_value(base[0], s, c.t, true);
  const double v_prop = true_policy_value(base[2], s, c.t, true);
  const double v_opt = true_policy_value(opt, s, c.t, true);
  CHECK(std::abs(v_doc - v_prop) < 0.25 * std::abs(v_doc - v_opt));
}

TEST_CASE("study reports factual Doctors values and three checks") {
  const auto data = synthetic_dataset(2000, 20, 5);
  std::vector<double> mean(20), sd(20);
  for (Eigen::Index j = 0; j < 20; ++j) {
    const Vector col = data.covariates.col(j);
    mean[static_cast<std::size_t>(j)] = col.mean();
    sd[static_cast<std::size_t>(j)] = stats::sd(stats::view(col));
  }
  const Matrix X = standardize(data.covariates, mean, sd);
  StudyConfig config;
  config.seed = 11;
  const auto report = run_study(X, data.treatment, config);
  CHECK(report.failures == 0);
  const auto* doctors = report.row("Doctors");
  REQUIRE(doctors);
  CHECK(doctors->mean[0] == doctors->mean[2]);
  CHECK(doctors->mean[1] == doctors->mean[2]);
  REQUIRE(report.checks.size() == 3);
  for (const auto& c : report.checks) CHECK_MESSAGE(c.passed, c.name);
  REQUIRE(report.gap_closure);
  REQUIRE(report.dr_truth_pearson);
  MESSAGE("closure=" << *report.gap_closure << " pearson=" << *report.dr_truth_pearson);

  int wins = 0;
  for (const auto& run : report.runs) {
    const auto find = [&](const std::string& name) {
      return run.truth[static_cast<std::size_t>(std::find(run.policies.begin(), run.policies.end(), name) -
                                                run.policies.begin())];
    };
    wins += find("T-ridge") < find("Doctors");
  }
  CHECK(wins >= 4);
  CHECK(report.summary_table().header == std::vector<std::string>{"policy", "IPW", "DR", "True"});
  CHECK(report.scatter_table().rows.size() == 2 * report.rows.size() * 5);
}

TEST_CASE("failing runs are recorded and counted") {
  const auto c = cohort(200, 4, 12);
  StudyConfig config;
  config.runs = 3;
  LearnerSpec bad{"bad", LearnerType::Logistic};
  config.menu = {{MetaKind::T, bad}};
  const auto report = run_study(c.X, c.t, config);
  CHECK(report.failures == 3);
  CHECK(report.rows.empty());
  for (const auto& run : report.runs) CHECK_FALSE(run.error.empty());
}

TEST_CASE("study rejects fewer than two runs") {
  const auto c = cohort(100, 3, 13);
  StudyConfig config;
  config.runs = 1;
  CHECK_THROWS_AS(run_study(c.X, c.t, config), ConfigError);
}
