#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "policylab/error.hpp"
#include "policylab/policy_eval.hpp"

using namespace policylab;

namespace {

Policy from_actions(std::string name, std::vector<Action> actions) {
  Policy p;
  p.name = std::move(name);
  p.actions = std::move(actions);
  return p;
}

// Rows (t, y, p*, pi): (1,2,.5,1) (0,4,.5,1) (1,6,.8,1) (0,0,.5,0).
EvaluationData four_rows() {
  EvaluationData d;
  d.t = {1, 0, 1, 0};
  d.y = Vector{{2.0, 4.0, 6.0, 0.0}};
  d.p_star = Vector{{0.5, 0.5, 0.8, 0.5}};
  return d;
}

Policy four_row_policy() {
  return from_actions("pi", {Action::Treat1, Action::Treat1, Action::Treat1, Action::Treat0});
}

double plain_mean(const Vector& v) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += v(i);
  return s / static_cast<double>(v.size());
}

struct Randomized {
  EvaluationData data;
  Vector y0;
  Vector y1;
};

Randomized randomized(int n, std::uint64_t seed) {
  Randomized r;
  const Matrix X = fixtures::gaussian_matrix(n, 2, seed);
  const Vector e0 = fixtures::gaussian_vector(n, seed + 1);
  const Vector e1 = fixtures::gaussian_vector(n, seed + 2);
  r.y0 = X.col(0) + e0;
  r.y1 = (X.col(0) + 0.5 * X.col(1) + e1).array() + 0.3;
  r.data.t = fixtures::bernoulli(static_cast<std::size_t>(n), 0.5, seed + 3);
  r.data.y.resize(n);
  for (int i = 0; i < n; ++i) r.data.y(i) = r.data.t[static_cast<std::size_t>(i)] ? r.y1(i) : r.y0(i);
  r.data.p_star = Vector::Constant(n, 0.5);
  r.data.mu0 = X.col(0);
  r.data.mu1 = Vector(X.col(0) + 0.5 * X.col(1)).array() + 0.3;
  r.data.plug_in = "oracle";
  return r;
}

}  // namespace

TEST_CASE("psi is inclusive at the threshold and flips for lower-better") {
  const Vector tau{{0.0, -0.3, 0.4}};
  const auto hb = build_policy("hb", tau, {0.0, Direction::HigherBetter});
  CHECK(hb.actions == std::vector<Action>{Action::Treat1, Action::Treat0, Action::Treat1});
  const auto lb = build_policy("lb", tau, {0.0, Direction::LowerBetter});
  CHECK(lb.actions == std::vector<Action>{Action::Treat1, Action::Treat1, Action::Treat0});
  const std::vector<bool> defer{false, true, false};
  const auto d = build_policy("d", tau, {}, &defer);
  CHECK(d.actions[1] == Action::Defer);
}

TEST_CASE("positive rescaling of the effect leaves recommendations unchanged") {
  const Vector tau = fixtures::gaussian_vector(200, 1);
  for (auto dir : {Direction::HigherBetter, Direction::LowerBetter}) {
    const auto a = build_policy("a", tau, {0.0, dir});
    const auto b = build_policy("b", Vector(3.7 * tau), {0.0, dir});
    CHECK(a.actions == b.actions);
  }
}

TEST_CASE("IPW on the four-row hand fixture") {
  const auto v = value_ipw(four_row_policy(), four_rows());
  CHECK(v.value == doctest::Approx(46.0 / 21.0).epsilon(1e-12));
  CHECK(std::abs(v.value - (2.0 * 2.0 + 1.25 * 6.0 + 2.0 * 0.0) / 5.25) < 1e-9);
  CHECK(v.weight_sum == doctest::Approx(5.25));
}

TEST_CASE("DR on the four-row hand fixture") {
  auto d = four_rows();
  // Plug-in constant 1 for every (x, pi(x)).
  d.mu0 = Vector::Constant(4, 1.0);
  d.mu1 = Vector::Constant(4, 1.0);
  d.plug_in = "const";
  // residual term (2*1 + 1.25*5 + 2*(-1)) / 5.25 = 25/21, plus plug-in mean 1
  const auto v = value_dr(four_row_policy(), d);
  CHECK(std::abs(v.value - 46.0 / 21.0) < 1e-9);
  CHECK(v.plug_in == "const");

  // Row-varying plug-in f(x, pi(x)) = 1, 3, 2, 0.5:
  // (2*1 + 1.25*4 + 2*(-0.5)) / 5.25 + 6.5/4 = 155/56
  d.mu1 = Vector{{1.0, 3.0, 2.0, 99.0}};
  d.mu0 = Vector{{99.0, 99.0, 99.0, 0.5}};
  CHECK(std::abs(value_dr(four_row_policy(), d).value - 155.0 / 56.0) < 1e-9);
}

TEST_CASE("all-deferred and factual policies evaluate to the outcome mean") {
  auto d = four_rows();
  d.mu0 = Vector::Zero(4);
  d.mu1 = Vector::Zero(4);
  const auto all_defer = from_actions("defer", std::vector<Action>(4, Action::Defer));
  CHECK(value_ipw(all_defer, d).value == plain_mean(d.y));
  CHECK(value_dr(all_defer, d).value == plain_mean(d.y));
  auto doctors = from_actions("Doctors", {Action::Treat1, Action::Treat0, Action::Treat1, Action::Treat0});
  doctors.factual = true;
  CHECK(value_ipw(doctors, d).value == plain_mean(d.y));
  CHECK(value_dr(doctors, d).value == plain_mean(d.y));
}

TEST_CASE("observed-treatment policy with constant p* recovers the mean") {
  auto d = four_rows();
  d.p_star = Vector::Constant(4, 0.5);
  const auto observed = from_actions("obs", {Action::Treat1, Action::Treat0, Action::Treat1, Action::Treat0});
  CHECK(value_ipw(observed, d).value == doctest::Approx(plain_mean(d.y)));
  // Plug-in equal to y on matched rows: residual term vanishes.
  d.mu1 = d.y;
  d.mu0 = d.y;
  CHECK(value_dr(observed, d).value == doctest::Approx(plain_mean(d.y)));
}

TEST_CASE("DR with a zero plug-in equals IPW exactly") {
  auto r = randomized(300, 5);
  r.data.mu0 = Vector::Zero(300);
  r.data.mu1 = Vector::Zero(300);
  const Vector tau = fixtures::gaussian_vector(300, 9);
  std::vector<bool> defer(300, false);
  for (std::size_t i = 0; i < 300; i += 7) defer[i] = true;
  for (const auto& p : {build_policy("p", tau, {}), build_policy("q", tau, {}, &defer)})
    CHECK(value_dr(p, r.data).value == value_ipw(p, r.data).value);
}

TEST_CASE("shifting outcomes shifts every value by the same constant") {
  const auto r = randomized(200, 6);
  const Vector tau = fixtures::gaussian_vector(200, 10);
  std::vector<bool> defer(200, false);
  for (std::size_t i = 0; i < 200; i += 5) defer[i] = true;
  auto policies = baselines(r.data.t, Vector::Constant(200, 0.4), 1);
  policies.push_back(build_policy("p", tau, {}, &defer));
  auto shifted = r.data;
  shifted.y.array() += 2.5;
  for (const auto& p : policies) {
    CHECK(std::abs(value_ipw(p, shifted).value - value_ipw(p, r.data).value - 2.5) < 1e-9);
    CHECK(std::abs(value_dr(p, shifted).value - value_dr(p, r.data).value - 2.5) < 1e-9);
  }
}

TEST_CASE("deferred rows mix in by their share") {
  auto d = four_rows();
  auto p = four_row_policy();
  p.actions[1] = Action::Defer;  // row 2 has y = 4 and was unmatched anyway
  const double expected = 0.75 * (46.0 / 21.0) + 0.25 * 4.0;
  CHECK(std::abs(value_ipw(p, d).value - expected) < 1e-12);
}

TEST_CASE("no matched units is an estimation error") {
  auto d = four_rows();
  const auto p = from_actions("none", {Action::Treat0, Action::Treat1, Action::Treat0, Action::Treat1});
  CHECK_THROWS_AS(value_ipw(p, d), EstimationError);
}

TEST_CASE("p* outside (0,1) is rejected") {
  auto d = four_rows();
  d.p_star(2) = 1.0;
  CHECK_THROWS_AS(value_ipw(four_row_policy(), d), ValidationError);
}

TEST_CASE("Treat-all-1 IPW agrees with the treated potential-outcome mean") {
  const auto r = randomized(4000, 7);
  const auto pols = baselines(r.data.t, r.data.p_star, 3);
  const auto& all1 = pols[4];
  REQUIRE(all1.name == "Treat-all-1");
  const double v = value_ipw(all1, r.data).value;
  std::vector<double> treated;
  for (std::size_t i = 0; i < r.data.rows(); ++i)
    if (r.data.t[i] == 1) treated.push_back(r.data.y(static_cast<Eigen::Index>(i)));
  double m = std::accumulate(treated.begin(), treated.end(), 0.0) / treated.size();
  double ss = 0.0;
  for (double x : treated) ss += (x - m) * (x - m);
  const double se = std::sqrt(ss / (treated.size() - 1) / treated.size());
  CHECK(std::abs(v - r.y1.mean()) <= 3.0 * se);
}

TEST_CASE("baselines") {
  const std::vector<int> t{1, 0, 1, 1, 0, 0, 1, 0};
  const Vector e{{0.6, 0.4, 0.51, 0.5, 0.2, 0.9, 0.7, 0.1}};
  const auto a = baselines(t, e, 42);
  const auto b = baselines(t, e, 42);
  REQUIRE(a.size() == 5);
  CHECK(a[0].name == "Doctors");
  CHECK(a[0].factual);
  CHECK(a[1].actions == b[1].actions);
  CHECK(a[2].actions == std::vector<Action>{Action::Treat1, Action::Treat0, Action::Treat1, Action::Treat0,
                                            Action::Treat0, Action::Treat1, Action::Treat1, Action::Treat0});
  CHECK(a[3].count(Action::Treat0) == 8);
  CHECK(a[4].count(Action::Treat1) == 8);
}

TEST_CASE("random baseline treats the observed share on average") {
  const auto t = fixtures::bernoulli(5000, 0.3, 1);
  const auto p = baselines(t, Vector::Constant(5000, 0.5), 8)[1];
  const double share = std::count(t.begin(), t.end(), 1) / 5000.0;
  CHECK(std::abs(p.treated_fraction() - share) < 0.03);
}

TEST_CASE("tournament counting identities") {
  const auto r = randomized(300, 11);
  auto policies = baselines(r.data.t, Vector::Constant(300, 0.4), 2);
  policies.push_back(build_policy("copy", Vector::Constant(300, 1.0), {}));  // same as Treat-all-1
  const int B = 50;
  const auto tour = bootstrap_tournament(policies, r.data, {Estimator::IPW, Estimator::DR}, B, 3, Direction::HigherBetter);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& w = tour.wins[e];
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      CHECK(w(i, i) == 0);
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (i == j) continue;
        CHECK(w(i, j) + w(j, i) + tour.skipped[e](i, j) <= B);
      }
    }
    // Identical policies never beat each other.
    CHECK(w(4, 5) == 0);
    CHECK(w(5, 4) == 0);
    for (std::size_t p = 0; p < policies.size(); ++p) {
      CHECK(tour.estimates[e][p].bootstrap.size() == static_cast<std::size_t>(B));
      CHECK(tour.estimates[e][p].value ==
            policy_value(policies[p], r.data, tour.estimators[e]));
    }
  }
  CHECK(tour.wins_table(0).rows.size() == policies.size());
  CHECK(tour.wins_table(0).header.size() == policies.size() + 1);
  CHECK(tour.distribution_table(1).rows.size() == policies.size() * B);
}

TEST_CASE("tournament results do not depend on the thread count") {
  const auto r = randomized(200, 12);
  const auto policies = baselines(r.data.t, Vector::Constant(200, 0.6), 2);
  const auto a = bootstrap_tournament(policies, r.data, {Estimator::DR}, 20, 4, Direction::LowerBetter, 1);
  const auto b = bootstrap_tournament(policies, r.data, {Estimator::DR}, 20, 4, Direction::LowerBetter, 3);
  CHECK(a.wins[0] == b.wins[0]);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("distribution summary") {
  const auto s = summarize_distribution({4.0, 1.0, NAN, 3.0, 2.0});
  CHECK(s.n == 4);
  CHECK(s.mean == 2.5);
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
  CHECK(s.median == 2.5);
  CHECK(s.q25 == doctest::Approx(1.75));
}

TEST_CASE("rank curve endpoints coincide with treat-all policies") {
  const auto r = randomized(250, 13);
  const Vector tau = fixtures::gaussian_vector(250, 14);
  const auto pols = baselines(r.data.t, r.data.p_star, 0);
  for (auto est : {Estimator::IPW, Estimator::DR}) {
    for (auto dir : {Direction::HigherBetter, Direction::LowerBetter}) {
      const auto curve =
          rank_curve(tau, {0.0, dir}, [&](const Policy& p) { return policy_value(p, r.data, est); }, 0.1);
      REQUIRE(curve.size() == 11);
      CHECK(curve.back().q == 1.0);
      CHECK(curve.back().treated_fraction == 0.0);
      CHECK(*curve.back().value == policy_value(pols[3], r.data, est));
      CHECK(curve.front().treated_fraction == 1.0);
      CHECK(*curve.front().value == policy_value(pols[4], r.data, est));
      for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].treated_fraction <= curve[k - 1].treated_fraction);
    }
  }
  CHECK(rank_curve_table(rank_curve(tau, {}, [](const Policy&) { return 0.0; }, 0.3)).rows.size() == 5);
}

TEST_CASE("rank curve with the true effect peaks at the optimal treated share") {
  const auto r = randomized(2000, 15);
  const Vector tau = r.y1 - r.y0;
  auto true_value = [&](const Policy& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      s += p.actions[i] == Action::Treat1 ? r.y1(static_cast<Eigen::Index>(i)) : r.y0(static_cast<Eigen::Index>(i));
    return s / static_cast<double>(p.size());
  };
  const double delta = 0.05;
  const auto curve = rank_curve(tau, {}, true_value, delta);
  const auto best = std::max_element(curve.begin(), curve.end(),
                                     [](const RankPoint& a, const RankPoint& b) { return *a.value < *b.value; });
  const double optimal_share = (tau.array() > 0.0).cast<double>().mean();
  CHECK(std::abs(best->treated_fraction - optimal_share) <= delta + 1e-9);
}

TEST_CASE("outcome tree for the Doctors policy") {
  const std::vector<int> t{1, 0, 1, 0, 0};
  const Vector y{{1.0, 2.0, 3.0, 4.0, 6.0}};
  const auto doctors = baselines(t, Vector::Constant(5, 0.5), 0)[0];
  const auto tree = outcome_tree(doctors, y, t);
  CHECK(leaf_total(tree) == 5);
  REQUIRE(tree.children.size() == 2);
  const auto& arm0 = tree.children[0];
  CHECK(arm0.children[0].n == 3);
  CHECK(*arm0.children[0].mean == doctest::Approx(4.0));
  CHECK(*arm0.children[0].sem == doctest::Approx(2.0 / std::sqrt(3.0)));
  CHECK(arm0.children[1].n == 0);
  CHECK_FALSE(arm0.children[1].mean.has_value());
  CHECK(*tree.children[1].children[0].mean == doctest::Approx(2.0));
}

TEST_CASE("outcome tree for an all-defer policy") {
  const std::vector<int> t{1, 0, 1, 0};
  const Vector y{{1.0, 2.0, 3.0, 4.0}};
  const auto p = from_actions("defer", std::vector<Action>(4, Action::Defer));
  const auto tree = outcome_tree(p, y, t);
  for (const auto& arm : tree.children) {
    CHECK(arm.children[0].n == 0);
    CHECK(arm.children[1].n == 0);
    CHECK(arm.children[2].n == arm.n);
    CHECK(*arm.children[2].mean == *arm.mean);
  }
  CHECK(leaf_total(tree) == 4);
  CHECK(tree.to_json()["children"].size() == 2);
}

TEST_CASE("return-to-baseline transform") {
  CHECK(*rtb_transform(2.0, 1.0, 1.0) == 1.0);
  CHECK(*rtb_transform(2.0, 2.0, 1.0) == 0.0);
  CHECK(*rtb_transform(2.0, 1.5, 1.0) == 0.5);
  CHECK_FALSE(rtb_transform(1.0, 0.5, 1.0).has_value());
}

TEST_CASE("congeniality risk when families match") {
  auto p = from_actions("T-ridge", {});
  p.family = "ridge";
  CHECK(congeniality_risk(p, "ridge"));
  CHECK_FALSE(congeniality_risk(p, "gbt"));
  p.family.clear();
  CHECK_FALSE(congeniality_risk(p, ""));
}

TEST_CASE("evaluation propensity is clipped") {
  const Matrix X = fixtures::gaussian_matrix(200, 2, 3);
  std::vector<int> t(200);
  for (int i = 0; i < 200; ++i) t[static_cast<std::size_t>(i)] = X(i, 0) > 0 ? 1 : 0;
  const Vector p = fit_p_star(X, t, 1e-3);
  CHECK(p.minCoeff() >= 0.01);
  CHECK(p.maxCoeff() <= 0.99);
  CHECK(p.minCoeff() == 0.01);
}
