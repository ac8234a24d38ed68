#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "policylab/error.hpp"
#include "policylab/propensity.hpp"
#include "policylab/stats.hpp"

using namespace policylab;

namespace {

Dataset make_dataset(const Matrix& X, const std::vector<int>& t) {
  Dataset d;
  d.covariates = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) d.columns.push_back({"x" + std::to_string(j), ColumnKind::Numeric});
  d.treatment = t;
  d.outcome = Vector::Zero(X.rows());
  d.split.assign(t.size(), Split::Train);
  return d;
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> r;
  for (std::size_t i = lo; i < hi; ++i) r.push_back(i);
  return r;
}

}  // namespace

TEST_CASE("random assignment gives held-out AUROC near one half") {
  const Matrix X = fixtures::gaussian_matrix(3000, 5, 1);
  const auto t = fixtures::bernoulli(3000, 0.5, 2);
  const auto all = make_dataset(X, t);
  const auto train = all.subset(range(0, 1500));
  const auto cal = all.subset(range(1500, 2000));
  const auto test = all.subset(range(1000, 3000));
  for (auto type : {LearnerType::Logistic, LearnerType::Gbt}) {
    PropensityOptions o;
    o.learner.type = type;
    o.learner.gbt.n_trees = 50;
    const auto m = fit_propensity(train, cal, o, 3);
    const Vector s = m.score(test.covariates);
    const auto auc = stats::auroc(stats::view(s), test.treatment);
    REQUIRE(auc);
    CHECK(*auc >= 0.4);
    CHECK(*auc <= 0.6);
  }
}

TEST_CASE("deterministic assignment is flagged") {
  const Matrix X = fixtures::gaussian_matrix(400, 3, 4);
  std::vector<int> t(400);
  for (int i = 0; i < 400; ++i) t[static_cast<std::size_t>(i)] = X(i, 1) > 0.0 ? 1 : 0;
  const auto all = make_dataset(X, t);
  PropensityOptions o;
  o.learner.gbt.n_trees = 30;
  const auto m = fit_propensity(all.subset(range(0, 300)), all.subset(range(300, 400)), o, 1);
  REQUIRE(m.fit_metrics.auroc);
  CHECK(*m.fit_metrics.auroc >= 0.99);
  const Vector s = m.score(X);
  const auto report = overlap_report(stats::view(s), t, m.bounds);
  CHECK(report.flag);
}

TEST_CASE("single-arm training data is rejected") {
  const Matrix X = fixtures::gaussian_matrix(20, 2, 1);
  const auto d = make_dataset(X, std::vector<int>(20, 1));
  CHECK_THROWS_AS(fit_propensity(d, d, {}, 0), DataError);
}

TEST_CASE("scores stay strictly inside the unit interval") {
  const Matrix X = fixtures::gaussian_matrix(200, 2, 8);
  std::vector<int> t(200);
  for (int i = 0; i < 200; ++i) t[static_cast<std::size_t>(i)] = X(i, 0) > 0.0 ? 1 : 0;
  const auto d = make_dataset(X, t);
  PropensityOptions o;
  o.recalibrate = false;
  o.learner.gbt.n_trees = 100;
  o.learner.gbt.learning_rate = 1.0;
  const auto m = fit_propensity(d, d, o, 0);
  const Vector s = m.score(X * 100.0);
  CHECK(s.minCoeff() > 0.0);
  CHECK(s.maxCoeff() < 1.0);
}

TEST_CASE("recalibration preserves the ranking") {
  const Matrix X = fixtures::gaussian_matrix(600, 3, 5);
  std::mt19937_64 rng(6);
  std::vector<int> t(600);
  for (int i = 0; i < 600; ++i) {
    std::bernoulli_distribution b(sigmoid(1.5 * X(i, 0)));
    t[static_cast<std::size_t>(i)] = b(rng) ? 1 : 0;
  }
  const auto all = make_dataset(X, t);
  const auto train = all.subset(range(0, 400));
  const auto cal = all.subset(range(400, 600));
  PropensityOptions raw;
  raw.recalibrate = false;
  raw.learner.gbt.n_trees = 40;
  PropensityOptions recal = raw;
  recal.recalibrate = true;
  const auto a = fit_propensity(train, cal, raw, 9);
  const auto b = fit_propensity(train, cal, recal, 9);
  REQUIRE(a.fit_metrics.auroc);
  REQUIRE(b.fit_metrics.auroc);
  CHECK(*a.fit_metrics.auroc == doctest::Approx(*b.fit_metrics.auroc).epsilon(1e-12));
}

TEST_CASE("fixed bounds pass through") {
  const std::vector<double> s{0.3, 0.5};
  BoundsSpec spec;
  spec.low = 0.21;
  spec.high = 0.9;
  const auto b = select_overlap_bounds(s, spec);
  CHECK(b.low == 0.21);
  CHECK(b.high == 0.9);
  const auto d = select_overlap_bounds(s, BoundsSpec{});
  CHECK(d.low == 0.1);
  CHECK(d.high == 0.9);
}

TEST_CASE("quantile bounds match a sort-and-index oracle") {
  std::vector<double> s;
  for (int i = 1; i <= 99; ++i) s.push_back(i / 100.0);
  std::shuffle(s.begin(), s.end(), std::mt19937_64(1));
  BoundsSpec spec;
  spec.method = BoundsMethod::Quantile;
  spec.low = 0.02;
  spec.high = 0.98;
  const auto b = select_overlap_bounds(s, spec);
  auto sorted = s;
  std::sort(sorted.begin(), sorted.end());
  auto oracle = [&](double q) {
    const double h = (sorted.size() - 1) * q;
    const auto lo = static_cast<std::size_t>(h);
    return sorted[lo] + (h - lo) * (sorted[lo + 1] - sorted[lo]);
  };
  CHECK(b.low == doctest::Approx(oracle(0.02)).epsilon(1e-12));
  CHECK(b.high == doctest::Approx(oracle(0.98)).epsilon(1e-12));
}

TEST_CASE("per-arm quantile bounds take the tighter arm") {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const std::vector<int> t{0, 0, 0, 0, 1, 1, 1, 1};
  BoundsSpec spec;
  spec.method = BoundsMethod::Quantile;
  spec.low = 0.0;
  spec.high = 1.0;
  CHECK_THROWS_AS(select_overlap_bounds(s, spec, std::span<const int>(t)), DataError);
  const std::vector<int> t2{0, 1, 0, 1, 0, 1, 0, 1};
  const auto b = select_overlap_bounds(s, spec, std::span<const int>(t2));
  CHECK(b.low == 0.2);
  CHECK(b.high == 0.7);
}

TEST_CASE("minimum-count bounds keep k units per arm beyond each bound") {
  const std::vector<double> s{0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9, 0.95};
  const std::vector<int> t{0, 0, 1, 0, 1, 0, 1, 1, 0, 1};
  BoundsSpec spec;
  spec.method = BoundsMethod::MinimumCount;
  spec.min_count = 2;
  const auto b = select_overlap_bounds(s, spec, std::span<const int>(t));
  // arm 0: 0.05 0.1 0.3 0.6 0.9; arm 1: 0.2 0.4 0.7 0.8 0.95
  CHECK(b.low == 0.4);
  CHECK(b.high == 0.6);
  for (int arm = 0; arm < 2; ++arm) {
    int below = 0;
    int above = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (t[i] != arm) continue;
      below += s[i] <= b.low;
      above += s[i] >= b.high;
    }
    CHECK(below >= 2);
    CHECK(above >= 2);
  }
}

TEST_CASE("overlap mask is inclusive at both ends") {
  const std::vector<double> s{0.5, 0.21, 0.9, 0.2099999, 0.9000001};
  const auto m = overlap_mask(s, {0.21, 0.9});
  CHECK(m == std::vector<bool>{true, true, true, false, false});
}

TEST_CASE("530 scores with 69 outside the bounds leave 461 inside") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> inside(0.21, 0.9);
  std::uniform_real_distribution<double> low(0.0, 0.2);
  std::vector<double> s;
  for (int i = 0; i < 461; ++i) s.push_back(inside(rng));
  for (int i = 0; i < 69; ++i) s.push_back(i % 2 ? low(rng) : 0.95);
  const auto m = overlap_mask(s, {0.21, 0.9});
  CHECK(std::count(m.begin(), m.end(), true) == 461);
}

TEST_CASE("trimming is nested for nested bounds") {
  const Vector s = (fixtures::gaussian_vector(300, 3).array() * 0.3 + 0.5).cwiseMax(0.0).cwiseMin(1.0);
  for (double a = 0.0; a < 0.5; a += 0.05) {
    for (double b = a + 0.05; b <= 1.0; b += 0.05) {
      const auto inner = overlap_mask(stats::view(s), {a + 0.02, b - 0.02});
      const auto outer = overlap_mask(stats::view(s), {a, b});
      for (std::size_t i = 0; i < inner.size(); ++i)
        if (inner[i]) CHECK(outer[i]);
    }
  }
}

TEST_CASE("histogram counts sum to arm sizes") {
  const Vector s = (fixtures::gaussian_vector(500, 4).array() * 0.2 + 0.5).cwiseMax(0.0).cwiseMin(1.0);
  const auto t = fixtures::bernoulli(500, 0.4, 5);
  const auto r = overlap_report(stats::view(s), t, {0.3, 0.7}, 17);
  for (int arm = 0; arm < 2; ++arm) {
    const auto n = static_cast<std::size_t>(std::count(t.begin(), t.end(), arm));
    const auto& h = r.arms[static_cast<std::size_t>(arm)];
    std::size_t before = 0;
    std::size_t after = 0;
    for (auto c : h.before) before += c;
    for (auto c : h.after) after += c;
    CHECK(before == n);
    CHECK(after == h.inside);
    CHECK(h.inside + h.outside == n);
  }
  CHECK(r.edges.size() == 18);
  CHECK_FALSE(r.flag);
  CHECK(r.histogram_table().rows.size() == 34);
}

TEST_CASE("disjoint arm supports set the flag") {
  const std::vector<double> s{0.1, 0.15, 0.2, 0.8, 0.85, 0.9};
  const std::vector<int> t{0, 0, 0, 1, 1, 1};
  CHECK(overlap_report(s, t, {0.1, 0.9}).flag);
}

TEST_CASE("propensity models round-trip through JSON") {
  const Matrix X = fixtures::gaussian_matrix(200, 2, 3);
  const auto t = fixtures::bernoulli(200, 0.5, 4);
  const auto d = make_dataset(X, t);
  PropensityOptions o;
  o.learner.type = LearnerType::Logistic;
  const auto m = fit_propensity(d, d, o, 0);
  const auto r = PropensityModel::from_json(json::parse(m.to_json().dump()));
  CHECK(r.score(X) == m.score(X));
  CHECK(r.bounds.low == m.bounds.low);
}
