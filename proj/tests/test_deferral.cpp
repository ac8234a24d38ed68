#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "policylab/deferral.hpp"
#include "policylab/error.hpp"

using namespace policylab;

namespace {

Dataset covariate_dataset(const Matrix& X) {
  Dataset d;
  d.covariates = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) d.columns.push_back({"x" + std::to_string(j), ColumnKind::Numeric});
  d.treatment.assign(static_cast<std::size_t>(X.rows()), 0);
  d.outcome = Vector::Zero(X.rows());
  return d;
}

}  // namespace

TEST_CASE("overlap clause defers regardless of the interval") {
  const DeferralRule inclusive{{0.1, 0.9}, DeferralMode::Inclusive};
  const DeferralRule conservative{{0.1, 0.9}, DeferralMode::Conservative};
  CHECK(evaluate_deferral(inclusive, 0.05, std::nullopt) == DeferReason::Overlap);
  CHECK(evaluate_deferral(conservative, 0.05, std::make_pair(0.2, 0.7)) == DeferReason::Overlap);
  CHECK(evaluate_deferral(conservative, 0.95, std::make_pair(0.2, 0.7)) == DeferReason::Overlap);
  // Bounds themselves are inside the overlap set.
  CHECK(evaluate_deferral(inclusive, 0.1, std::nullopt) == DeferReason::None);
  CHECK(evaluate_deferral(inclusive, 0.9, std::nullopt) == DeferReason::None);
}

TEST_CASE("interval clause applies only in conservative mode") {
  const DeferralRule inclusive{{0.1, 0.9}, DeferralMode::Inclusive};
  const DeferralRule conservative{{0.1, 0.9}, DeferralMode::Conservative};
  CHECK(evaluate_deferral(conservative, 0.5, std::make_pair(0.2, 0.7)) == DeferReason::None);
  CHECK(evaluate_deferral(conservative, 0.5, std::make_pair(-0.1, 0.3)) == DeferReason::Uncertainty);
  CHECK(evaluate_deferral(inclusive, 0.5, std::make_pair(-0.1, 0.3)) == DeferReason::None);
  CHECK(evaluate_deferral(conservative, 0.5, std::make_pair(0.0, 0.3)) == DeferReason::Uncertainty);
  CHECK_THROWS_AS(evaluate_deferral(conservative, 0.5, std::nullopt), DataError);
}

TEST_CASE("conservative deferral contains inclusive deferral") {
  const Vector e = (fixtures::gaussian_vector(300, 1).array() * 0.25 + 0.5).matrix();
  const Vector point = fixtures::gaussian_vector(300, 2, 0.3);
  CateIntervals iv{point.array() - 0.2, point, point.array() + 0.2};
  const auto inc = apply_deferral({{0.2, 0.8}, DeferralMode::Inclusive}, e, &iv).deferred();
  const auto con = apply_deferral({{0.2, 0.8}, DeferralMode::Conservative}, e, &iv).deferred();
  std::size_t extra = 0;
  for (std::size_t i = 0; i < inc.size(); ++i) {
    if (inc[i]) CHECK(con[i]);
    extra += con[i] && !inc[i];
  }
  CHECK(extra > 0);
}

TEST_CASE("deferral count shrinks as the overlap interval widens") {
  const Vector e = (fixtures::gaussian_vector(200, 3).array() * 0.25 + 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
  std::size_t previous = e.size() + 1;
  for (double w = 0.0; w <= 0.5; w += 0.025) {
    const auto n = apply_deferral({{0.5 - w, 0.5 + w}, DeferralMode::Inclusive}, e, nullptr).count();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("deferral table lists reasons") {
  const Vector e{{0.05, 0.5, 0.5}};
  CateIntervals iv{Vector{{0.1, -0.1, 0.2}}, Vector{{0.2, 0.1, 0.3}}, Vector{{0.3, 0.2, 0.4}}};
  const auto r = apply_deferral({{0.1, 0.9}, DeferralMode::Conservative}, e, &iv);
  const auto t = r.to_table({"a", "b", "c"});
  CHECK(t.rows[0] == std::vector<std::string>{"a", "1", "overlap"});
  CHECK(t.rows[1] == std::vector<std::string>{"b", "1", "uncertainty"});
  CHECK(t.rows[2] == std::vector<std::string>{"c", "0", ""});
  CHECK(r.count() == 2);
}

TEST_CASE("characterization ranks the planted covariate first") {
  const Matrix X = fixtures::gaussian_matrix(500, 6, 11);
  std::vector<bool> labels(500);
  for (int i = 0; i < 500; ++i) labels[static_cast<std::size_t>(i)] = X(i, 3) > 0.0;
  const auto c = characterize_subpop(labels, covariate_dataset(X));
  REQUIRE_FALSE(c.ranking.empty());
  CHECK(c.ranking.front().first == "x3");
  CHECK(c.ranking.front().second > 0.0);
  CHECK(c.summary.n[0] == 500);
  CHECK(c.summary.n[1] + c.summary.n[2] == 500);
  CHECK(c.summary.groups == std::vector<std::string>{"Overall", "Rec", "Def"});
}

TEST_CASE("strong L1 on unrelated labels leaves an empty ranking") {
  const Matrix X = fixtures::gaussian_matrix(300, 4, 12);
  const auto flags = fixtures::bernoulli(300, 0.3, 13);
  std::vector<bool> labels(flags.begin(), flags.end());
  const auto c = characterize_subpop(labels, covariate_dataset(X), 1.0);
  CHECK(c.ranking.empty());
  CHECK(c.coefficients.cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.coefficient_table().rows.empty());
}

TEST_CASE("single-class deferral labels are rejected") {
  const Matrix X = fixtures::gaussian_matrix(20, 2, 1);
  CHECK_THROWS_AS(characterize_subpop(std::vector<bool>(20, false), covariate_dataset(X)), ValidationError);
}
