#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "policylab/error.hpp"
#include "policylab/learners.hpp"

using namespace policylab;

TEST_CASE("ridge without intercept matches the normal equations") {
  const Matrix X = fixtures::gaussian_matrix(60, 4, 1);
  const Vector y = fixtures::gaussian_vector(60, 2);
  for (double lambda : {0.0, 0.5, 3.0}) {
    LinearFitOptions o;
    o.penalty = lambda > 0 ? Penalty::L2 : Penalty::None;
    o.lambda = lambda;
    o.fit_intercept = false;
    const auto m = fit_linear(X, y, o);
    const Matrix A = X.transpose() * X + lambda * Matrix::Identity(4, 4);
    const Vector expected = A.ldlt().solve(X.transpose() * y);
    for (int j = 0; j < 4; ++j) CHECK(m.coefficients(j) == doctest::Approx(expected(j)).epsilon(1e-8));
    CHECK(m.intercept == 0.0);
  }
}

TEST_CASE("ordinary least squares recovers an exact line") {
  Matrix X(5, 1);
  X << 0, 1, 2, 3, 4;
  Vector y = 2.0 * X.col(0);
  y.array() += 1.0;
  const auto m = fit_linear(X, y, {});
  CHECK(m.coefficients(0) == doctest::Approx(2.0));
  CHECK(m.intercept == doctest::Approx(1.0));
}

TEST_CASE("lasso solution satisfies the subgradient conditions") {
  const Matrix X = fixtures::gaussian_matrix(80, 6, 3);
  Vector y = X.col(0) * 1.5 - X.col(2) * 0.7 + 0.3 * fixtures::gaussian_vector(80, 4);
  LinearFitOptions o;
  o.penalty = Penalty::L1;
  o.lambda = 0.1;
  o.fit_intercept = false;
  o.tolerance = 1e-10;
  const auto m = fit_linear(X, y, o);
  const double n = 80.0;
  const Vector grad = X.transpose() * (y - X * m.coefficients) / n;
  for (int j = 0; j < 6; ++j) {
    if (m.coefficients(j) != 0.0)
      CHECK(grad(j) == doctest::Approx(o.lambda * (m.coefficients(j) > 0 ? 1.0 : -1.0)).epsilon(1e-5));
    else
      CHECK(std::abs(grad(j)) <= o.lambda + 1e-5);
  }
}

TEST_CASE("lasso at lambda_max shrinks everything to zero") {
  const Matrix X = fixtures::gaussian_matrix(50, 5, 9);
  const Vector y = fixtures::gaussian_vector(50, 10);
  LinearFitOptions o;
  o.penalty = Penalty::L1;
  o.lambda = lasso_lambda_max(X, y) * 1.0001;
  const auto m = fit_linear(X, y, o);
  CHECK(m.coefficients.cwiseAbs().maxCoeff() == 0.0);
  CHECK(m.intercept == doctest::Approx(y.mean()));
  o.lambda *= 0.5;
  CHECK(fit_linear(X, y, o).coefficients.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("logistic regression gradient vanishes at the optimum") {
  const Matrix X = fixtures::gaussian_matrix(200, 3, 5);
  std::mt19937_64 rng(6);
  Vector y(200);
  for (int i = 0; i < 200; ++i) {
    std::bernoulli_distribution b(sigmoid(0.8 * X(i, 0) - 0.5 * X(i, 1)));
    y(i) = b(rng) ? 1.0 : 0.0;
  }
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L2;
  o.lambda = 0.5;
  const auto m = fit_linear(X, y, o);
  const Vector p = m.predict(X);
  const Vector grad = X.transpose() * (p - y) + o.lambda * m.coefficients;
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::abs((p - y).sum()) < 1e-6);
}

TEST_CASE("L1 logistic matches its optimality conditions") {
  const Matrix X = fixtures::gaussian_matrix(300, 5, 11);
  std::mt19937_64 rng(12);
  Vector y(300);
  for (int i = 0; i < 300; ++i) {
    std::bernoulli_distribution b(sigmoid(1.2 * X(i, 0) + 0.6 * X(i, 3)));
    y(i) = b(rng) ? 1.0 : 0.0;
  }
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L1;
  o.lambda = 0.02;
  o.tolerance = 1e-9;
  const auto m = fit_linear(X, y, o);
  const Vector grad = X.transpose() * (y - m.predict(X)) / 300.0;
  for (int j = 0; j < 5; ++j) {
    if (m.coefficients(j) != 0.0)
      CHECK(grad(j) == doctest::Approx(o.lambda * (m.coefficients(j) > 0 ? 1.0 : -1.0)).epsilon(1e-4));
    else
      CHECK(std::abs(grad(j)) <= o.lambda + 1e-6);
  }
  CHECK(m.coefficients(0) > 0.0);
}

TEST_CASE("separable logistic data without a penalty fails to converge") {
  Matrix X(4, 1);
  X << -2, -1, 1, 2;
  Vector y{{0.0, 0.0, 1.0, 1.0}};
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.max_iterations = 30;
  CHECK_THROWS_AS(fit_linear(X, y, o), ConvergenceError);
}

TEST_CASE("boosted trees on a constant target predict the constant") {
  const Matrix X = fixtures::gaussian_matrix(40, 3, 1);
  const Vector y = Vector::Constant(40, 4.25);
  const auto m = fit_gbt(X, y, {}, 0);
  CHECK((m.predict(X).array() - 4.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("a single depth-one tree finds the step") {
  Matrix X(6, 1);
  X << 1, 2, 3, 4, 5, 6;
  Vector y{{0.0, 0.0, 0.0, 1.0, 1.0, 1.0}};
  GbtOptions o;
  o.n_trees = 1;
  o.max_depth = 1;
  o.learning_rate = 1.0;
  const auto m = fit_gbt(X, y, o, 0);
  REQUIRE(m.trees.size() == 1);
  CHECK(m.trees[0].feature[0] == 0);
  CHECK(m.trees[0].threshold[0] == doctest::Approx(3.5));
  const Vector p = m.predict(X);
  for (int i = 0; i < 6; ++i) CHECK(p(i) == doctest::Approx(y(i)));
}

TEST_CASE("training error is non-increasing in the number of trees") {
  Matrix X(200, 1);
  for (int i = 0; i < 200; ++i) X(i, 0) = -3.0 + 6.0 * i / 199.0;
  const Vector y = X.col(0).array().sin().matrix();
  const auto m = fit_gbt(X, y, {}, 0);
  double previous = INFINITY;
  for (std::size_t t = 0; t <= m.trees.size(); t += 10) {
    const double mse = (m.predict_staged(X, t) - y).squaredNorm();
    CHECK(mse <= previous + 1e-12);
    previous = mse;
  }
  CHECK(previous / 200.0 < 0.01);
}

TEST_CASE("staged prediction of a prefix equals a model fit with that many trees") {
  const Matrix X = fixtures::gaussian_matrix(80, 3, 2);
  const Vector y = fixtures::gaussian_vector(80, 3);
  GbtOptions o;
  o.n_trees = 20;
  const auto full = fit_gbt(X, y, o, 5);
  o.n_trees = 7;
  const auto prefix = fit_gbt(X, y, o, 5);
  CHECK((full.predict_staged(X, 7) - prefix.predict(X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("boosted trees are deterministic given a seed") {
  const Matrix X = fixtures::gaussian_matrix(100, 4, 7);
  const Vector y = fixtures::gaussian_vector(100, 8);
  GbtOptions o;
  o.subsample = 0.7;
  const auto a = fit_gbt(X, y, o, 42);
  const auto b = fit_gbt(X, y, o, 42);
  CHECK(a.predict(X) == b.predict(X));
}

TEST_CASE("logistic boosting produces probabilities") {
  const Matrix X = fixtures::gaussian_matrix(150, 2, 4);
  Vector y(150);
  for (int i = 0; i < 150; ++i) y(i) = X(i, 0) > 0 ? 1.0 : 0.0;
  GbtOptions o;
  o.loss = TreeLoss::Logistic;
  o.n_trees = 50;
  const auto m = fit_gbt(X, y, o, 0);
  const Vector p = m.predict(X);
  CHECK(p.minCoeff() > 0.0);
  CHECK(p.maxCoeff() < 1.0);
  int correct = 0;
  for (int i = 0; i < 150; ++i) correct += (p(i) >= 0.5) == (y(i) == 1.0);
  CHECK(correct == 150);
}

TEST_CASE("calibration of an already calibrated score is close to the identity") {
  // Scores are the true probabilities, so the fitted map should be near a=1, b=0.
  const int n = 20000;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Matrix X(n, 1);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = u(rng);
    std::bernoulli_distribution b(sigmoid(X(i, 0)));
    y[i] = b(rng) ? 1 : 0;
  }
  auto identity = std::make_shared<LinearModel>();
  identity->coefficients = Vector::Ones(1);
  identity->link = LinearFamily::Logistic;
  const auto c = calibrate(identity, X, y);
  CHECK(c.slope() == doctest::Approx(1.0).epsilon(0.05));
  CHECK(std::abs(c.offset()) < 0.05);
}

TEST_CASE("calibration with a single class is rejected") {
  auto model = std::make_shared<ConstantModel>(0.3, 1);
  Matrix X = Matrix::Zero(3, 1);
  CHECK_THROWS_AS(calibrate(model, X, {1, 1, 1}), ValidationError);
}

TEST_CASE("model documents round-trip") {
  const Matrix X = fixtures::gaussian_matrix(60, 3, 21);
  const Vector y = fixtures::gaussian_vector(60, 22);
  std::vector<int> labels(60);
  for (int i = 0; i < 60; ++i) labels[i] = y(i) > 0 ? 1 : 0;

  for (auto type : {LearnerType::Mean, LearnerType::Ols, LearnerType::Ridge, LearnerType::Lasso, LearnerType::Gbt}) {
    LearnerSpec spec;
    spec.type = type;
    spec.lambda = 0.05;
    spec.gbt.n_trees = 10;
    const auto model = spec.fit_regressor(X, y, 1);
    const auto restored = model_from_json(json::parse(model->to_json().dump()));
    CHECK(restored->predict(X) == model->predict(X));
  }
  for (auto type : {LearnerType::Logistic, LearnerType::Gbt}) {
    LearnerSpec spec;
    spec.type = type;
    spec.gbt.n_trees = 10;
    const auto model = spec.fit_classifier(X, labels, 1);
    const auto restored = model_from_json(json::parse(model->to_json().dump()));
    CHECK(restored->predict(X) == model->predict(X));
    const auto calibrated = std::make_shared<CalibratedClassifier>(calibrate(model, X, labels));
    const auto restored_cal = model_from_json(calibrated->to_json());
    CHECK(restored_cal->predict(X) == calibrated->predict(X));
  }
}

TEST_CASE("model documents with the wrong format version are rejected") {
  ConstantModel m(1.0, 2);
  auto doc = m.to_json();
  doc["version"] = kModelFormatVersion + 1;
  CHECK_THROWS(model_from_json(doc));
}

TEST_CASE("prediction with the wrong width is a data error") {
  ConstantModel m(1.0, 2);
  CHECK_THROWS_AS(m.predict(Matrix::Zero(3, 3)), DataError);
}

TEST_CASE("learner specs reject unknown keys") {
  CHECK_THROWS_AS(LearnerSpec::from_json(json{{"type", "ridge"}, {"lamda", 1.0}}, "r"), ConfigError);
  const auto s = LearnerSpec::from_json(json{{"type", "lasso"}, {"lambda", 0.2}}, "l");
  CHECK(s.type == LearnerType::Lasso);
  CHECK(s.lambda == 0.2);
}
