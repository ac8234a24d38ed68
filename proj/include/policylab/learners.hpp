#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "policylab/types.hpp"

namespace policylab {

using json = nlohmann::json;

// A fitted supervised model. Regressors return predictions on the target
// scale; classifiers return P(y = 1 | x). Fitted models are immutable and
// safe for concurrent prediction.
class Model {
 public:
  virtual ~Model() = default;
  virtual Vector predict(const Matrix& X) const = 0;
  virtual std::size_t n_features() const = 0;
  // Short learner family name ("ridge", "gbt", ...), used for congeniality
  // checks and report labels.
  virtual std::string family() const = 0;
  virtual json to_json() const = 0;

 protected:
  void check_width(const Matrix& X) const;
};

using ModelPtr = std::shared_ptr<const Model>;

// Predicts a fixed value regardless of input.
class ConstantModel final : public Model {
 public:
  ConstantModel(double value, std::size_t n_features, std::string family = "mean")
      : value_(value), n_features_(n_features), family_(std::move(family)) {}

  Vector predict(const Matrix& X) const override;
  std::size_t n_features() const override { return n_features_; }
  std::string family() const override { return family_; }
  json to_json() const override;
  double value() const { return value_; }

 private:
  double value_;
  std::size_t n_features_;
  std::string family_;
};

// ---------------------------------------------------------------------------
// Linear models

enum class LinearFamily : std::uint8_t { LeastSquares, Logistic };
enum class Penalty : std::uint8_t { None, L1, L2 };

const char* to_string(LinearFamily f);
const char* to_string(Penalty p);

// Objectives (intercept never penalized):
//   least squares, none/L2:  1/2 ||y - b - Xw||^2 + lambda/2 ||w||^2   (closed form)
//   least squares, L1:       1/(2n) ||y - b - Xw||^2 + lambda ||w||_1  (cyclic coordinate descent)
//   logistic, none/L2:       -loglik + lambda/2 ||w||^2                (damped IRLS)
//   logistic, L1:            -loglik / n + lambda ||w||_1              (proximal Newton, CD inner solver)
struct LinearFitOptions {
  LinearFamily family = LinearFamily::LeastSquares;
  Penalty penalty = Penalty::None;
  double lambda = 0.0;
  bool fit_intercept = true;
  double tolerance = 1e-6;
  int max_iterations = 200;          // IRLS / proximal Newton outer steps
  int max_cd_sweeps = 100000;        // coordinate descent sweeps
};

class LinearModel final : public Model {
 public:
  Vector coefficients;
  double intercept = 0.0;
  LinearFamily link = LinearFamily::LeastSquares;
  Penalty penalty = Penalty::None;
  double lambda = 0.0;
  int iterations = 0;
  std::string label;  // overrides family() when set

  // Affine part b + Xw (the logit for logistic models).
  Vector decision(const Matrix& X) const;
  Vector predict(const Matrix& X) const override;
  std::size_t n_features() const override { return static_cast<std::size_t>(coefficients.size()); }
  std::string family() const override;
  json to_json() const override;
};

// Throws ConvergenceError when an iterative solver exhausts its cap.
LinearModel fit_linear(const Matrix& X, const Vector& y, const LinearFitOptions& options);

// Largest lambda for which the L1 least-squares solution is nonzero.
double lasso_lambda_max(const Matrix& X, const Vector& y);

// ---------------------------------------------------------------------------
// Gradient boosted trees

enum class TreeLoss : std::uint8_t { Squared, Logistic };

struct GbtOptions {
  TreeLoss loss = TreeLoss::Squared;
  int n_trees = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 1;
  double l2_leaf = 0.0;    // added to the hessian sum in gains and leaf values
  double subsample = 1.0;  // row fraction per tree, drawn from the seed
};

// Flat array tree. Internal node k routes x to left[k] when
// x[feature[k]] <= threshold[k]; leaves have feature == -1.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> value;

  double predict_row(const double* x, Eigen::Index stride) const;
  std::size_t leaves() const;
};

class BoostedTreesModel final : public Model {
 public:
  GbtOptions options;
  double base_score = 0.0;  // on the margin scale for logistic loss
  std::vector<RegressionTree> trees;
  std::size_t width = 0;

  // Margin using only the first n_trees trees (prefix ensemble).
  Vector margin(const Matrix& X, std::size_t n_trees) const;
  Vector predict_staged(const Matrix& X, std::size_t n_trees) const;
  Vector predict(const Matrix& X) const override { return predict_staged(X, trees.size()); }
  std::size_t n_features() const override { return width; }
  std::string family() const override { return "gbt"; }
  json to_json() const override;
};

// Greedy exact splits on gradient/hessian statistics. Ties between equally
// good splits go to the lowest feature index, then the lowest threshold.
BoostedTreesModel fit_gbt(const Matrix& X, const Vector& y, const GbtOptions& options, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sigmoid recalibration p = sigmoid(a * logit(base(x)) + b)

class CalibratedClassifier final : public Model {
 public:
  CalibratedClassifier(ModelPtr base, double slope, double offset)
      : base_(std::move(base)), slope_(slope), offset_(offset) {}

  Vector predict(const Matrix& X) const override;
  std::size_t n_features() const override { return base_->n_features(); }
  std::string family() const override { return base_->family(); }
  json to_json() const override;

  const ModelPtr& base() const { return base_; }
  double slope() const { return slope_; }
  double offset() const { return offset_; }

 private:
  ModelPtr base_;
  double slope_;
  double offset_;
};

// Fits (a, b) by logistic regression of y_val on the logit of base scores.
// The slope is floored at a small positive value so the map stays monotone.
CalibratedClassifier calibrate(ModelPtr model, const Matrix& X_val, const std::vector<int>& y_val);

// ---------------------------------------------------------------------------
// Learner menu

enum class LearnerType : std::uint8_t { Mean, Ols, Ridge, Lasso, Logistic, Gbt };

const char* to_string(LearnerType t);
LearnerType learner_type_from_string(const std::string& s);

// Hyperparameters for one entry of the learner menu. The same spec can fit
// a regressor (outcome models) or a classifier (propensity, deferral
// characterization) where the type supports it.
struct LearnerSpec {
  std::string name;
  LearnerType type = LearnerType::Ridge;
  double lambda = 1.0;
  Penalty logistic_penalty = Penalty::L2;
  GbtOptions gbt{};

  ModelPtr fit_regressor(const Matrix& X, const Vector& y, std::uint64_t seed) const;
  ModelPtr fit_classifier(const Matrix& X, const std::vector<int>& y, std::uint64_t seed) const;
  std::string family() const;

  json to_json() const;
  static LearnerSpec from_json(const json& j, const std::string& name);
};

// Versioned model documents. model_from_json accepts every document
// produced by Model::to_json.
inline constexpr int kModelFormatVersion = 1;
ModelPtr model_from_json(const json& j);

double sigmoid(double z);
double logit(double p);

}  // namespace policylab
