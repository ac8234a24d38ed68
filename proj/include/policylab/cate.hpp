#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "policylab/decision.hpp"
#include "policylab/learners.hpp"
#include "policylab/propensity.hpp"
#include "policylab/table.hpp"

namespace policylab {

enum class MetaKind : std::uint8_t { S, T, X };

const char* to_string(MetaKind k);
MetaKind meta_kind_from_string(const std::string& s);

// Recipe for one meta-learner. The same spec is refit on every bootstrap
// replicate.
struct CateFitSpec {
  MetaKind kind = MetaKind::T;
  LearnerSpec learner;
  std::optional<double> x_weight;  // constant g(x) for the X-learner instead of e(x)

  std::string name() const;  // e.g. "T-ridge"
};

// A fitted meta-learner. Immutable; predict is deterministic.
class CateModel {
 public:
  MetaKind kind = MetaKind::T;
  std::string name;
  std::string learner_family;

  ModelPtr f;            // S: outcome model on [x, t]
  ModelPtr mu0, mu1;     // T and X: per-arm outcome models
  ModelPtr tau0, tau1;   // X: models of the imputed effects on controls / treated
  ModelPtr weight;       // X: propensity scorer used as g(x)
  std::optional<double> weight_constant;

  // Sorted training residuals y - mu_t(x) per arm t.
  std::array<std::vector<double>, 2> residuals;

  Vector predict(const Matrix& X) const;
  // Plug-in outcome prediction for arm t: f(x, t) for S, mu_t(x) otherwise.
  Vector predict_outcome(const Matrix& X, int arm) const;
  std::size_t n_features() const;

  nlohmann::json to_json() const;
  static CateModel from_json(const nlohmann::json& j);
};

// X-kind requires a propensity model (unless spec.x_weight is set).
CateModel fit_meta_learner(const CateFitSpec& spec, const Matrix& X, const std::vector<int>& treatment,
                           const Vector& y, const PropensityModel* propensity, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Uncertainty

// alpha_stat: coverage of the percentile interval (0 collapses it to the
// point estimate). lambda: marginal sensitivity bound, >= 1.
struct UncertaintySpec {
  double alpha_stat = 0.95;
  double lambda = 1.0;
  int bootstrap = 200;

  nlohmann::json to_json() const;
  void validate() const;
};

struct CateIntervals {
  Vector lower;
  Vector point;
  Vector upper;

  std::size_t size() const { return static_cast<std::size_t>(point.size()); }
  bool excludes_zero(std::size_t i) const;
};

// Weighted mean of x with weight lambda on the `top` largest values and
// 1/lambda on the rest, maximized over the split point (sharp upper bound
// under the marginal sensitivity model).
double tilted_mean_upper(std::vector<double> x, double lambda);
double tilted_mean_lower(std::vector<double> x, double lambda);

// Shifts of the mean outcome of one arm allowed at sensitivity lambda.
struct ArmShift {
  double up = 0.0;
  double down = 0.0;
};
ArmShift arm_shift(const std::vector<double>& residuals, double lambda);

// Point predictions of the meta-learner refit on `replicates` arm-stratified
// bootstrap resamples of the training data; column b is replicate b.
// Replicate b draws from derived_engine(seed, b), so results do not depend on
// the thread count.
Matrix bootstrap_cate(const CateFitSpec& spec, const Matrix& X, const std::vector<int>& treatment, const Vector& y,
                      const PropensityModel* propensity, const Matrix& X_query, int replicates, std::uint64_t seed,
                      unsigned threads = 0);

// Union of the percentile interval over `draws` and the causal interval
// [tau - down1 - up0, tau + up1 + down0], always containing the point.
CateIntervals cate_intervals(const Vector& point, const Matrix* draws,
                             const std::array<std::vector<double>, 2>& residuals, const UncertaintySpec& spec);

CateIntervals uncertainty_interval(const CateFitSpec& spec, const CateModel& model, const Matrix& X,
                                   const std::vector<int>& treatment, const Vector& y,
                                   const PropensityModel* propensity, const Matrix& X_query,
                                   const UncertaintySpec& theta, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Ensembles

enum class EnsembleMode : std::uint8_t { Average, Majority, Consensus };

const char* to_string(EnsembleMode m);
EnsembleMode ensemble_mode_from_string(const std::string& s);

// Average returns the mean effect. Majority and consensus vote with psi and
// return a pseudo-effect that psi maps to the winning decision; ties
// (majority) and disagreement (consensus) set defer.
struct EnsembleScore {
  Vector effect;
  std::vector<bool> defer;
};

EnsembleScore ensemble_cate(const std::vector<Vector>& effects, EnsembleMode mode, const DecisionRule& rule = {});

// ---------------------------------------------------------------------------
// Diagnostics

struct CalibrationSegment {
  std::size_t count = 0;
  double mean_effect = 0.0;
  std::optional<double> aipw;     // absent when the segment lacks an arm
  std::optional<double> aipw_se;
};

// Rows sorted by effect into K contiguous equal-count segments; AIPW ATE per
// segment from held-out outcome predictions mu0, mu1 and propensity e.
std::vector<CalibrationSegment> cate_calibration_curve(const Vector& effect, const Vector& y,
                                                       const std::vector<int>& treatment, const Vector& e,
                                                       const Vector& mu0, const Vector& mu1, int segments);
Table calibration_table(const std::vector<CalibrationSegment>& segments);

struct CateDiagnostics {
  std::vector<std::string> names;
  Matrix pearson;   // NaN where undefined
  Matrix kendall;
  Matrix spearman;
  std::vector<double> ate;  // mean effect per model

  Table correlation_table(const Matrix& m) const;
  Table ate_table() const;
  nlohmann::json to_json() const;
};

CateDiagnostics cate_diagnostics(const std::vector<std::string>& names, const std::vector<Vector>& effects);

}  // namespace policylab
