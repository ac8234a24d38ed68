#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "policylab/cate.hpp"
#include "policylab/ingest.hpp"
#include "policylab/policy_eval.hpp"
#include "policylab/table.hpp"

namespace policylab {

// lambda weights the propensity direction in the effect vector; effect is
// the target mean |x . delta|; noise_factor scales each arm's outcome SD.
struct SimulationSpec {
  double lambda = 0.5;
  double effect = 0.5;
  double noise_factor = 1.2;
  double propensity_l2 = 1.0;  // L2 strength of the logistic fit for beta_prop

  void validate() const;
  nlohmann::json to_json() const;
};

struct SimulatedOutcomes {
  Vector y0;
  Vector y1;
  Vector mean0;  // X w0, noise-free
  Vector mean1;  // X w1
  Vector delta;
  Vector w0;
  Vector w1;
  double sigma0 = 0.0;
  double sigma1 = 0.0;
  Vector beta_prop;
  Vector beta_rand;
  std::vector<int> optimal;  // 1 iff delta . x < 0 (lower outcomes are better)
};

// X must be standardized. Randomness is drawn in a fixed order (beta_rand,
// w0, noise for arm 0, noise for arm 1) from a single engine seeded by seed.
SimulatedOutcomes simulate_outcomes(const Matrix& X, const std::vector<int>& treatment, const SimulationSpec& spec,
                                    std::uint64_t seed);

// Mean of Y^{pi(x)} over rows; deferred rows take Y^{t}. With expected set,
// the noise-free means X w_t are used instead of the realized outcomes.
double true_policy_value(const Policy& policy, const SimulatedOutcomes& outcomes, const std::vector<int>& treatment,
                         bool expected = false, const std::vector<std::size_t>* rows = nullptr);

// Gaussian covariates x_j ~ N(0, 1) and logistic treatment with
// P(T = 1 | x) = sigmoid(strength * u . x) for a random unit vector u.
// The outcome column holds the simulated factual outcome for `sim`.
Dataset synthetic_dataset(std::size_t n, std::size_t d, std::uint64_t seed, double propensity_strength = 1.0,
                          const SimulationSpec& sim = {});

struct StudyConfig {
  SimulationSpec sim;
  int runs = 5;
  double eval_fraction = 0.5;  // held-out share for policy values
  std::vector<CateFitSpec> menu;
  std::vector<EnsembleMode> ensembles{EnsembleMode::Average, EnsembleMode::Majority, EnsembleMode::Consensus};
  std::vector<Estimator> estimators{Estimator::IPW, Estimator::DR};
  double p_star_lambda = 1.0;
  double p_star_low = 0.01;
  double p_star_high = 0.99;
  LearnerSpec plug_in{"ridge", LearnerType::Ridge};
  std::string primary = "T-ridge";
  std::uint64_t seed = 0;
  unsigned threads = 0;

  // T-gbt, T-ridge, T-lasso
  static std::vector<CateFitSpec> default_menu();
  nlohmann::json to_json() const;
};

struct StudyRun {
  int index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<std::string> policies;
  std::vector<double> ipw;
  std::vector<double> dr;
  std::vector<double> truth;
  std::vector<double> expected_truth;
};

struct StudyCheck {
  std::string name;
  bool passed = false;
  double observed = 0.0;
  double tolerance = 0.0;
};

struct StudyRow {
  std::string policy;
  std::array<double, 3> mean{};  // IPW, DR, True
  std::array<double, 3> sem{};
  std::size_t runs = 0;
};

struct StudyReport {
  StudyConfig config;
  std::vector<StudyRun> runs;
  std::size_t failures = 0;
  std::vector<StudyRow> rows;       // policies in first-successful-run order
  std::vector<StudyCheck> checks;   // the three validation checks
  std::optional<double> gap_closure;  // (V_doc - V_primary) / (V_doc - V_opt), run-mean true values
  std::optional<double> dr_truth_pearson;

  const StudyRow* row(const std::string& policy) const;
  Table summary_table() const;  // "mean (SEM)" cells
  Table numeric_table() const;
  Table scatter_table() const;  // one row per (run, policy)
  nlohmann::json to_json() const;
};

// X standardized, treatment observed. Run r simulates with
// derive_seed(config.seed, r); a failing run is recorded and skipped.
StudyReport run_study(const Matrix& X, const std::vector<int>& treatment, const StudyConfig& config);

}  // namespace policylab
