#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "policylab/decision.hpp"
#include "policylab/table.hpp"
#include "policylab/types.hpp"

namespace policylab {

enum class PolicySource : std::uint8_t { CateModel, Ensemble, Baseline, Oracle };

const char* to_string(PolicySource s);
const char* to_string(Action a);

struct Policy {
  std::string name;
  std::vector<Action> actions;
  PolicySource source = PolicySource::CateModel;
  // Evaluated as the factual outcome mean (the observed-treatment policy).
  bool factual = false;
  // Learner family behind the effect estimates; empty for baselines.
  std::string family;

  std::size_t size() const { return actions.size(); }
  std::size_t count(Action a) const;
  // Treated share among all rows (deferred rows count as untreated).
  double treated_fraction() const;
};

// Defer where defer[i] is set, otherwise psi(effect).
Policy build_policy(std::string name, const Vector& effect, const DecisionRule& rule,
                    const std::vector<bool>* defer = nullptr, PolicySource source = PolicySource::CateModel,
                    std::string family = {});

// ---------------------------------------------------------------------------
// Values

enum class Estimator : std::uint8_t { IPW, DR };

const char* to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

// Evaluation rows. p_star is P(T = 1 | x), already clipped into (0, 1).
// mu0/mu1 are the DR plug-in predictions for each arm.
struct EvaluationData {
  Vector y;
  std::vector<int> t;
  Vector p_star;
  std::optional<Vector> mu0;
  std::optional<Vector> mu1;
  std::string plug_in;  // plug-in model id recorded in every DR estimate

  std::size_t rows() const { return t.size(); }
  void validate() const;
};

// L2 logistic regression of treatment on all rows, clipped to [low, high].
Vector fit_p_star(const Matrix& X, const std::vector<int>& t, double lambda = 1.0, double low = 0.01,
                  double high = 0.99);

struct PolicyValueEstimate {
  std::string policy;
  Estimator estimator = Estimator::IPW;
  double value = 0.0;
  std::vector<double> bootstrap;  // NaN marks a skipped round
  std::string plug_in;
  std::size_t deferred = 0;
  double weight_sum = 0.0;
};

// Non-deferred rows are self-normalized IPW (or DR) estimates; deferred rows
// contribute their factual mean; the two are mixed by their row shares.
// Throws EstimationError when the non-deferred rows carry no weight.
PolicyValueEstimate value_ipw(const Policy& policy, const EvaluationData& data);
PolicyValueEstimate value_dr(const Policy& policy, const EvaluationData& data);
double policy_value(const Policy& policy, const EvaluationData& data, Estimator estimator,
                    const std::vector<std::size_t>* rows = nullptr);

// ---------------------------------------------------------------------------
// Baselines

// Doctors (factual), Random (seeded draws at the treated share), Propensity
// (e > 0.5), Treat-all-0 and Treat-all-1.
std::vector<Policy> baselines(const std::vector<int>& t, const Vector& e, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Bootstrap tournament

struct DistributionSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

DistributionSummary summarize_distribution(const std::vector<double>& values);

struct Tournament {
  std::vector<std::string> policies;
  std::vector<Estimator> estimators;
  // estimates[e][p]: point value plus bootstrap distribution
  std::vector<std::vector<PolicyValueEstimate>> estimates;
  // wins[e](i, j): rounds where policy i strictly beats policy j
  std::vector<Eigen::MatrixXi> wins;
  std::vector<Eigen::MatrixXi> skipped;
  int rounds = 0;

  Table value_table(std::size_t estimator) const;
  Table wins_table(std::size_t estimator) const;
  Table distribution_table(std::size_t estimator) const;  // long format, one row per round
  nlohmann::json to_json() const;
};

// Each round resamples the evaluation rows with replacement (round b uses
// derived_engine(seed, b)); point values are full-sample estimates.
Tournament bootstrap_tournament(const std::vector<Policy>& policies, const EvaluationData& data,
                                const std::vector<Estimator>& estimators, int rounds, std::uint64_t seed,
                                Direction direction, unsigned threads = 0);

// ---------------------------------------------------------------------------
// Rank curve

struct RankPoint {
  double q = 0.0;
  double treated_fraction = 0.0;
  std::optional<double> value;
};

using PolicyEvaluator = std::function<double(const Policy&)>;

// For q on {0, delta, 2 delta, ..., 1}: treat iff benefit(effect) >
// Q(benefit, q), where benefit orients the effect so larger is better and
// Q(., 0) is -infinity. The endpoints are Treat-all-1 (q = 0) and
// Treat-all-0 (q = 1).
std::vector<RankPoint> rank_curve(const Vector& effect, const DecisionRule& rule, const PolicyEvaluator& evaluate,
                                  double delta);
Table rank_curve_table(const std::vector<RankPoint>& curve);

// ---------------------------------------------------------------------------
// Outcome tree

struct OutcomeNode {
  std::string label;
  std::size_t n = 0;
  std::optional<double> mean;
  std::optional<double> sem;
  std::vector<OutcomeNode> children;

  nlohmann::json to_json() const;
};

// Root -> observed arm -> {agree, disagree, defer}.
OutcomeNode outcome_tree(const Policy& policy, const Vector& y, const std::vector<int>& t);

// Sum of n over the leaves.
std::size_t leaf_total(const OutcomeNode& node);

// ---------------------------------------------------------------------------
// Outcome transform and congeniality

// (d - o) / (d - b); absent when d == b.
std::optional<double> rtb_transform(double crea_d, double crea_o, double crea_b);

// True when the DR plug-in shares the learner family behind the policy.
bool congeniality_risk(const Policy& policy, const std::string& plug_in_family);

}  // namespace policylab
