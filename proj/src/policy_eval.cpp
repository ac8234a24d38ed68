#include "policylab/policy_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "policylab/error.hpp"
#include "policylab/learners.hpp"
#include "policylab/parallel.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

const char* to_string(PolicySource s) {
  switch (s) {
    case PolicySource::CateModel: return "cate-model";
    case PolicySource::Ensemble: return "ensemble";
    case PolicySource::Baseline: return "baseline";
    case PolicySource::Oracle: return "oracle";
  }
  return "?";
}

const char* to_string(Action a) {
  switch (a) {
    case Action::Treat0: return "0";
    case Action::Treat1: return "1";
    case Action::Defer: return "defer";
  }
  return "?";
}

std::size_t Policy::count(Action a) const {
  return static_cast<std::size_t>(std::count(actions.begin(), actions.end(), a));
}

double Policy::treated_fraction() const {
  return actions.empty() ? 0.0 : static_cast<double>(count(Action::Treat1)) / static_cast<double>(actions.size());
}

Policy build_policy(std::string name, const Vector& effect, const DecisionRule& rule, const std::vector<bool>* defer,
                    PolicySource source, std::string family) {
  if (defer && defer->size() != static_cast<std::size_t>(effect.size()))
    throw DataError("build_policy: deferral mask and effects differ in length");
  Policy p;
  p.name = std::move(name);
  p.source = source;
  p.family = std::move(family);
  p.actions.resize(static_cast<std::size_t>(effect.size()));
  for (Eigen::Index i = 0; i < effect.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (defer && (*defer)[k]) p.actions[k] = Action::Defer;
    else p.actions[k] = rule.treat(effect(i)) ? Action::Treat1 : Action::Treat0;
  }
  return p;
}

// ---------------------------------------------------------------------------

const char* to_string(Estimator e) { return e == Estimator::IPW ? "IPW" : "DR"; }

Estimator estimator_from_string(const std::string& s) {
  if (s == "IPW" || s == "ipw") return Estimator::IPW;
  if (s == "DR" || s == "dr") return Estimator::DR;
  throw ConfigError("unknown estimator '" + s + "'");
}

void EvaluationData::validate() const {
  const auto n = static_cast<Eigen::Index>(t.size());
  if (y.size() != n || p_star.size() != n) throw DataError("evaluation data: lengths differ");
  if ((mu0 && mu0->size() != n) || (mu1 && mu1->size() != n)) throw DataError("evaluation data: plug-in length differs");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(p_star(i) > 0.0 && p_star(i) < 1.0)) throw ValidationError("p* must lie strictly inside (0, 1)", i);
}

Vector fit_p_star(const Matrix& X, const std::vector<int>& t, double lambda, double low, double high) {
  if (!(0.0 < low && low < high && high < 1.0)) throw ConfigError("p* clip bounds must satisfy 0 < low < high < 1");
  Vector y(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) y(static_cast<Eigen::Index>(i)) = t[i];
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L2;
  o.lambda = lambda;
  return fit_linear(X, y, o).predict(X).cwiseMax(low).cwiseMin(high);
}

double policy_value(const Policy& policy, const EvaluationData& data, Estimator estimator,
                    const std::vector<std::size_t>* rows) {
  if (policy.size() != data.rows()) throw DataError("policy '" + policy.name + "' was scored on different rows");
  if (estimator == Estimator::DR && (!data.mu0 || !data.mu1))
    throw ConfigError("DR estimate requested without plug-in predictions");
  const std::size_t n = rows ? rows->size() : data.rows();
  if (n == 0) throw EstimationError("policy value over zero rows");
  auto row = [&](std::size_t k) { return static_cast<Eigen::Index>(rows ? (*rows)[k] : k); };

  double factual_sum = 0.0;
  std::size_t deferred = 0;
  double w_sum = 0.0;
  double wy_sum = 0.0;
  double plug_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Index i = row(k);
    const auto a = policy.actions[static_cast<std::size_t>(i)];
    const double y = data.y(i);
    if (policy.factual || a == Action::Defer) {
      factual_sum += y;
      ++deferred;
      continue;
    }
    const int arm = a == Action::Treat1 ? 1 : 0;
    double fitted = 0.0;
    if (estimator == Estimator::DR) {
      fitted = arm == 1 ? (*data.mu1)(i) : (*data.mu0)(i);
      plug_sum += fitted;
    }
    if (data.t[static_cast<std::size_t>(i)] != arm) continue;
    const double p = arm == 1 ? data.p_star(i) : 1.0 - data.p_star(i);
    const double w = 1.0 / p;
    w_sum += w;
    wy_sum += w * (y - fitted);
  }
  const std::size_t active = n - deferred;
  if (active == 0) return factual_sum / static_cast<double>(n);
  if (w_sum <= 0.0) throw EstimationError("policy '" + policy.name + "': no matched units among non-deferred rows");
  double v = wy_sum / w_sum;
  if (estimator == Estimator::DR) v += plug_sum / static_cast<double>(active);
  if (deferred == 0) return v;
  const double share = static_cast<double>(active) / static_cast<double>(n);
  return share * v + (1.0 - share) * (factual_sum / static_cast<double>(deferred));
}

namespace {

PolicyValueEstimate make_estimate(const Policy& policy, const EvaluationData& data, Estimator estimator) {
  data.validate();
  PolicyValueEstimate e;
  e.policy = policy.name;
  e.estimator = estimator;
  e.value = policy_value(policy, data, estimator);
  e.deferred = policy.factual ? policy.size() : policy.count(Action::Defer);
  if (estimator == Estimator::DR) e.plug_in = data.plug_in;
  if (!policy.factual) {
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto a = policy.actions[i];
      if (a == Action::Defer || data.t[i] != (a == Action::Treat1 ? 1 : 0)) continue;
      const auto k = static_cast<Eigen::Index>(i);
      e.weight_sum += 1.0 / (data.t[i] == 1 ? data.p_star(k) : 1.0 - data.p_star(k));
    }
  }
  return e;
}

}  // namespace

PolicyValueEstimate value_ipw(const Policy& policy, const EvaluationData& data) {
  return make_estimate(policy, data, Estimator::IPW);
}

PolicyValueEstimate value_dr(const Policy& policy, const EvaluationData& data) {
  return make_estimate(policy, data, Estimator::DR);
}

// ---------------------------------------------------------------------------

std::vector<Policy> baselines(const std::vector<int>& t, const Vector& e, std::uint64_t seed) {
  const std::size_t n = t.size();
  if (static_cast<std::size_t>(e.size()) != n) throw DataError("baselines: treatment and scores differ in length");
  auto make = [&](std::string name) {
    Policy p;
    p.name = std::move(name);
    p.source = PolicySource::Baseline;
    p.actions.resize(n);
    return p;
  };
  std::vector<Policy> out;

  auto doctors = make("Doctors");
  doctors.factual = true;
  for (std::size_t i = 0; i < n; ++i) doctors.actions[i] = t[i] == 1 ? Action::Treat1 : Action::Treat0;
  out.push_back(std::move(doctors));

  const double share = n ? static_cast<double>(std::count(t.begin(), t.end(), 1)) / static_cast<double>(n) : 0.0;
  auto random = make("Random");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution draw(share);
  for (auto& a : random.actions) a = draw(rng) ? Action::Treat1 : Action::Treat0;
  out.push_back(std::move(random));

  auto propensity = make("Propensity");
  for (std::size_t i = 0; i < n; ++i)
    propensity.actions[i] = e(static_cast<Eigen::Index>(i)) > 0.5 ? Action::Treat1 : Action::Treat0;
  out.push_back(std::move(propensity));

  auto none = make("Treat-all-0");
  std::fill(none.actions.begin(), none.actions.end(), Action::Treat0);
  out.push_back(std::move(none));

  auto all = make("Treat-all-1");
  std::fill(all.actions.begin(), all.actions.end(), Action::Treat1);
  out.push_back(std::move(all));
  return out;
}

// ---------------------------------------------------------------------------

DistributionSummary summarize_distribution(const std::vector<double>& values) {
  std::vector<double> v;
  for (double x : values)
    if (std::isfinite(x)) v.push_back(x);
  DistributionSummary s;
  s.n = v.size();
  if (v.empty()) {
    s.mean = s.std = s.min = s.q25 = s.median = s.q75 = s.max = kNaN;
    return s;
  }
  std::sort(v.begin(), v.end());
  s.mean = stats::mean(v);
  s.std = stats::sd(v);
  s.min = v.front();
  s.q25 = stats::quantile_sorted(v, 0.25);
  s.median = stats::quantile_sorted(v, 0.5);
  s.q75 = stats::quantile_sorted(v, 0.75);
  s.max = v.back();
  return s;
}

Tournament bootstrap_tournament(const std::vector<Policy>& policies, const EvaluationData& data,
                                const std::vector<Estimator>& estimators, int rounds, std::uint64_t seed,
                                Direction direction, unsigned threads) {
  if (rounds < 1) throw ConfigError("bootstrap tournament needs at least one round");
  data.validate();
  const std::size_t P = policies.size();
  const std::size_t E = estimators.size();
  const std::size_t n = data.rows();

  Tournament out;
  out.rounds = rounds;
  out.estimators = estimators;
  for (const auto& p : policies) out.policies.push_back(p.name);
  out.estimates.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    for (const auto& p : policies) {
      auto est = make_estimate(p, data, estimators[e]);
      est.bootstrap.assign(static_cast<std::size_t>(rounds), kNaN);
      out.estimates[e].push_back(std::move(est));
    }
  }

  parallel_for(
      static_cast<std::size_t>(rounds),
      [&](std::size_t b) {
        auto rng = derived_engine(seed, b);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> rows(n);
        for (auto& r : rows) r = pick(rng);
        for (std::size_t e = 0; e < E; ++e) {
          for (std::size_t p = 0; p < P; ++p) {
            try {
              out.estimates[e][p].bootstrap[b] = policy_value(policies[p], data, estimators[e], &rows);
            } catch (const EstimationError&) {
              // left as NaN: skipped round
            }
          }
        }
      },
      threads);

  for (std::size_t e = 0; e < E; ++e) {
    Eigen::MatrixXi wins = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
    Eigen::MatrixXi skipped = wins;
    for (int b = 0; b < rounds; ++b) {
      for (std::size_t i = 0; i < P; ++i) {
        for (std::size_t j = 0; j < P; ++j) {
          if (i == j) continue;
          const double vi = out.estimates[e][i].bootstrap[static_cast<std::size_t>(b)];
          const double vj = out.estimates[e][j].bootstrap[static_cast<std::size_t>(b)];
          const auto ii = static_cast<Eigen::Index>(i);
          const auto jj = static_cast<Eigen::Index>(j);
          if (!std::isfinite(vi) || !std::isfinite(vj)) ++skipped(ii, jj);
          else if (better(vi, vj, direction)) ++wins(ii, jj);
        }
      }
    }
    out.wins.push_back(std::move(wins));
    out.skipped.push_back(std::move(skipped));
  }
  return out;
}

Table Tournament::value_table(std::size_t e) const {
  Table t;
  t.header = {"policy", "estimator", "value", "n", "mean", "std", "min", "25%", "50%", "75%", "max", "skipped",
              "deferred", "plug_in"};
  for (const auto& est : estimates.at(e)) {
    const auto s = summarize_distribution(est.bootstrap);
    t.rows.push_back({est.policy, to_string(est.estimator), fmt_num(est.value), std::to_string(s.n), fmt_num(s.mean),
                      fmt_num(s.std), fmt_num(s.min), fmt_num(s.q25), fmt_num(s.median), fmt_num(s.q75),
                      fmt_num(s.max), std::to_string(est.bootstrap.size() - s.n), std::to_string(est.deferred),
                      est.plug_in});
  }
  return t;
}

Table Tournament::wins_table(std::size_t e) const {
  Table t;
  t.header.push_back("policy");
  t.header.insert(t.header.end(), policies.begin(), policies.end());
  const auto& w = wins.at(e);
  for (std::size_t i = 0; i < policies.size(); ++i) {
    std::vector<std::string> row{policies[i]};
    for (std::size_t j = 0; j < policies.size(); ++j)
      row.push_back(std::to_string(w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table Tournament::distribution_table(std::size_t e) const {
  Table t;
  t.header = {"round", "policy", "value"};
  for (int b = 0; b < rounds; ++b)
    for (const auto& est : estimates.at(e))
      t.rows.push_back({std::to_string(b), est.policy, fmt_num(est.bootstrap[static_cast<std::size_t>(b)])});
  return t;
}

json Tournament::to_json() const {
  json j{{"policies", policies}, {"rounds", rounds}, {"estimators", json::array()}};
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    json values = json::array();
    for (const auto& est : estimates[e]) {
      const auto s = summarize_distribution(est.bootstrap);
      values.push_back({{"policy", est.policy},
                        {"value", finite_or_null(est.value)},
                        {"plug_in", est.plug_in},
                        {"deferred", est.deferred},
                        {"weight_sum", est.weight_sum},
                        {"bootstrap", {{"n", s.n}, {"mean", finite_or_null(s.mean)}, {"std", finite_or_null(s.std)},
                                       {"min", finite_or_null(s.min)}, {"q25", finite_or_null(s.q25)},
                                       {"median", finite_or_null(s.median)}, {"q75", finite_or_null(s.q75)},
                                       {"max", finite_or_null(s.max)}}}});
    }
    json wins_json = json::array();
    json skipped_json = json::array();
    for (Eigen::Index i = 0; i < wins[e].rows(); ++i) {
      json wr = json::array();
      json sr = json::array();
      for (Eigen::Index k = 0; k < wins[e].cols(); ++k) {
        wr.push_back(wins[e](i, k));
        sr.push_back(skipped[e](i, k));
      }
      wins_json.push_back(wr);
      skipped_json.push_back(sr);
    }
    j["estimators"].push_back(
        {{"estimator", to_string(estimators[e])}, {"values", values}, {"wins", wins_json}, {"skipped", skipped_json}});
  }
  return j;
}

// ---------------------------------------------------------------------------

std::vector<RankPoint> rank_curve(const Vector& effect, const DecisionRule& rule, const PolicyEvaluator& evaluate,
                                  double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("rank curve step must lie in (0, 1)");
  const auto n = static_cast<std::size_t>(effect.size());
  if (n == 0) throw DataError("rank curve over zero rows");
  std::vector<double> benefit(n);
  for (std::size_t i = 0; i < n; ++i) benefit[i] = rule.benefit(effect(static_cast<Eigen::Index>(i)));
  std::vector<double> sorted = benefit;
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> grid;
  const auto steps = static_cast<int>(std::floor(1.0 / delta + 1e-9));
  for (int k = 0; k <= steps; ++k) grid.push_back(std::min(1.0, k * delta));
  if (grid.back() < 1.0) grid.push_back(1.0);

  std::vector<RankPoint> out;
  for (double q : grid) {
    // The q = 0 cut sits below the support so that endpoint is Treat-all-1.
    const double cut = q == 0.0 ? -std::numeric_limits<double>::infinity() : stats::quantile_sorted(sorted, q);
    Policy p;
    p.name = "rank-q" + fmt_num(q);
    p.actions.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.actions[i] = benefit[i] > cut ? Action::Treat1 : Action::Treat0;
    RankPoint pt{q, p.treated_fraction(), std::nullopt};
    try {
      pt.value = evaluate(p);
    } catch (const EstimationError&) {
      // reported as a gap in the curve
    }
    out.push_back(pt);
  }
  return out;
}

Table rank_curve_table(const std::vector<RankPoint>& curve) {
  Table t;
  t.header = {"q", "treated_fraction", "value"};
  for (const auto& p : curve) t.rows.push_back({fmt_num(p.q), fmt_num(p.treated_fraction), fmt_num(p.value)});
  return t;
}

// ---------------------------------------------------------------------------

json OutcomeNode::to_json() const {
  json j{{"label", label}, {"n", n}, {"mean", optional_json(mean)}, {"sem", optional_json(sem)}};
  if (!children.empty()) {
    j["children"] = json::array();
    for (const auto& c : children) j["children"].push_back(c.to_json());
  }
  return j;
}

namespace {

OutcomeNode node_of(std::string label, const std::vector<double>& values) {
  OutcomeNode node;
  node.label = std::move(label);
  node.n = values.size();
  if (!values.empty()) {
    node.mean = stats::mean(values);
    node.sem = stats::sd(values) / std::sqrt(static_cast<double>(values.size()));
  }
  return node;
}

}  // namespace

OutcomeNode outcome_tree(const Policy& policy, const Vector& y, const std::vector<int>& t) {
  if (policy.size() != t.size() || static_cast<std::size_t>(y.size()) != t.size())
    throw DataError("outcome_tree: policy, outcome and treatment differ in length");
  std::vector<double> all(y.data(), y.data() + y.size());
  auto root = node_of("all", all);
  for (int arm = 0; arm < 2; ++arm) {
    std::vector<double> in_arm;
    std::vector<double> groups[3];  // agree, disagree, defer
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] != arm) continue;
      const double v = y(static_cast<Eigen::Index>(i));
      in_arm.push_back(v);
      const auto a = policy.actions[i];
      if (a == Action::Defer) groups[2].push_back(v);
      else if ((a == Action::Treat1 ? 1 : 0) == arm) groups[0].push_back(v);
      else groups[1].push_back(v);
    }
    auto node = node_of("T=" + std::to_string(arm), in_arm);
    node.children.push_back(node_of("agree", groups[0]));
    node.children.push_back(node_of("disagree", groups[1]));
    node.children.push_back(node_of("defer", groups[2]));
    root.children.push_back(std::move(node));
  }
  return root;
}

std::size_t leaf_total(const OutcomeNode& node) {
  if (node.children.empty()) return node.n;
  std::size_t total = 0;
  for (const auto& c : node.children) total += leaf_total(c);
  return total;
}

// ---------------------------------------------------------------------------

std::optional<double> rtb_transform(double crea_d, double crea_o, double crea_b) {
  if (crea_d == crea_b || !std::isfinite(crea_d) || !std::isfinite(crea_o) || !std::isfinite(crea_b)) return std::nullopt;
  return (crea_d - crea_o) / (crea_d - crea_b);
}

bool congeniality_risk(const Policy& policy, const std::string& plug_in_family) {
  return !policy.family.empty() && policy.family == plug_in_family;
}

}  // namespace policylab
