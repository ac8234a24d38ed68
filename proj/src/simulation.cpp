#include "policylab/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "policylab/error.hpp"
#include "policylab/parallel.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector normal_vector(Eigen::Index d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, scale);
  Vector v(d);
  for (Eigen::Index j = 0; j < d; ++j) v(j) = z(rng);
  return v;
}

Vector unit(const Vector& v, const char* what) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DataError(std::string("simulation: ") + what + " has zero norm");
  return v / norm;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

void SimulationSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("simulation.lambda must lie in [0, 1]");
  if (!(effect > 0.0)) throw ConfigError("simulation.effect must be positive");
  if (!(noise_factor > 0.0)) throw ConfigError("simulation.noise_factor must be positive");
  if (!(propensity_l2 >= 0.0)) throw ConfigError("simulation.propensity_l2 must be non-negative");
}

json SimulationSpec::to_json() const {
  return {{"lambda", lambda}, {"effect", effect}, {"noise_factor", noise_factor}, {"propensity_l2", propensity_l2}};
}

SimulatedOutcomes simulate_outcomes(const Matrix& X, const std::vector<int>& treatment, const SimulationSpec& spec,
                                    std::uint64_t seed) {
  spec.validate();
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (static_cast<std::size_t>(n) != treatment.size()) throw DataError("simulation: covariates and treatment differ");
  if (n < 2 || d < 1) throw DataError("simulation needs at least two rows and one covariate");
  const auto treated = std::count(treatment.begin(), treatment.end(), 1);
  if (treated == 0 || treated == n) throw DataError("simulation: both treatment arms must be present");

  SimulatedOutcomes out;
  Vector t(n);
  for (Eigen::Index i = 0; i < n; ++i) t(i) = treatment[static_cast<std::size_t>(i)];
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L2;
  o.lambda = spec.propensity_l2;
  out.beta_prop = unit(fit_linear(X, t, o).coefficients, "beta_prop");

  std::mt19937_64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  out.beta_rand = unit(normal_vector(d, scale, rng), "beta_rand");

  Vector delta = std::sqrt(spec.lambda) * out.beta_prop + std::sqrt(1.0 - spec.lambda) * out.beta_rand;
  const double mean_abs = (X * delta).cwiseAbs().mean();
  if (!(mean_abs > 0.0)) throw DataError("simulation: effect direction is orthogonal to every row");
  out.delta = delta * (spec.effect / mean_abs);

  out.w0 = normal_vector(d, scale, rng);
  out.w1 = out.delta + out.w0;
  out.mean0 = X * out.w0;
  out.mean1 = X * out.w1;
  out.sigma0 = stats::sd(stats::view(out.mean0));
  out.sigma1 = stats::sd(stats::view(out.mean1));

  out.y0 = out.mean0 + normal_vector(n, spec.noise_factor * out.sigma0, rng);
  out.y1 = out.mean1 + normal_vector(n, spec.noise_factor * out.sigma1, rng);

  const Vector effect = X * out.delta;
  out.optimal.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.optimal[static_cast<std::size_t>(i)] = effect(i) < 0.0 ? 1 : 0;
  return out;
}

double true_policy_value(const Policy& policy, const SimulatedOutcomes& outcomes, const std::vector<int>& treatment,
                         bool expected, const std::vector<std::size_t>* rows) {
  const std::size_t n_all = treatment.size();
  if (policy.size() != n_all || static_cast<std::size_t>(outcomes.y0.size()) != n_all)
    throw DataError("true_policy_value: policy '" + policy.name + "' was scored on different rows");
  const Vector& y0 = expected ? outcomes.mean0 : outcomes.y0;
  const Vector& y1 = expected ? outcomes.mean1 : outcomes.y1;
  const std::size_t n = rows ? rows->size() : n_all;
  if (n == 0) throw EstimationError("true policy value over zero rows");
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = rows ? (*rows)[k] : k;
    const auto a = policy.actions[i];
    int arm = a == Action::Treat1 ? 1 : 0;
    if (policy.factual || a == Action::Defer) arm = treatment[i];
    sum += arm == 1 ? y1(static_cast<Eigen::Index>(i)) : y0(static_cast<Eigen::Index>(i));
  }
  return sum / static_cast<double>(n);
}

Dataset synthetic_dataset(std::size_t n, std::size_t d, std::uint64_t seed, double propensity_strength,
                          const SimulationSpec& sim) {
  if (n < 2 || d < 1) throw ConfigError("synthetic data needs n >= 2 and d >= 1");
  auto rng = derived_engine(seed, 0);
  std::normal_distribution<double> z;
  Dataset data;
  data.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      data.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z(rng);
  for (std::size_t j = 0; j < d; ++j) data.columns.push_back({"x" + std::to_string(j + 1), ColumnKind::Numeric});

  const Vector u = unit(normal_vector(static_cast<Eigen::Index>(d), 1.0, rng), "propensity direction");
  const Vector logits = propensity_strength * (data.covariates * u);
  std::uniform_real_distribution<double> unif;
  data.treatment.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    data.treatment[i] = unif(rng) < sigmoid(logits(static_cast<Eigen::Index>(i))) ? 1 : 0;

  std::vector<double> mean(d), sd(d);
  for (std::size_t j = 0; j < d; ++j) {
    const Vector col = data.covariates.col(static_cast<Eigen::Index>(j));
    mean[j] = col.mean();
    sd[j] = stats::sd(stats::view(col));
  }
  const auto sim_out = simulate_outcomes(standardize(data.covariates, mean, sd), data.treatment, sim,
                                         derive_seed(seed, 1));
  data.outcome.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    data.outcome(k) = data.treatment[i] == 1 ? sim_out.y1(k) : sim_out.y0(k);
  }
  data.split.assign(n, Split::Train);
  data.row_ids.resize(n);
  for (std::size_t i = 0; i < n; ++i) data.row_ids[i] = std::to_string(i);
  return data;
}

// ---------------------------------------------------------------------------

std::vector<CateFitSpec> StudyConfig::default_menu() {
  LearnerSpec ridge{"ridge", LearnerType::Ridge};
  LearnerSpec lasso{"lasso", LearnerType::Lasso};
  lasso.lambda = 0.01;
  LearnerSpec gbt{"gbt", LearnerType::Gbt};
  gbt.gbt.n_trees = 100;
  gbt.gbt.min_samples_leaf = 10;
  const std::optional<double> none;
  return {{MetaKind::T, gbt, none}, {MetaKind::T, ridge, none}, {MetaKind::T, lasso, none}};
}

json StudyConfig::to_json() const {
  json menu_j = json::array();
  for (const auto& m : menu) menu_j.push_back({{"name", m.name()}, {"kind", to_string(m.kind)}, {"learner", m.learner.to_json()}});
  json ens = json::array();
  for (auto m : ensembles) ens.push_back(to_string(m));
  json est = json::array();
  for (auto e : estimators) est.push_back(to_string(e));
  return {{"simulation", sim.to_json()},
          {"runs", runs},
          {"eval_fraction", eval_fraction},
          {"menu", menu_j},
          {"ensembles", ens},
          {"estimators", est},
          {"p_star", {{"lambda", p_star_lambda}, {"low", p_star_low}, {"high", p_star_high}}},
          {"plug_in", plug_in.to_json()},
          {"primary", primary},
          {"seed", seed}};
}

const StudyRow* StudyReport::row(const std::string& policy) const {
  for (const auto& r : rows)
    if (r.policy == policy) return &r;
  return nullptr;
}

namespace {

constexpr std::array<const char*, 3> kColumns{"IPW", "DR", "True"};

bool has_estimator(const StudyConfig& c, Estimator e) {
  return std::find(c.estimators.begin(), c.estimators.end(), e) != c.estimators.end();
}

std::vector<std::size_t> active_columns(const StudyConfig& c) {
  std::vector<std::size_t> cols;
  if (has_estimator(c, Estimator::IPW)) cols.push_back(0);
  if (has_estimator(c, Estimator::DR)) cols.push_back(1);
  cols.push_back(2);
  return cols;
}

}  // namespace

Table StudyReport::summary_table() const {
  Table t;
  t.header.push_back("policy");
  const auto cols = active_columns(config);
  for (auto c : cols) t.header.push_back(kColumns[c]);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.policy};
    for (auto c : cols) line.push_back(fmt_fixed(r.mean[c], 3) + " (" + fmt_fixed(r.sem[c], 3) + ")");
    t.rows.push_back(std::move(line));
  }
  return t;
}

Table StudyReport::numeric_table() const {
  Table t;
  t.header.push_back("policy");
  const auto cols = active_columns(config);
  for (auto c : cols) {
    t.header.push_back(std::string(kColumns[c]) + "_mean");
    t.header.push_back(std::string(kColumns[c]) + "_sem");
  }
  t.header.push_back("runs");
  for (const auto& r : rows) {
    std::vector<std::string> line{r.policy};
    for (auto c : cols) {
      line.push_back(fmt_num(r.mean[c]));
      line.push_back(fmt_num(r.sem[c]));
    }
    line.push_back(std::to_string(r.runs));
    t.rows.push_back(std::move(line));
  }
  return t;
}

Table StudyReport::scatter_table() const {
  Table t;
  t.header = {"run", "policy", "estimator", "estimate", "true_value"};
  for (const auto& run : runs) {
    if (!run.ok) continue;
    for (std::size_t p = 0; p < run.policies.size(); ++p) {
      if (has_estimator(config, Estimator::IPW))
        t.rows.push_back({std::to_string(run.index), run.policies[p], "IPW", fmt_num(run.ipw[p]), fmt_num(run.truth[p])});
      if (has_estimator(config, Estimator::DR))
        t.rows.push_back({std::to_string(run.index), run.policies[p], "DR", fmt_num(run.dr[p]), fmt_num(run.truth[p])});
    }
  }
  return t;
}

json StudyReport::to_json() const {
  json runs_j = json::array();
  for (const auto& r : runs) {
    json j{{"index", r.index}, {"seed", r.seed}, {"ok", r.ok}};
    if (!r.ok) j["error"] = r.error;
    runs_j.push_back(std::move(j));
  }
  json rows_j = json::array();
  for (const auto& r : rows) {
    json j{{"policy", r.policy}, {"runs", r.runs}};
    for (auto c : active_columns(config))
      j[kColumns[c]] = {{"mean", finite_or_null(r.mean[c])}, {"sem", finite_or_null(r.sem[c])}};
    rows_j.push_back(std::move(j));
  }
  json checks_j = json::array();
  for (const auto& c : checks)
    checks_j.push_back({{"name", c.name}, {"passed", c.passed}, {"observed", finite_or_null(c.observed)},
                        {"tolerance", finite_or_null(c.tolerance)}});
  return {{"config", config.to_json()},
          {"runs", runs_j},
          {"failures", failures},
          {"policies", rows_j},
          {"checks", checks_j},
          {"gap_closure", gap_closure ? json(*gap_closure) : json(nullptr)},
          {"dr_truth_pearson", dr_truth_pearson ? json(*dr_truth_pearson) : json(nullptr)},
          {"direction", to_string(Direction::LowerBetter)}};
}

namespace {

void simulate_run(const Matrix& X, const std::vector<int>& treatment, const StudyConfig& config,
                  const std::vector<CateFitSpec>& menu, StudyRun& run) {
  const auto n = treatment.size();
  const auto sim = simulate_outcomes(X, treatment, config.sim, run.seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffle_rng = derived_engine(run.seed, 1);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto n_eval = static_cast<std::size_t>(std::llround(config.eval_fraction * static_cast<double>(n)));
  if (n_eval < 2 || n_eval + 2 > n) throw ConfigError("simulation study: eval_fraction leaves an empty split");
  std::vector<std::size_t> eval(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());
  std::sort(eval.begin(), eval.end());
  std::sort(train.begin(), train.end());

  auto take_rows = [&](const std::vector<std::size_t>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
    return out;
  };
  Vector y_all(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    y_all(k) = treatment[i] == 1 ? sim.y1(k) : sim.y0(k);
  }
  auto take_y = [&](const std::vector<std::size_t>& idx) {
    Vector out(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = y_all(static_cast<Eigen::Index>(idx[k]));
    return out;
  };
  auto take_t = [&](const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = treatment[idx[k]];
    return out;
  };

  const Matrix X_train = take_rows(train);
  const Matrix X_eval = take_rows(eval);
  const Vector y_train = take_y(train);
  const auto t_train = take_t(train);
  const auto t_eval = take_t(eval);

  // Evaluation weights from all rows; the scorer used by policies sees train only.
  const Vector p_star_all = fit_p_star(X, treatment, config.p_star_lambda, config.p_star_low, config.p_star_high);
  PropensityModel propensity;
  LearnerSpec logistic{"propensity", LearnerType::Logistic};
  propensity.scorer = logistic.fit_classifier(X_train, t_train, 0);
  const Vector e_eval = propensity.score(X_eval);

  const std::uint64_t fit_seed = derive_seed(run.seed, 3);
  const DecisionRule rule{0.0, Direction::LowerBetter};
  std::vector<Policy> policies;
  std::vector<Vector> effects;
  for (const auto& spec : menu) {
    const auto model = fit_meta_learner(spec, X_train, t_train, y_train, &propensity, fit_seed);
    effects.push_back(model.predict(X_eval));
    policies.push_back(build_policy(model.name, effects.back(), rule, nullptr, PolicySource::CateModel,
                                    model.learner_family));
  }
  if (effects.size() >= 2) {
    for (auto mode : config.ensembles) {
      const auto score = ensemble_cate(effects, mode, rule);
      std::string name = std::string("Ensemble-") + to_string(mode);
      policies.push_back(build_policy(std::move(name), score.effect, rule, &score.defer, PolicySource::Ensemble));
    }
  }
  for (auto& b : baselines(t_eval, e_eval, derive_seed(run.seed, 2))) policies.push_back(std::move(b));

  Policy optimal;
  optimal.name = "Optimal";
  optimal.source = PolicySource::Oracle;
  for (auto i : eval) optimal.actions.push_back(sim.optimal[i] == 1 ? Action::Treat1 : Action::Treat0);
  policies.push_back(std::move(optimal));

  EvaluationData data;
  data.y = take_y(eval);
  data.t = t_eval;
  data.p_star.resize(static_cast<Eigen::Index>(eval.size()));
  for (std::size_t k = 0; k < eval.size(); ++k)
    data.p_star(static_cast<Eigen::Index>(k)) = p_star_all(static_cast<Eigen::Index>(eval[k]));
  if (has_estimator(config, Estimator::DR)) {
    const CateFitSpec plug{MetaKind::T, config.plug_in, std::nullopt};
    const auto model = fit_meta_learner(plug, X_train, t_train, y_train, nullptr, fit_seed);
    data.mu0 = model.predict_outcome(X_eval, 0);
    data.mu1 = model.predict_outcome(X_eval, 1);
    data.plug_in = plug.name();
  }

  SimulatedOutcomes eval_sim;
  const auto m = static_cast<Eigen::Index>(eval.size());
  eval_sim.y0.resize(m);
  eval_sim.y1.resize(m);
  eval_sim.mean0.resize(m);
  eval_sim.mean1.resize(m);
  for (std::size_t k = 0; k < eval.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(eval[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    eval_sim.y0(kk) = sim.y0(i);
    eval_sim.y1(kk) = sim.y1(i);
    eval_sim.mean0(kk) = sim.mean0(i);
    eval_sim.mean1(kk) = sim.mean1(i);
  }

  for (const auto& p : policies) {
    run.policies.push_back(p.name);
    run.ipw.push_back(has_estimator(config, Estimator::IPW) ? policy_value(p, data, Estimator::IPW) : kNaN);
    run.dr.push_back(has_estimator(config, Estimator::DR) ? policy_value(p, data, Estimator::DR) : kNaN);
    run.truth.push_back(true_policy_value(p, eval_sim, t_eval));
    run.expected_truth.push_back(true_policy_value(p, eval_sim, t_eval, true));
  }
}

}  // namespace

StudyReport run_study(const Matrix& X, const std::vector<int>& treatment, const StudyConfig& config) {
  config.sim.validate();
  if (config.runs < 2) throw ConfigError("simulation study needs at least two runs");
  if (!(config.eval_fraction > 0.0 && config.eval_fraction < 1.0))
    throw ConfigError("simulation study: eval_fraction must lie in (0, 1)");
  if (config.estimators.empty()) throw ConfigError("simulation study: no estimators");
  const auto menu = config.menu.empty() ? StudyConfig::default_menu() : config.menu;

  StudyReport report;
  report.config = config;
  report.config.menu = menu;
  report.runs.resize(static_cast<std::size_t>(config.runs));
  parallel_for(
      report.runs.size(),
      [&](std::size_t r) {
        auto& run = report.runs[r];
        run.index = static_cast<int>(r);
        run.seed = derive_seed(config.seed, r);
        try {
          simulate_run(X, treatment, config, menu, run);
          run.ok = true;
        } catch (const std::exception& e) {
          run = StudyRun{static_cast<int>(r), run.seed, false, e.what(), {}, {}, {}, {}, {}};
        }
      },
      config.threads);

  const StudyRun* first = nullptr;
  for (const auto& run : report.runs) {
    if (!run.ok) ++report.failures;
    else if (!first) first = &run;
  }
  if (!first) return report;

  std::vector<double> dr_points, truth_points;
  for (std::size_t p = 0; p < first->policies.size(); ++p) {
    StudyRow row;
    row.policy = first->policies[p];
    std::array<std::vector<double>, 3> values;
    for (const auto& run : report.runs) {
      if (!run.ok) continue;
      const auto it = std::find(run.policies.begin(), run.policies.end(), row.policy);
      if (it == run.policies.end()) continue;
      const auto k = static_cast<std::size_t>(it - run.policies.begin());
      values[0].push_back(run.ipw[k]);
      values[1].push_back(run.dr[k]);
      values[2].push_back(run.truth[k]);
      if (std::isfinite(run.dr[k])) {
        dr_points.push_back(run.dr[k]);
        truth_points.push_back(run.truth[k]);
      }
    }
    row.runs = values[2].size();
    for (std::size_t c = 0; c < 3; ++c) {
      row.mean[c] = stats::mean(values[c]);
      row.sem[c] = stats::sd(values[c]) / std::sqrt(static_cast<double>(values[c].size()));
    }
    report.rows.push_back(std::move(row));
  }
  report.dr_truth_pearson = stats::pearson(dr_points, truth_points);

  const auto* doctors = report.row("Doctors");
  const auto* opt = report.row("Optimal");
  const auto* primary = report.row(config.primary);
  if (doctors && opt && primary) {
    constexpr std::size_t kTrue = 2;
    const double gap = doctors->mean[kTrue] - opt->mean[kTrue];
    if (gap != 0.0) report.gap_closure = (doctors->mean[kTrue] - primary->mean[kTrue]) / gap;
    const double tol = std::abs(gap) / 3.0;
    const std::size_t est = has_estimator(config, Estimator::DR) ? 1 : 0;
    const double dev = std::abs(primary->mean[est] - primary->mean[kTrue]);
    report.checks.push_back({"estimate-matches-truth", dev <= tol, dev, tol});
    const double gain = doctors->mean[kTrue] - primary->mean[kTrue];
    report.checks.push_back({"improves-on-current", gain > 0.0, gain, 0.0});
    const double to_opt = std::abs(primary->mean[est] - opt->mean[kTrue]);
    report.checks.push_back({"estimate-near-optimal", to_opt <= tol, to_opt, tol});
  }
  return report;
}

}  // namespace policylab
