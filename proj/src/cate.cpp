#include "policylab/cate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "policylab/error.hpp"
#include "policylab/parallel.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;

namespace {

Matrix with_treatment(const Matrix& X, double t) {
  Matrix out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  out.col(X.cols()).setConstant(t);
  return out;
}

Matrix with_treatment(const Matrix& X, const std::vector<int>& t) {
  Matrix out(X.rows(), X.cols() + 1);
  out.leftCols(X.cols()) = X;
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i, X.cols()) = t[static_cast<std::size_t>(i)];
  return out;
}

Matrix rows_of(const Matrix& X, const std::vector<std::size_t>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), X.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

Vector rows_of(const Vector& v, const std::vector<std::size_t>& idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(idx[k]));
  return out;
}

std::vector<double> sorted(const Vector& v) {
  std::vector<double> out(v.data(), v.data() + v.size());
  std::sort(out.begin(), out.end());
  return out;
}

json optional_model(const ModelPtr& m) { return m ? m->to_json() : json(nullptr); }

ModelPtr optional_model(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return nullptr;
  return model_from_json(j[key]);
}

}  // namespace

const char* to_string(MetaKind k) {
  switch (k) {
    case MetaKind::S: return "S";
    case MetaKind::T: return "T";
    case MetaKind::X: return "X";
  }
  return "?";
}

MetaKind meta_kind_from_string(const std::string& s) {
  if (s == "S" || s == "s") return MetaKind::S;
  if (s == "T" || s == "t") return MetaKind::T;
  if (s == "X" || s == "x") return MetaKind::X;
  throw ConfigError("unknown meta-learner kind '" + s + "'");
}

std::string CateFitSpec::name() const {
  return std::string(to_string(kind)) + "-" + (learner.name.empty() ? learner.family() : learner.name);
}

// ---------------------------------------------------------------------------

Vector CateModel::predict(const Matrix& X) const {
  switch (kind) {
    case MetaKind::S:
      return f->predict(with_treatment(X, 1.0)) - f->predict(with_treatment(X, 0.0));
    case MetaKind::T:
      return mu1->predict(X) - mu0->predict(X);
    case MetaKind::X: {
      const Vector g = weight_constant ? Vector::Constant(X.rows(), *weight_constant)
                                       : Vector(weight->predict(X).cwiseMax(kScoreClip).cwiseMin(1.0 - kScoreClip));
      const Vector t0 = tau0->predict(X);
      const Vector t1 = tau1->predict(X);
      return (g.array() * t0.array() + (1.0 - g.array()) * t1.array()).matrix();
    }
  }
  throw Error("CateModel: unknown kind");
}

Vector CateModel::predict_outcome(const Matrix& X, int arm) const {
  if (kind == MetaKind::S) return f->predict(with_treatment(X, arm == 1 ? 1.0 : 0.0));
  return arm == 1 ? mu1->predict(X) : mu0->predict(X);
}

std::size_t CateModel::n_features() const { return kind == MetaKind::S ? f->n_features() - 1 : mu0->n_features(); }

json CateModel::to_json() const {
  json j{{"format", "policylab.cate"},
         {"version", kModelFormatVersion},
         {"kind", to_string(kind)},
         {"name", name},
         {"learner_family", learner_family},
         {"f", optional_model(f)},
         {"mu0", optional_model(mu0)},
         {"mu1", optional_model(mu1)},
         {"tau0", optional_model(tau0)},
         {"tau1", optional_model(tau1)},
         {"weight", optional_model(weight)},
         {"residuals", {residuals[0], residuals[1]}}};
  j["weight_constant"] = weight_constant ? json(*weight_constant) : json(nullptr);
  return j;
}

CateModel CateModel::from_json(const json& j) {
  if (j.value("format", "") != "policylab.cate" || j.value("version", 0) != kModelFormatVersion)
    throw DataError("not a supported CATE model document");
  CateModel m;
  m.kind = meta_kind_from_string(j.at("kind").get<std::string>());
  m.name = j.at("name").get<std::string>();
  m.learner_family = j.at("learner_family").get<std::string>();
  m.f = optional_model(j, "f");
  m.mu0 = optional_model(j, "mu0");
  m.mu1 = optional_model(j, "mu1");
  m.tau0 = optional_model(j, "tau0");
  m.tau1 = optional_model(j, "tau1");
  m.weight = optional_model(j, "weight");
  if (!j.at("weight_constant").is_null()) m.weight_constant = j["weight_constant"].get<double>();
  m.residuals[0] = j.at("residuals").at(0).get<std::vector<double>>();
  m.residuals[1] = j.at("residuals").at(1).get<std::vector<double>>();
  return m;
}

CateModel fit_meta_learner(const CateFitSpec& spec, const Matrix& X, const std::vector<int>& treatment,
                           const Vector& y, const PropensityModel* propensity, std::uint64_t seed) {
  if (static_cast<std::size_t>(X.rows()) != treatment.size() || X.rows() != y.size())
    throw DataError("fit_meta_learner: covariates, treatment and outcome differ in length");
  std::array<std::vector<std::size_t>, 2> arm;
  for (std::size_t i = 0; i < treatment.size(); ++i) arm[treatment[i] == 1 ? 1 : 0].push_back(i);
  if (arm[0].size() < 2 || arm[1].size() < 2) throw DataError("fit_meta_learner: each arm needs at least 2 rows");
  if (spec.kind == MetaKind::X && !spec.x_weight && propensity == nullptr)
    throw ConfigError("fit_meta_learner: the X-learner needs a propensity model");

  CateModel m;
  m.kind = spec.kind;
  m.name = spec.name();
  m.learner_family = spec.learner.family();

  const Matrix X0 = rows_of(X, arm[0]);
  const Matrix X1 = rows_of(X, arm[1]);
  const Vector y0 = rows_of(y, arm[0]);
  const Vector y1 = rows_of(y, arm[1]);

  if (spec.kind == MetaKind::S) {
    m.f = spec.learner.fit_regressor(with_treatment(X, treatment), y, seed);
    m.residuals[0] = sorted(y0 - m.f->predict(with_treatment(X0, 0.0)));
    m.residuals[1] = sorted(y1 - m.f->predict(with_treatment(X1, 1.0)));
    return m;
  }

  // Both arms use the same seed so relabeling the arms swaps the fits exactly.
  m.mu0 = spec.learner.fit_regressor(X0, y0, seed);
  m.mu1 = spec.learner.fit_regressor(X1, y1, seed);
  m.residuals[0] = sorted(y0 - m.mu0->predict(X0));
  m.residuals[1] = sorted(y1 - m.mu1->predict(X1));

  if (spec.kind == MetaKind::X) {
    const Vector d1 = y1 - m.mu0->predict(X1);
    const Vector d0 = m.mu1->predict(X0) - y0;
    m.tau1 = spec.learner.fit_regressor(X1, d1, seed);
    m.tau0 = spec.learner.fit_regressor(X0, d0, seed);
    if (spec.x_weight) {
      if (!(*spec.x_weight >= 0.0 && *spec.x_weight <= 1.0)) throw ConfigError("X-learner weight must lie in [0, 1]");
      m.weight_constant = spec.x_weight;
    } else {
      m.weight = propensity->scorer;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Uncertainty

json UncertaintySpec::to_json() const {
  return json{{"alpha_stat", alpha_stat}, {"lambda", lambda}, {"bootstrap", bootstrap}};
}

void UncertaintySpec::validate() const {
  if (!(alpha_stat >= 0.0 && alpha_stat < 1.0)) throw ConfigError("alpha_stat must lie in [0, 1)");
  if (!(lambda >= 1.0) || !std::isfinite(lambda)) throw ConfigError("sensitivity lambda must be >= 1");
  if (alpha_stat > 0.0 && bootstrap < 2) throw ConfigError("bootstrap replicates must be >= 2 when alpha_stat > 0");
}

bool CateIntervals::excludes_zero(std::size_t i) const {
  const auto k = static_cast<Eigen::Index>(i);
  return lower(k) > 0.0 || upper(k) < 0.0;
}

double tilted_mean_upper(std::vector<double> x, double lambda) {
  if (x.empty()) throw EstimationError("tilted mean of an empty sample");
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  const double total = prefix[n];
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= n; ++k) {
    const double top = total - prefix[n - k];
    const double num = lambda * top + (total - top) / lambda;
    const double den = lambda * static_cast<double>(k) + static_cast<double>(n - k) / lambda;
    best = std::max(best, num / den);
  }
  return best;
}

double tilted_mean_lower(std::vector<double> x, double lambda) {
  for (auto& v : x) v = -v;
  return -tilted_mean_upper(std::move(x), lambda);
}

ArmShift arm_shift(const std::vector<double>& residuals, double lambda) {
  if (residuals.empty()) throw EstimationError("causal widening: empty residual pool");
  if (lambda == 1.0) return {};
  const double m = stats::mean(residuals);
  return {std::max(0.0, tilted_mean_upper(residuals, lambda) - m), std::max(0.0, m - tilted_mean_lower(residuals, lambda))};
}

Matrix bootstrap_cate(const CateFitSpec& spec, const Matrix& X, const std::vector<int>& treatment, const Vector& y,
                      const PropensityModel* propensity, const Matrix& X_query, int replicates, std::uint64_t seed,
                      unsigned threads) {
  if (replicates < 1) throw ConfigError("bootstrap_cate: need at least one replicate");
  std::array<std::vector<std::size_t>, 2> arm;
  for (std::size_t i = 0; i < treatment.size(); ++i) arm[treatment[i] == 1 ? 1 : 0].push_back(i);
  Matrix draws(X_query.rows(), replicates);
  parallel_for(
      static_cast<std::size_t>(replicates),
      [&](std::size_t b) {
        auto rng = derived_engine(seed, b);
        std::vector<std::size_t> idx;
        idx.reserve(treatment.size());
        for (const auto& rows : arm) {
          if (rows.empty()) continue;
          std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
          for (std::size_t k = 0; k < rows.size(); ++k) idx.push_back(rows[pick(rng)]);
        }
        std::vector<int> t(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) t[k] = treatment[idx[k]];
        const auto model = fit_meta_learner(spec, rows_of(X, idx), t, rows_of(y, idx), propensity, rng());
        draws.col(static_cast<Eigen::Index>(b)) = model.predict(X_query);
      },
      threads);
  return draws;
}

CateIntervals cate_intervals(const Vector& point, const Matrix* draws,
                             const std::array<std::vector<double>, 2>& residuals, const UncertaintySpec& spec) {
  spec.validate();
  const Eigen::Index n = point.size();
  CateIntervals out{point, point, point};
  if (spec.alpha_stat > 0.0) {
    if (draws == nullptr || draws->cols() < 2) throw ConfigError("statistical interval needs at least 2 bootstrap replicates");
    if (draws->rows() != n) throw DataError("bootstrap draws do not match the query rows");
    const double lo_q = (1.0 - spec.alpha_stat) / 2.0;
    const double hi_q = 1.0 - lo_q;
    std::vector<double> row(static_cast<std::size_t>(draws->cols()));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index b = 0; b < draws->cols(); ++b) row[static_cast<std::size_t>(b)] = (*draws)(i, b);
      std::sort(row.begin(), row.end());
      out.lower(i) = std::min(out.lower(i), stats::quantile_sorted(row, lo_q));
      out.upper(i) = std::max(out.upper(i), stats::quantile_sorted(row, hi_q));
    }
  }
  const auto s0 = arm_shift(residuals[0], spec.lambda);
  const auto s1 = arm_shift(residuals[1], spec.lambda);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.lower(i) = std::min(out.lower(i), point(i) - s1.down - s0.up);
    out.upper(i) = std::max(out.upper(i), point(i) + s1.up + s0.down);
  }
  return out;
}

CateIntervals uncertainty_interval(const CateFitSpec& spec, const CateModel& model, const Matrix& X,
                                   const std::vector<int>& treatment, const Vector& y,
                                   const PropensityModel* propensity, const Matrix& X_query,
                                   const UncertaintySpec& theta, std::uint64_t seed) {
  theta.validate();
  const Vector point = model.predict(X_query);
  if (theta.alpha_stat == 0.0) return cate_intervals(point, nullptr, model.residuals, theta);
  const Matrix draws = bootstrap_cate(spec, X, treatment, y, propensity, X_query, theta.bootstrap, seed);
  return cate_intervals(point, &draws, model.residuals, theta);
}

// ---------------------------------------------------------------------------
// Ensembles

const char* to_string(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::Average: return "average";
    case EnsembleMode::Majority: return "majority";
    case EnsembleMode::Consensus: return "consensus";
  }
  return "?";
}

EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "average") return EnsembleMode::Average;
  if (s == "majority") return EnsembleMode::Majority;
  if (s == "consensus") return EnsembleMode::Consensus;
  throw ConfigError("unknown ensemble mode '" + s + "'");
}

EnsembleScore ensemble_cate(const std::vector<Vector>& effects, EnsembleMode mode, const DecisionRule& rule) {
  if (effects.size() < 2) throw ConfigError("an ensemble needs at least 2 models");
  const Eigen::Index n = effects.front().size();
  for (const auto& e : effects)
    if (e.size() != n) throw DataError("ensemble members were scored on different rows");

  EnsembleScore out{Vector::Zero(n), std::vector<bool>(static_cast<std::size_t>(n), false)};
  const auto m = effects.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (mode == EnsembleMode::Average) {
      double s = 0.0;
      for (const auto& e : effects) s += e(i);
      out.effect(i) = s / static_cast<double>(m);
      continue;
    }
    std::size_t treat = 0;
    for (const auto& e : effects) treat += rule.treat(e(i)) ? 1 : 0;
    const std::size_t against = m - treat;
    bool defer = false;
    bool decision = false;
    if (mode == EnsembleMode::Majority) {
      defer = treat == against;
      decision = treat > against;
    } else {
      defer = treat != 0 && against != 0;
      decision = treat == m;
    }
    out.defer[static_cast<std::size_t>(i)] = defer;
    out.effect(i) = defer ? rule.threshold : rule.pseudo_effect(decision);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

std::vector<CalibrationSegment> cate_calibration_curve(const Vector& effect, const Vector& y,
                                                       const std::vector<int>& treatment, const Vector& e,
                                                       const Vector& mu0, const Vector& mu1, int segments) {
  const auto n = static_cast<std::size_t>(effect.size());
  if (segments < 2) throw ConfigError("calibration curve needs at least 2 segments");
  if (static_cast<std::size_t>(segments) > n) throw DataError("more calibration segments than rows");
  if (static_cast<std::size_t>(y.size()) != n || treatment.size() != n || static_cast<std::size_t>(e.size()) != n ||
      static_cast<std::size_t>(mu0.size()) != n || static_cast<std::size_t>(mu1.size()) != n)
    throw DataError("calibration curve inputs differ in length");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return effect(static_cast<Eigen::Index>(a)) < effect(static_cast<Eigen::Index>(b));
  });

  const auto K = static_cast<std::size_t>(segments);
  std::vector<CalibrationSegment> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t begin = k * n / K;
    const std::size_t end = (k + 1) * n / K;
    auto& seg = out[k];
    seg.count = end - begin;
    std::vector<double> psi;
    psi.reserve(seg.count);
    bool has[2] = {false, false};
    double sum_effect = 0.0;
    for (std::size_t r = begin; r < end; ++r) {
      const auto i = static_cast<Eigen::Index>(order[r]);
      const int t = treatment[order[r]];
      has[t == 1 ? 1 : 0] = true;
      sum_effect += effect(i);
      const double p = e(i);
      psi.push_back(mu1(i) - mu0(i) + (t == 1 ? (y(i) - mu1(i)) / p : 0.0) - (t == 0 ? (y(i) - mu0(i)) / (1.0 - p) : 0.0));
    }
    seg.mean_effect = sum_effect / static_cast<double>(seg.count);
    if (has[0] && has[1]) {
      seg.aipw = stats::mean(psi);
      seg.aipw_se = stats::sd(psi) / std::sqrt(static_cast<double>(psi.size()));
    }
  }
  return out;
}

Table calibration_table(const std::vector<CalibrationSegment>& segments) {
  Table t;
  t.header = {"segment", "count", "mean_cate", "aipw_ate", "aipw_se"};
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& s = segments[k];
    t.rows.push_back({std::to_string(k), std::to_string(s.count), fmt_num(s.mean_effect), fmt_num(s.aipw), fmt_num(s.aipw_se)});
  }
  return t;
}

CateDiagnostics cate_diagnostics(const std::vector<std::string>& names, const std::vector<Vector>& effects) {
  if (names.size() != effects.size()) throw DataError("cate_diagnostics: names and effects differ in length");
  const auto m = static_cast<Eigen::Index>(effects.size());
  for (const auto& e : effects)
    if (e.size() != effects.front().size()) throw DataError("cate_diagnostics: models scored on different rows");
  CateDiagnostics d;
  d.names = names;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  d.pearson = Matrix::Constant(m, m, nan);
  d.kendall = Matrix::Constant(m, m, nan);
  d.spearman = Matrix::Constant(m, m, nan);
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& ea = effects[static_cast<std::size_t>(a)];
    d.ate.push_back(ea.size() ? ea.mean() : nan);
    for (Eigen::Index b = a; b < m; ++b) {
      const auto va = stats::view(ea);
      const auto vb = stats::view(effects[static_cast<std::size_t>(b)]);
      const auto p = stats::pearson(va, vb);
      const auto k = stats::kendall(va, vb);
      const auto s = stats::spearman(va, vb);
      d.pearson(a, b) = d.pearson(b, a) = p.value_or(nan);
      d.kendall(a, b) = d.kendall(b, a) = k.value_or(nan);
      d.spearman(a, b) = d.spearman(b, a) = s.value_or(nan);
    }
  }
  return d;
}

Table CateDiagnostics::correlation_table(const Matrix& m) const {
  Table t;
  t.header.push_back("model");
  t.header.insert(t.header.end(), names.begin(), names.end());
  for (Eigen::Index a = 0; a < m.rows(); ++a) {
    std::vector<std::string> row{names[static_cast<std::size_t>(a)]};
    for (Eigen::Index b = 0; b < m.cols(); ++b) row.push_back(fmt_num(m(a, b)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table CateDiagnostics::ate_table() const {
  Table t;
  t.header = {"model", "ate"};
  for (std::size_t i = 0; i < names.size(); ++i) t.rows.push_back({names[i], fmt_num(ate[i])});
  return t;
}

json CateDiagnostics::to_json() const {
  auto mat = [](const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index a = 0; a < m.rows(); ++a) {
      json row = json::array();
      for (Eigen::Index b = 0; b < m.cols(); ++b) row.push_back(std::isfinite(m(a, b)) ? json(m(a, b)) : json(nullptr));
      rows.push_back(row);
    }
    return rows;
  };
  return json{{"models", names}, {"pearson", mat(pearson)}, {"kendall", mat(kendall)}, {"spearman", mat(spearman)}, {"ate", ate}};
}

}  // namespace policylab
