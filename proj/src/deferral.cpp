#include "policylab/deferral.hpp"

#include <algorithm>
#include <cmath>

#include "policylab/error.hpp"
#include "policylab/learners.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;

const char* to_string(DeferralMode m) { return m == DeferralMode::Inclusive ? "inclusive" : "conservative"; }

DeferralMode deferral_mode_from_string(const std::string& s) {
  if (s == "inclusive") return DeferralMode::Inclusive;
  if (s == "conservative") return DeferralMode::Conservative;
  throw ConfigError("unknown deferral mode '" + s + "'");
}

const char* to_string(DeferReason r) {
  switch (r) {
    case DeferReason::None: return "";
    case DeferReason::Overlap: return "overlap";
    case DeferReason::Uncertainty: return "uncertainty";
  }
  return "?";
}

DeferReason evaluate_deferral(const DeferralRule& rule, double e, std::optional<std::pair<double, double>> interval) {
  if (rule.bounds.low > e || e > rule.bounds.high) return DeferReason::Overlap;
  if (rule.mode == DeferralMode::Conservative) {
    if (!interval) throw DataError("conservative deferral needs an effect interval");
    if (interval->first <= 0.0 && 0.0 <= interval->second) return DeferReason::Uncertainty;
  }
  return DeferReason::None;
}

std::vector<bool> DeferralResult::deferred() const {
  std::vector<bool> out(reasons.size());
  for (std::size_t i = 0; i < reasons.size(); ++i) out[i] = reasons[i] != DeferReason::None;
  return out;
}

std::size_t DeferralResult::count() const {
  return reasons.size() - count(DeferReason::None);
}

std::size_t DeferralResult::count(DeferReason r) const {
  return static_cast<std::size_t>(std::count(reasons.begin(), reasons.end(), r));
}

Table DeferralResult::to_table(const std::vector<std::string>& row_ids) const {
  Table t;
  t.header = {"row_id", "deferred", "reason"};
  for (std::size_t i = 0; i < reasons.size(); ++i)
    t.rows.push_back({i < row_ids.size() ? row_ids[i] : std::to_string(i), reasons[i] != DeferReason::None ? "1" : "0",
                      to_string(reasons[i])});
  return t;
}

DeferralResult apply_deferral(const DeferralRule& rule, const Vector& e, const CateIntervals* intervals) {
  if (intervals && static_cast<Eigen::Index>(intervals->size()) != e.size())
    throw DataError("apply_deferral: scores and intervals differ in length");
  if (rule.mode == DeferralMode::Conservative && !intervals)
    throw DataError("conservative deferral needs effect intervals");
  DeferralResult out;
  out.reasons.resize(static_cast<std::size_t>(e.size()));
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    std::optional<std::pair<double, double>> iv;
    if (intervals) iv = std::make_pair(intervals->lower(i), intervals->upper(i));
    out.reasons[static_cast<std::size_t>(i)] = evaluate_deferral(rule, e(i), iv);
  }
  return out;
}

SubpopCharacterization characterize_subpop(const std::vector<bool>& deferred, const Dataset& data, double lambda) {
  if (deferred.size() != data.rows()) throw DataError("characterize_subpop: labels and rows differ in length");
  const auto positives = std::count(deferred.begin(), deferred.end(), true);
  if (positives == 0 || static_cast<std::size_t>(positives) == deferred.size())
    throw ValidationError("characterize_subpop: deferral labels contain a single class");

  const auto d = static_cast<Eigen::Index>(data.cols());
  std::vector<double> mean(static_cast<std::size_t>(d));
  std::vector<double> sd(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    const Vector col = data.covariates.col(j);
    mean[static_cast<std::size_t>(j)] = stats::mean(stats::view(col));
    sd[static_cast<std::size_t>(j)] = stats::sd(stats::view(col));
  }
  const Matrix Z = standardize(data.covariates, mean, sd);
  Vector y(static_cast<Eigen::Index>(deferred.size()));
  for (std::size_t i = 0; i < deferred.size(); ++i) y(static_cast<Eigen::Index>(i)) = deferred[i] ? 1.0 : 0.0;

  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L1;
  o.lambda = lambda;
  const auto fit = fit_linear(Z, y, o);

  SubpopCharacterization c;
  for (const auto& col : data.columns) c.names.push_back(col.name);
  c.coefficients = fit.coefficients;
  c.intercept = fit.intercept;
  c.lambda = lambda;
  for (Eigen::Index j = 0; j < d; ++j)
    if (fit.coefficients(j) != 0.0) c.ranking.emplace_back(c.names[static_cast<std::size_t>(j)], fit.coefficients(j));
  std::stable_sort(c.ranking.begin(), c.ranking.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });

  std::vector<int> groups(deferred.size());
  for (std::size_t i = 0; i < deferred.size(); ++i) groups[i] = deferred[i] ? 1 : 0;
  c.summary = summarize(data, groups, {"Rec", "Def"});
  return c;
}

Table SubpopCharacterization::coefficient_table() const {
  Table t;
  t.header = {"rank", "covariate", "coefficient"};
  for (std::size_t k = 0; k < ranking.size(); ++k)
    t.rows.push_back({std::to_string(k + 1), ranking[k].first, fmt_num(ranking[k].second)});
  return t;
}

json SubpopCharacterization::to_json() const {
  json ranked = json::array();
  for (const auto& [name, coef] : ranking) ranked.push_back({{"covariate", name}, {"coefficient", coef}});
  json all = json::object();
  for (std::size_t j = 0; j < names.size(); ++j) all[names[j]] = coefficients(static_cast<Eigen::Index>(j));
  return json{{"lambda", lambda}, {"intercept", intercept}, {"ranking", ranked}, {"coefficients", all}};
}

}  // namespace policylab
