#include "policylab/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "policylab/error.hpp"
#include "policylab/stats.hpp"

namespace policylab {

using json = nlohmann::json;

const char* to_string(BoundsMethod m) {
  switch (m) {
    case BoundsMethod::Fixed: return "fixed";
    case BoundsMethod::Quantile: return "quantile";
    case BoundsMethod::MinimumCount: return "minimum-count";
  }
  return "?";
}

BoundsMethod bounds_method_from_string(const std::string& s) {
  if (s == "fixed") return BoundsMethod::Fixed;
  if (s == "quantile") return BoundsMethod::Quantile;
  if (s == "minimum-count") return BoundsMethod::MinimumCount;
  throw ConfigError("unknown overlap bounds method '" + s + "'");
}

json BoundsSpec::to_json() const {
  return json{{"method", policylab::to_string(method)}, {"low", low}, {"high", high}, {"min_count", min_count}};
}

BoundsSpec BoundsSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("overlap bounds must be an object");
  BoundsSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "method") s.method = bounds_method_from_string(value.get<std::string>());
    else if (key == "low") s.low = value.get<double>();
    else if (key == "high") s.high = value.get<double>();
    else if (key == "min_count") s.min_count = value.get<std::size_t>();
    else throw ConfigError("overlap bounds: unknown key '" + key + "'");
  }
  if (!(s.low >= 0.0 && s.high <= 1.0 && s.low < s.high))
    throw ConfigError("overlap bounds: need 0 <= low < high <= 1");
  if (s.method == BoundsMethod::MinimumCount && s.min_count < 1)
    throw ConfigError("overlap bounds: min_count must be at least 1");
  return s;
}

OverlapBounds select_overlap_bounds(std::span<const double> scores, const BoundsSpec& spec,
                                    std::optional<std::span<const int>> treatment) {
  if (scores.empty()) throw DataError("select_overlap_bounds: no scores");
  if (treatment && treatment->size() != scores.size())
    throw DataError("select_overlap_bounds: scores and treatment differ in length");

  std::vector<std::vector<double>> groups;
  if (treatment) {
    groups.resize(2);
    for (std::size_t i = 0; i < scores.size(); ++i) groups[(*treatment)[i] == 1 ? 1 : 0].push_back(scores[i]);
    std::erase_if(groups, [](const auto& g) { return g.empty(); });
  } else {
    groups.emplace_back(scores.begin(), scores.end());
  }
  for (auto& g : groups) std::sort(g.begin(), g.end());

  OverlapBounds b;
  switch (spec.method) {
    case BoundsMethod::Fixed:
      b = {spec.low, spec.high};
      break;
    case BoundsMethod::Quantile:
      b = {0.0, 1.0};
      for (const auto& g : groups) {
        b.low = std::max(b.low, stats::quantile_sorted(g, spec.low));
        b.high = std::min(b.high, stats::quantile_sorted(g, spec.high));
      }
      break;
    case BoundsMethod::MinimumCount:
      b = {0.0, 1.0};
      for (const auto& g : groups) {
        if (g.size() < spec.min_count)
          throw DataError("select_overlap_bounds: an arm has fewer than min_count units");
        b.low = std::max(b.low, g[spec.min_count - 1]);
        b.high = std::min(b.high, g[g.size() - spec.min_count]);
      }
      break;
  }
  if (!(b.low < b.high))
    throw DataError("select_overlap_bounds: empty overlap interval [" + fmt_num(b.low) + ", " + fmt_num(b.high) + "]");
  return b;
}

std::vector<bool> overlap_mask(std::span<const double> scores, const OverlapBounds& bounds) {
  std::vector<bool> in(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) in[i] = bounds.low <= scores[i] && scores[i] <= bounds.high;
  return in;
}

Vector PropensityModel::score(const Matrix& X) const {
  return scorer->predict(X).cwiseMax(kScoreClip).cwiseMin(1.0 - kScoreClip);
}

json PropensityModel::to_json() const {
  json j{{"scorer", scorer->to_json()},
         {"bounds", {bounds.low, bounds.high}},
         {"fit_metrics", policylab::to_json(fit_metrics)}};
  j["train_auroc"] = train_auroc ? json(*train_auroc) : json(nullptr);
  return j;
}

PropensityModel PropensityModel::from_json(const json& j) {
  PropensityModel m;
  m.scorer = model_from_json(j.at("scorer"));
  m.bounds = {j.at("bounds").at(0).get<double>(), j.at("bounds").at(1).get<double>()};
  if (j.contains("train_auroc") && !j["train_auroc"].is_null()) m.train_auroc = j["train_auroc"].get<double>();
  const auto& fm = j.at("fit_metrics");
  m.fit_metrics.brier = fm.at("brier").get<double>();
  if (!fm.at("auroc").is_null()) m.fit_metrics.auroc = fm["auroc"].get<double>();
  return m;
}

PropensityModel fit_propensity(const Dataset& train, const Dataset& calibration, const PropensityOptions& options,
                               std::uint64_t seed) {
  const auto treated = std::count(train.treatment.begin(), train.treatment.end(), 1);
  if (treated == 0 || static_cast<std::size_t>(treated) == train.rows())
    throw DataError("fit_propensity: training split contains a single treatment arm");

  PropensityModel m;
  ModelPtr base = options.learner.fit_classifier(train.covariates, train.treatment, seed);
  if (options.recalibrate) base = std::make_shared<CalibratedClassifier>(calibrate(base, calibration.covariates, calibration.treatment));
  m.scorer = base;

  const Vector cal_scores = m.score(calibration.covariates);
  m.fit_metrics = classification_metrics(stats::view(cal_scores), calibration.treatment);
  const Vector train_scores = m.score(train.covariates);
  m.train_auroc = stats::auroc(stats::view(train_scores), train.treatment);
  m.bounds = select_overlap_bounds(stats::view(train_scores), options.bounds, std::span<const int>(train.treatment));
  return m;
}

OverlapReport overlap_report(std::span<const double> scores, std::span<const int> treatment,
                             const OverlapBounds& bounds, int bins, double flag_threshold) {
  if (scores.size() != treatment.size()) throw DataError("overlap_report: scores and treatment differ in length");
  if (bins < 1) throw ConfigError("overlap_report: bins must be positive");
  OverlapReport r;
  r.bounds = bounds;
  r.flag_threshold = flag_threshold;
  r.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) r.edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
  for (auto& arm : r.arms) {
    arm.before.assign(static_cast<std::size_t>(bins), 0);
    arm.after.assign(static_cast<std::size_t>(bins), 0);
  }
  const auto mask = overlap_mask(scores, bounds);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& arm = r.arms[treatment[i] == 1 ? 1 : 0];
    const auto bin = static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(scores[i] * bins)), 0, bins - 1));
    ++arm.before[bin];
    if (mask[i]) {
      ++arm.after[bin];
      ++arm.inside;
    } else {
      ++arm.outside;
    }
  }
  r.auroc = stats::auroc(scores, treatment);
  // Near-perfect separation in either direction means little common support.
  r.flag = r.auroc && std::max(*r.auroc, 1.0 - *r.auroc) >= flag_threshold;
  return r;
}

json OverlapReport::to_json() const {
  json arms_json = json::array();
  for (int t = 0; t < 2; ++t) {
    const auto& a = arms[static_cast<std::size_t>(t)];
    arms_json.push_back({{"treatment", t}, {"before", a.before}, {"after", a.after}, {"inside", a.inside},
                         {"outside", a.outside}});
  }
  json j{{"edges", edges},
         {"bounds", {bounds.low, bounds.high}},
         {"arms", arms_json},
         {"flag_threshold", flag_threshold},
         {"flag", flag}};
  j["auroc"] = auroc ? json(*auroc) : json(nullptr);
  return j;
}

Table OverlapReport::histogram_table() const {
  Table t;
  t.header = {"bin_low", "bin_high", "treatment", "count_before", "count_after"};
  for (int arm = 0; arm < 2; ++arm)
    for (std::size_t b = 0; b + 1 < edges.size(); ++b)
      t.rows.push_back({fmt_num(edges[b]), fmt_num(edges[b + 1]), std::to_string(arm),
                        std::to_string(arms[static_cast<std::size_t>(arm)].before[b]),
                        std::to_string(arms[static_cast<std::size_t>(arm)].after[b])});
  return t;
}

}  // namespace policylab
