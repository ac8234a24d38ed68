#include "policylab/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "policylab/error.hpp"
#include "policylab/stats.hpp"

namespace policylab {

RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw DataError("regression metrics need equal-length, nonempty inputs");
  const double n = static_cast<double>(pred.size());
  const double mu = stats::mean(truth);
  double sse = 0.0, sae = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = truth[i] - pred[i];
    sse += e * e;
    sae += std::abs(e);
    sst += (truth[i] - mu) * (truth[i] - mu);
  }
  RegressionMetrics m;
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  if (sst > 0.0) m.r2 = 1.0 - sse / sst;
  m.pearson = stats::pearson(pred, truth);
  return m;
}

std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels, int bins) {
  if (scores.size() != labels.size()) throw DataError("calibration curve: length mismatch");
  if (bins < 1) throw ConfigError("calibration curve needs at least one bin");
  std::vector<CalibrationBin> all(static_cast<std::size_t>(bins));
  std::vector<double> sum_pred(all.size(), 0.0), sum_pos(all.size(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto b = static_cast<std::size_t>(std::floor(scores[i] * bins));
    b = std::min(b, all.size() - 1);
    sum_pred[b] += scores[i];
    sum_pos[b] += labels[i];
    ++all[b].count;
  }
  std::vector<CalibrationBin> out;
  for (std::size_t b = 0; b < all.size(); ++b) {
    if (all[b].count == 0) continue;
    CalibrationBin c = all[b];
    c.lower = static_cast<double>(b) / bins;
    c.upper = static_cast<double>(b + 1) / bins;
    c.mean_predicted = sum_pred[b] / static_cast<double>(c.count);
    c.observed_rate = sum_pos[b] / static_cast<double>(c.count);
    out.push_back(c);
  }
  return out;
}

ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                             int calibration_bins) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("classification metrics need equal-length, nonempty inputs");
  ClassificationMetrics m;
  double tp = 0, fp = 0, tn = 0, fn = 0, brier = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double e = scores[i] - labels[i];
    brier += e * e;
    const bool call = scores[i] >= 0.5;
    if (call && labels[i] == 1) ++tp;
    else if (call) ++fp;
    else if (labels[i] == 1) ++fn;
    else ++tn;
  }
  const double n = static_cast<double>(scores.size());
  m.brier = brier / n;
  m.auroc = stats::auroc(scores, labels);
  m.accuracy = (tp + tn) / n;
  m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.calibration = calibration_curve(scores, labels, calibration_bins);
  return m;
}

nlohmann::json to_json(const RegressionMetrics& m) {
  nlohmann::json j{{"rmse", m.rmse}, {"mae", m.mae}};
  j["r2"] = m.r2 ? nlohmann::json(*m.r2) : nlohmann::json();
  j["pearson"] = m.pearson ? nlohmann::json(*m.pearson) : nlohmann::json();
  return j;
}

nlohmann::json to_json(const ClassificationMetrics& m) {
  nlohmann::json j{{"brier", m.brier}, {"accuracy", m.accuracy}, {"precision", m.precision},
                   {"recall", m.recall}, {"f1", m.f1}};
  j["auroc"] = m.auroc ? nlohmann::json(*m.auroc) : nlohmann::json();
  auto bins = nlohmann::json::array();
  for (const auto& b : m.calibration)
    bins.push_back({{"lower", b.lower}, {"upper", b.upper}, {"mean_predicted", b.mean_predicted},
                    {"observed_rate", b.observed_rate}, {"count", b.count}});
  j["calibration_curve"] = std::move(bins);
  return j;
}

}  // namespace policylab
