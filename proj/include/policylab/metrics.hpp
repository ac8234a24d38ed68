#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace policylab {

struct RegressionMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;       // 1 - SSE/SST against the evaluation mean; absent when SST = 0
  std::optional<double> pearson;  // correlation of predictions and truths
};

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  double mean_predicted = 0.0;
  double observed_rate = 0.0;
  std::size_t count = 0;
};

struct ClassificationMetrics {
  double brier = 0.0;
  std::optional<double> auroc;  // absent when only one class is present
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<CalibrationBin> calibration;
};

RegressionMetrics regression_metrics(std::span<const double> predictions, std::span<const double> truths);

// Threshold metrics use score >= 0.5 as the positive call.
ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                             int calibration_bins = 10);

// Equal-width probability bins over [0, 1]; empty bins are omitted.
std::vector<CalibrationBin> calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                              int bins = 10);

nlohmann::json to_json(const RegressionMetrics& m);
nlohmann::json to_json(const ClassificationMetrics& m);

}  // namespace policylab
