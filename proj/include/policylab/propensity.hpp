#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "policylab/ingest.hpp"
#include "policylab/learners.hpp"
#include "policylab/metrics.hpp"
#include "policylab/table.hpp"

namespace policylab {

inline constexpr double kScoreClip = 1e-6;

struct OverlapBounds {
  double low = 0.1;
  double high = 0.9;
};

enum class BoundsMethod : std::uint8_t { Fixed, Quantile, MinimumCount };

const char* to_string(BoundsMethod m);
BoundsMethod bounds_method_from_string(const std::string& s);

// How (eta_l, eta_h) are chosen from training scores.
//   fixed:          (low, high) as given
//   quantile:       eta_l = max over arms of the q_low score quantile,
//                   eta_h = min over arms of the q_high quantile
//                   (pooled quantiles when no treatment vector is supplied)
//   minimum-count:  eta_l = max over arms of the k-th smallest score,
//                   eta_h = min over arms of the k-th largest score, so each
//                   arm keeps at least k units at or beyond each bound
struct BoundsSpec {
  BoundsMethod method = BoundsMethod::Fixed;
  double low = 0.1;   // fixed bound or lower quantile level
  double high = 0.9;  // fixed bound or upper quantile level
  std::size_t min_count = 10;

  nlohmann::json to_json() const;
  static BoundsSpec from_json(const nlohmann::json& j);
};

OverlapBounds select_overlap_bounds(std::span<const double> scores, const BoundsSpec& spec,
                                    std::optional<std::span<const int>> treatment = std::nullopt);

// True iff low <= score <= high.
std::vector<bool> overlap_mask(std::span<const double> scores, const OverlapBounds& bounds);

struct PropensityModel {
  ModelPtr scorer;
  OverlapBounds bounds;
  ClassificationMetrics fit_metrics;  // measured on the calibration split
  std::optional<double> train_auroc;

  // e(x) clipped to [kScoreClip, 1 - kScoreClip].
  Vector score(const Matrix& X) const;

  nlohmann::json to_json() const;
  static PropensityModel from_json(const nlohmann::json& j);
};

struct PropensityOptions {
  LearnerSpec learner{"propensity", LearnerType::Gbt};
  bool recalibrate = true;
  BoundsSpec bounds{};
};

// Fits the classifier on train, recalibrates it on the calibration split and
// selects bounds from the (recalibrated) training scores.
PropensityModel fit_propensity(const Dataset& train, const Dataset& calibration, const PropensityOptions& options,
                               std::uint64_t seed);

struct ArmHistogram {
  std::vector<std::size_t> before;
  std::vector<std::size_t> after;  // inside the overlap interval only
  std::size_t inside = 0;
  std::size_t outside = 0;
};

struct OverlapReport {
  std::vector<double> edges;          // bins + 1 equal-width edges over [0, 1]
  std::array<ArmHistogram, 2> arms;   // indexed by treatment
  OverlapBounds bounds;
  std::optional<double> auroc;        // scores versus observed treatment
  double flag_threshold = 0.95;
  bool flag = false;                  // possible lack of overlap

  nlohmann::json to_json() const;
  Table histogram_table() const;
};

OverlapReport overlap_report(std::span<const double> scores, std::span<const int> treatment,
                             const OverlapBounds& bounds, int bins = 20, double flag_threshold = 0.95);

}  // namespace policylab
