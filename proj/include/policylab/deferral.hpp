#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "policylab/cate.hpp"
#include "policylab/ingest.hpp"
#include "policylab/propensity.hpp"
#include "policylab/table.hpp"

namespace policylab {

// Inclusive defers outside overlap only; conservative also defers when the
// effect interval contains zero.
enum class DeferralMode : std::uint8_t { Inclusive, Conservative };

const char* to_string(DeferralMode m);
DeferralMode deferral_mode_from_string(const std::string& s);

enum class DeferReason : std::uint8_t { None, Overlap, Uncertainty };

const char* to_string(DeferReason r);

struct DeferralRule {
  OverlapBounds bounds;
  DeferralMode mode = DeferralMode::Inclusive;
};

// Overlap is checked first, so a row outside overlap reports Overlap even
// when its interval also contains zero.
DeferReason evaluate_deferral(const DeferralRule& rule, double e, std::optional<std::pair<double, double>> interval);

struct DeferralResult {
  std::vector<DeferReason> reasons;

  std::vector<bool> deferred() const;
  std::size_t count() const;
  std::size_t count(DeferReason r) const;
  Table to_table(const std::vector<std::string>& row_ids) const;
};

// intervals may be null only in inclusive mode.
DeferralResult apply_deferral(const DeferralRule& rule, const Vector& e, const CateIntervals* intervals);

struct SubpopCharacterization {
  std::vector<std::string> names;
  Vector coefficients;  // on standardized covariates
  double intercept = 0.0;
  double lambda = 0.0;
  // Nonzero coefficients by decreasing magnitude.
  std::vector<std::pair<std::string, double>> ranking;
  Summary summary;  // Overall / Rec / Def

  Table coefficient_table() const;
  nlohmann::json to_json() const;
};

// L1 logistic regression of the deferral flag on standardized covariates.
SubpopCharacterization characterize_subpop(const std::vector<bool>& deferred, const Dataset& data, double lambda = 0.01);

}  // namespace policylab
