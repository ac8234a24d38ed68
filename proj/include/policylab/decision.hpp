#pragma once

#include <string>

#include "policylab/types.hpp"

namespace policylab {

// psi: treat when the estimated effect is on the favourable side of the
// threshold. Higher-better treats iff tau >= c, lower-better iff tau <= c.
struct DecisionRule {
  double threshold = 0.0;
  Direction direction = Direction::HigherBetter;

  bool treat(double tau) const { return direction == Direction::HigherBetter ? tau >= threshold : tau <= threshold; }

  // An effect value that psi maps to the requested decision.
  double pseudo_effect(bool treat_decision) const {
    const double step = direction == Direction::HigherBetter ? 1.0 : -1.0;
    return treat_decision ? threshold + step : threshold - step;
  }

  // Orientation in which larger scores mean "more benefit from treatment".
  double benefit(double tau) const { return direction == Direction::HigherBetter ? tau : -tau; }
};

const char* to_string(Direction d);
Direction direction_from_string(const std::string& s);

}  // namespace policylab
