#include "policylab/decision.hpp"

#include "policylab/error.hpp"

namespace policylab {

const char* to_string(Direction d) { return d == Direction::HigherBetter ? "higher-better" : "lower-better"; }

Direction direction_from_string(const std::string& s) {
  if (s == "higher-better") return Direction::HigherBetter;
  if (s == "lower-better") return Direction::LowerBetter;
  throw ConfigError("unknown direction '" + s + "' (expected higher-better or lower-better)");
}

}  // namespace policylab
