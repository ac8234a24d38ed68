#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace policylab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Recommendation for one row. Defer means "leave the decision to the
// clinician"; evaluation then uses the factual treatment and outcome.
enum class Action : std::uint8_t { Treat0 = 0, Treat1 = 1, Defer = 2 };

// Whether larger outcomes are preferable.
enum class Direction : std::uint8_t { HigherBetter, LowerBetter };

inline bool better(double a, double b, Direction dir) {
  return dir == Direction::HigherBetter ? a > b : a < b;
}

// Independent stream for job `index` of a run seeded with `master`.
// Results never depend on which thread executes the job.
inline std::mt19937_64 derived_engine(std::uint64_t master, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9u};
  return std::mt19937_64(seq);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return derived_engine(master, index)();
}

}  // namespace policylab
