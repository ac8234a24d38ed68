#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "policylab/types.hpp"

namespace fixtures {

inline policylab::Matrix gaussian_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  policylab::Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = z(rng);
  return X;
}

inline policylab::Vector gaussian_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, scale);
  policylab::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = z(rng);
  return v;
}

inline std::vector<int> bernoulli(std::size_t n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  std::vector<int> out(n);
  for (auto& v : out) v = b(rng) ? 1 : 0;
  return out;
}

inline policylab::Vector to_vector(const std::vector<int>& v) {
  policylab::Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

inline std::vector<double> to_std(const policylab::Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace fixtures
