#pragma once

#include <optional>
#include <span>
#include <vector>

#include "policylab/types.hpp"

// Small descriptive-statistics toolkit shared by every module.
namespace policylab::stats {

double mean(std::span<const double> x);
// Sample standard deviation (n - 1 denominator); 0 for n < 2.
double sd(std::span<const double> x);
// Linear-interpolation quantile of unsorted data (R type 7).
double quantile(std::span<const double> x, double q);
double quantile_sorted(std::span<const double> sorted, double q);
double median(std::span<const double> x);

// Pearson correlation; absent when either input has zero variance.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);
// Kendall tau-b; absent when either input is constant.
std::optional<double> kendall(std::span<const double> a, std::span<const double> b);
// Spearman rank correlation with midranks.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

// Midranks (1-based), ties share their average rank.
std::vector<double> ranks(std::span<const double> x);

// Mann-Whitney AUROC with midrank tie correction; absent for a single class.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

inline std::span<const double> view(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace policylab::stats
