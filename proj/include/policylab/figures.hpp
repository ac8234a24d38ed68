#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "policylab/policy_eval.hpp"

// Self-contained SVG figures. Output depends only on the inputs (no
// timestamps, fixed number formatting), so reruns are byte-identical.
namespace policylab::figures {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Box-plot summary: type-7 quartiles; whiskers reach the most extreme data
// point within 1.5 IQR of the box; anything beyond is an outlier.
struct BoxStats {
  std::size_t n = 0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
};

BoxStats box_stats(std::vector<double> values);

// Roughly `target` evenly spaced round tick values covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi, int target = 5);

std::string escape(const std::string& text);

// counts[s][b] is the height of bin b for series s; edges has bins + 1 entries.
// Optional vertical markers (e.g. overlap bounds) are drawn as dashed lines.
std::string histogram(const std::string& title, const std::vector<double>& edges,
                      const std::vector<std::pair<std::string, std::vector<double>>>& counts,
                      const std::vector<double>& markers = {});

std::string scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                    const std::vector<Series>& series, bool diagonal);

std::string boxplot(const std::string& title, const std::string& y_label,
                    const std::vector<std::pair<std::string, BoxStats>>& boxes);

// Polyline per series; `labels` annotate individual points (x, y, text).
struct PointLabel {
  double x = 0.0;
  double y = 0.0;
  std::string text;
};
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, const std::vector<PointLabel>& labels,
                       std::optional<std::pair<double, double>> x_range = std::nullopt);

std::string tree(const std::string& title, const OutcomeNode& root);

}  // namespace policylab::figures
