#include "policylab/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "policylab/stats.hpp"

namespace policylab::figures {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 56.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof kPalette[0])]; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::pair<double, double> padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

class Canvas {
 public:
  Canvas(double width, double height, double bottom = kBottom) : width_(width), height_(height), bottom_(bottom) {
    out_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
         << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out_ << "<rect x=\"0\" y=\"0\" width=\"" << num(width) << "\" height=\"" << num(height) << "\" fill=\"white\"/>\n";
  }

  void set_ranges(double x0, double x1, double y0, double y1) {
    x0_ = x0;
    x1_ = x1;
    y0_ = y0;
    y1_ = y1;
  }

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (width_ - kLeft - kRight); }
  double py(double y) const { return height_ - bottom_ - (y - y0_) / (y1_ - y0_) * (height_ - kTop - bottom_); }
  double plot_right() const { return width_ - kRight; }

  void title(const std::string& t) {
    out_ << "<text x=\"" << num(width_ / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(t)
         << "</text>\n";
  }

  void axes(const std::string& x_label, const std::string& y_label, bool x_ticks = true) {
    const double left = kLeft, right = plot_right(), top = kTop, bottom = height_ - bottom_;
    out_ << "<rect x=\"" << num(left) << "\" y=\"" << num(top) << "\" width=\"" << num(right - left) << "\" height=\""
         << num(bottom - top) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (double t : nice_ticks(y0_, y1_)) {
      if (t < y0_ || t > y1_) continue;
      out_ << "<line x1=\"" << num(left - 4) << "\" y1=\"" << num(py(t)) << "\" x2=\"" << num(right) << "\" y2=\""
           << num(py(t)) << "\" stroke=\"#ddd\"/>\n";
      out_ << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\">"
           << tick_label(t) << "</text>\n";
    }
    if (x_ticks) {
      for (double t : nice_ticks(x0_, x1_)) {
        if (t < x0_ || t > x1_) continue;
        out_ << "<line x1=\"" << num(px(t)) << "\" y1=\"" << num(bottom) << "\" x2=\"" << num(px(t)) << "\" y2=\""
             << num(bottom + 4) << "\" stroke=\"#444\"/>\n";
        out_ << "<text x=\"" << num(px(t)) << "\" y=\"" << num(bottom + 17) << "\" text-anchor=\"middle\">"
             << tick_label(t) << "</text>\n";
      }
    }
    out_ << "<text x=\"" << num((left + right) / 2) << "\" y=\"" << num(height_ - 12)
         << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
    out_ << "<text x=\"16\" y=\"" << num((top + bottom) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
         << num((top + bottom) / 2) << ")\">" << escape(y_label) << "</text>\n";
  }

  void legend(const std::vector<std::string>& labels) {
    const double x = plot_right() + 14;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double y = kTop + 10 + 18.0 * static_cast<double>(i);
      out_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y - 9) << "\" width=\"12\" height=\"12\" fill=\"" << color(i)
           << "\"/>\n";
      out_ << "<text x=\"" << num(x + 18) << "\" y=\"" << num(y + 1) << "\">" << escape(labels[i]) << "</text>\n";
    }
  }

  std::ostringstream& raw() { return out_; }

  std::string finish() {
    out_ << "</svg>\n";
    return out_.str();
  }

 private:
  double width_, height_, bottom_;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
  std::ostringstream out_;
};

}  // namespace

std::string escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) return {lo};
  const double raw = (hi - lo) / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) ticks.push_back(t);
  return ticks;
}

BoxStats box_stats(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }), values.end());
  BoxStats b;
  b.n = values.size();
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  b.q1 = stats::quantile_sorted(values, 0.25);
  b.median = stats::quantile_sorted(values, 0.5);
  b.q3 = stats::quantile_sorted(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      b.outliers.push_back(v);
      continue;
    }
    b.whisker_low = std::min(b.whisker_low, v);
    b.whisker_high = std::max(b.whisker_high, v);
  }
  return b;
}

std::string histogram(const std::string& title, const std::vector<double>& edges,
                      const std::vector<std::pair<std::string, std::vector<double>>>& counts,
                      const std::vector<double>& markers) {
  Canvas c(kWidth, kHeight);
  double top = 0.0;
  for (const auto& [_, v] : counts)
    for (double h : v) top = std::max(top, h);
  const double x0 = edges.empty() ? 0.0 : edges.front();
  const double x1 = edges.size() < 2 ? 1.0 : edges.back();
  c.set_ranges(x0, x1, 0.0, top > 0.0 ? top * 1.05 : 1.0);
  c.title(title);
  c.axes("score", "count");
  auto& o = c.raw();
  const std::size_t s_count = std::max<std::size_t>(1, counts.size());
  for (std::size_t s = 0; s < counts.size(); ++s) {
    const auto& v = counts[s].second;
    for (std::size_t b = 0; b + 1 < edges.size() && b < v.size(); ++b) {
      const double left = c.px(edges[b]);
      const double width = (c.px(edges[b + 1]) - left) / static_cast<double>(s_count);
      const double x = left + width * static_cast<double>(s);
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(c.py(v[b])) << "\" width=\"" << num(width) << "\" height=\""
        << num(c.py(0.0) - c.py(v[b])) << "\" fill=\"" << color(s) << "\" fill-opacity=\"0.75\"/>\n";
    }
  }
  for (double m : markers)
    o << "<line x1=\"" << num(c.px(m)) << "\" y1=\"" << num(c.py(0.0)) << "\" x2=\"" << num(c.px(m)) << "\" y2=\""
      << num(kTop) << "\" stroke=\"#000\" stroke-dasharray=\"5,4\"/>\n";
  std::vector<std::string> labels;
  for (const auto& [label, _] : counts) labels.push_back(label);
  c.legend(labels);
  return c.finish();
}

std::string scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                    const std::vector<Series>& series, bool diagonal) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  double ylo = lo, yhi = -lo;
  for (const auto& s : series) {
    for (double v : s.x)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : s.y)
      if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  if (diagonal) {
    lo = ylo = std::min(lo, ylo);
    hi = yhi = std::max(hi, yhi);
  }
  const auto [x0, x1] = padded(lo, hi);
  const auto [y0, y1] = padded(ylo, yhi);
  Canvas c(kWidth, kHeight);
  c.set_ranges(x0, x1, y0, y1);
  c.title(title);
  c.axes(x_label, y_label);
  auto& o = c.raw();
  if (diagonal) {
    const double a = std::max(x0, y0), b = std::min(x1, y1);
    o << "<line x1=\"" << num(c.px(a)) << "\" y1=\"" << num(c.py(a)) << "\" x2=\"" << num(c.px(b)) << "\" y2=\""
      << num(c.py(b)) << "\" stroke=\"#888\" stroke-dasharray=\"4,4\"/>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) continue;
      o << "<circle cx=\"" << num(c.px(sr.x[i])) << "\" cy=\"" << num(c.py(sr.y[i])) << "\" r=\"3.5\" fill=\""
        << color(s) << "\" fill-opacity=\"0.8\"/>\n";
    }
  }
  std::vector<std::string> labels;
  for (const auto& s : series) labels.push_back(s.label);
  c.legend(labels);
  return c.finish();
}

std::string boxplot(const std::string& title, const std::string& y_label,
                    const std::vector<std::pair<std::string, BoxStats>>& boxes) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [_, b] : boxes) {
    if (b.n == 0) continue;
    lo = std::min(lo, b.whisker_low);
    hi = std::max(hi, b.whisker_high);
    for (double v : b.outliers) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const auto [y0, y1] = padded(lo, hi);
  const double width = std::max(kWidth, kLeft + kRight + 70.0 * static_cast<double>(boxes.size()));
  std::size_t longest = 0;
  for (const auto& [label, _] : boxes) longest = std::max(longest, label.size());
  const double bottom = kBottom + std::min(160.0, 4.2 * static_cast<double>(longest));
  Canvas c(width, kHeight - kBottom + bottom, bottom);
  const double k = static_cast<double>(std::max<std::size_t>(1, boxes.size()));
  c.set_ranges(0.0, k, y0, y1);
  c.title(title);
  c.axes("", y_label, false);
  auto& o = c.raw();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& [label, b] = boxes[i];
    const double cx = c.px(static_cast<double>(i) + 0.5);
    const double half = std::min(22.0, (c.px(1.0) - c.px(0.0)) * 0.3);
    const double base = c.py(y0) + 14;
    o << "<text x=\"" << num(cx) << "\" y=\"" << num(base) << "\" text-anchor=\"end\" transform=\"rotate(-35 "
      << num(cx) << ' ' << num(base) << ")\">" << escape(label) << "</text>\n";
    if (b.n == 0) continue;
    o << "<line x1=\"" << num(cx) << "\" y1=\"" << num(c.py(b.whisker_low)) << "\" x2=\"" << num(cx) << "\" y2=\""
      << num(c.py(b.q1)) << "\" stroke=\"#333\"/>\n";
    o << "<line x1=\"" << num(cx) << "\" y1=\"" << num(c.py(b.q3)) << "\" x2=\"" << num(cx) << "\" y2=\""
      << num(c.py(b.whisker_high)) << "\" stroke=\"#333\"/>\n";
    for (double w : {b.whisker_low, b.whisker_high})
      o << "<line x1=\"" << num(cx - half / 2) << "\" y1=\"" << num(c.py(w)) << "\" x2=\"" << num(cx + half / 2)
        << "\" y2=\"" << num(c.py(w)) << "\" stroke=\"#333\"/>\n";
    o << "<rect x=\"" << num(cx - half) << "\" y=\"" << num(c.py(b.q3)) << "\" width=\"" << num(2 * half)
      << "\" height=\"" << num(c.py(b.q1) - c.py(b.q3)) << "\" fill=\"" << color(i) << "\" fill-opacity=\"0.5\" stroke=\"#333\"/>\n";
    o << "<line x1=\"" << num(cx - half) << "\" y1=\"" << num(c.py(b.median)) << "\" x2=\"" << num(cx + half)
      << "\" y2=\"" << num(c.py(b.median)) << "\" stroke=\"#000\" stroke-width=\"2\"/>\n";
    for (double v : b.outliers)
      o << "<circle cx=\"" << num(cx) << "\" cy=\"" << num(c.py(v)) << "\" r=\"2.5\" fill=\"none\" stroke=\"#333\"/>\n";
  }
  return c.finish();
}

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, const std::vector<PointLabel>& labels,
                       std::optional<std::pair<double, double>> x_range) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, ylo = lo, yhi = -lo;
  for (const auto& s : series) {
    for (double v : s.x)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    for (double v : s.y)
      if (std::isfinite(v)) ylo = std::min(ylo, v), yhi = std::max(yhi, v);
  }
  for (const auto& l : labels) ylo = std::min(ylo, l.y), yhi = std::max(yhi, l.y);
  const auto [x0, x1] = x_range ? *x_range : padded(lo, hi);
  const auto [y0, y1] = padded(ylo, yhi);
  Canvas c(kWidth, kHeight);
  c.set_ranges(x0, x1, y0, y1);
  c.title(title);
  c.axes(x_label, y_label);
  auto& o = c.raw();
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    std::string points;
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) continue;
      points += num(c.px(sr.x[i])) + "," + num(c.py(sr.y[i])) + " ";
    }
    if (!points.empty()) points.pop_back();
    o << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"" << color(s) << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.y[i])) continue;
      o << "<circle cx=\"" << num(c.px(sr.x[i])) << "\" cy=\"" << num(c.py(sr.y[i])) << "\" r=\"2.5\" fill=\""
        << color(s) << "\"/>\n";
    }
  }
  for (const auto& l : labels) {
    const bool right_half = c.px(l.x) > (kLeft + c.plot_right()) / 2;
    o << "<circle cx=\"" << num(c.px(l.x)) << "\" cy=\"" << num(c.py(l.y)) << "\" r=\"5\" fill=\"none\" stroke=\"#000\"/>\n";
    o << "<text x=\"" << num(c.px(l.x) + (right_half ? -8 : 8)) << "\" y=\"" << num(c.py(l.y) - 8)
      << "\" text-anchor=\"" << (right_half ? "end" : "start") << "\">" << escape(l.text) << "</text>\n";
  }
  std::vector<std::string> names;
  for (const auto& s : series) names.push_back(s.label);
  c.legend(names);
  return c.finish();
}

std::string tree(const std::string& title, const OutcomeNode& root) {
  // Leaves get consecutive slots; parents sit above the middle of their children.
  std::vector<std::vector<std::pair<const OutcomeNode*, double>>> levels;
  double next_slot = 0.0;
  std::function<double(const OutcomeNode&, std::size_t)> place = [&](const OutcomeNode& n, std::size_t depth) {
    if (levels.size() <= depth) levels.resize(depth + 1);
    double pos;
    if (n.children.empty()) {
      pos = next_slot++;
    } else {
      double sum = 0.0;
      for (const auto& ch : n.children) sum += place(ch, depth + 1);
      pos = sum / static_cast<double>(n.children.size());
    }
    levels[depth].push_back({&n, pos});
    return pos;
  };
  place(root, 0);
  const double slots = std::max(1.0, next_slot);
  const double box_w = 120.0, box_h = 54.0, gap_y = 50.0;
  const double width = std::max(kWidth, slots * (box_w + 16.0) + 40.0);
  const double height = 60.0 + static_cast<double>(levels.size()) * (box_h + gap_y);
  auto cx = [&](double slot) { return 20.0 + (slot + 0.5) * (width - 40.0) / slots; };
  auto cy = [&](std::size_t depth) { return 50.0 + static_cast<double>(depth) * (box_h + gap_y); };

  Canvas c(width, height);
  c.title(title);
  auto& o = c.raw();
  std::function<void(const OutcomeNode&, std::size_t, double)> edges = [&](const OutcomeNode& n, std::size_t depth,
                                                                          double pos) {
    for (const auto& ch : n.children) {
      double child_pos = 0.0;
      for (const auto& [node, p] : levels[depth + 1])
        if (node == &ch) child_pos = p;
      o << "<line x1=\"" << num(cx(pos)) << "\" y1=\"" << num(cy(depth) + box_h) << "\" x2=\"" << num(cx(child_pos))
        << "\" y2=\"" << num(cy(depth + 1)) << "\" stroke=\"#666\"/>\n";
      edges(ch, depth + 1, child_pos);
    }
  };
  edges(root, 0, levels[0].front().second);
  for (std::size_t d = 0; d < levels.size(); ++d) {
    for (const auto& [node, pos] : levels[d]) {
      const double x = cx(pos) - box_w / 2, y = cy(d);
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(box_w) << "\" height=\"" << num(box_h)
        << "\" rx=\"6\" fill=\"#f3f6fa\" stroke=\"#335\"/>\n";
      o << "<text x=\"" << num(cx(pos)) << "\" y=\"" << num(y + 16) << "\" text-anchor=\"middle\" font-weight=\"bold\">"
        << escape(node->label) << "</text>\n";
      o << "<text x=\"" << num(cx(pos)) << "\" y=\"" << num(y + 32) << "\" text-anchor=\"middle\">n = " << node->n
        << "</text>\n";
      const std::string mean = node->mean ? tick_label(*node->mean) + (node->sem ? " (" + tick_label(*node->sem) + ")" : "") : "-";
      o << "<text x=\"" << num(cx(pos)) << "\" y=\"" << num(y + 47) << "\" text-anchor=\"middle\">" << escape(mean)
        << "</text>\n";
    }
  }
  return c.finish();
}

}  // namespace policylab::figures
