#include "policylab/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "policylab/error.hpp"

namespace policylab {

namespace {

constexpr double kProbClip = 1e-6;

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

json vec_to_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json model_header(const char* type) { return {{"format", "policylab.model"}, {"version", kModelFormatVersion}, {"type", type}}; }

// Centering used by every linear solver; zero means when no intercept.
struct Centered {
  Matrix X;
  Vector y;
  Eigen::RowVectorXd x_mean;
  double y_mean = 0.0;
};

Centered center(const Matrix& X, const Vector& y, bool fit_intercept) {
  Centered c;
  if (fit_intercept) {
    c.x_mean = X.colwise().mean();
    c.y_mean = y.mean();
  } else {
    c.x_mean = Eigen::RowVectorXd::Zero(X.cols());
  }
  c.X = X.rowwise() - c.x_mean;
  c.y = y.array() - c.y_mean;
  return c;
}

LinearModel fit_least_squares_closed(const Matrix& X, const Vector& y, const LinearFitOptions& o) {
  const auto c = center(X, y, o.fit_intercept);
  const double lambda = o.penalty == Penalty::L2 ? o.lambda : 0.0;
  Matrix A = c.X.transpose() * c.X;
  A.diagonal().array() += lambda;
  const Vector rhs = c.X.transpose() * c.y;
  LinearModel m;
  if (lambda > 0.0) {
    m.coefficients = A.ldlt().solve(rhs);
  } else {
    m.coefficients = A.completeOrthogonalDecomposition().solve(rhs);
  }
  m.intercept = c.y_mean - c.x_mean.dot(m.coefficients);
  return m;
}

LinearModel fit_lasso(const Matrix& X, const Vector& y, const LinearFitOptions& o) {
  const auto c = center(X, y, o.fit_intercept);
  const auto n = static_cast<double>(X.rows());
  const Eigen::Index d = X.cols();
  const Vector col_sq = c.X.colwise().squaredNorm().transpose() / n;
  Vector w = Vector::Zero(d);
  Vector r = c.y;
  double violation = std::numeric_limits<double>::infinity();
  int sweep = 0;
  for (; sweep < o.max_cd_sweeps; ++sweep) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) <= 0.0) continue;
      const double rho = c.X.col(j).dot(r) / n + col_sq(j) * w(j);
      const double next = soft_threshold(rho, o.lambda) / col_sq(j);
      const double delta = next - w(j);
      if (delta != 0.0) {
        r.noalias() -= delta * c.X.col(j);
        w(j) = next;
      }
    }
    // Subgradient optimality of the current iterate.
    const Vector g = c.X.transpose() * r / n;
    violation = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (col_sq(j) <= 0.0) continue;
      const double v = w(j) != 0.0 ? std::abs(g(j) - o.lambda * (w(j) > 0 ? 1.0 : -1.0))
                                   : std::max(0.0, std::abs(g(j)) - o.lambda);
      violation = std::max(violation, v);
    }
    if (violation <= o.tolerance) break;
  }
  if (violation > o.tolerance)
    throw ConvergenceError("lasso coordinate descent did not converge", sweep, violation,
                           std::vector<double>(w.data(), w.data() + w.size()));
  LinearModel m;
  m.coefficients = w;
  m.intercept = c.y_mean - c.x_mean.dot(w);
  m.iterations = sweep + 1;
  return m;
}

double logistic_loss(const Vector& eta, const Vector& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) s += softplus(eta(i)) - y(i) * eta(i);
  return s;
}

LinearModel fit_logistic_newton(const Matrix& X, const Vector& y, const LinearFitOptions& o) {
  const Eigen::Index n = X.rows(), d = X.cols();
  const Eigen::Index off = o.fit_intercept ? 1 : 0;
  Matrix Z(n, d + off);
  if (off) Z.col(0).setOnes();
  Z.rightCols(d) = X;
  const double lambda = o.penalty == Penalty::L2 ? o.lambda : 0.0;
  Vector pen = Vector::Constant(d + off, lambda);
  if (off) pen(0) = 0.0;

  auto objective = [&](const Vector& theta) {
    return logistic_loss(Z * theta, y) + 0.5 * (pen.array() * theta.array().square()).sum();
  };

  Vector theta = Vector::Zero(d + off);
  double f = objective(theta);
  double gap = std::numeric_limits<double>::infinity();
  for (int it = 0; it < o.max_iterations; ++it) {
    const Vector eta = Z * theta;
    const Vector p = eta.unaryExpr([](double z) { return sigmoid(z); });
    const Vector grad = Z.transpose() * (p - y) + pen.cwiseProduct(theta);
    const Vector wts = p.array() * (1.0 - p.array());
    Matrix H = Z.transpose() * wts.asDiagonal() * Z;
    H.diagonal() += pen;
    H.diagonal().array() += 1e-12;
    const Vector step = H.ldlt().solve(grad);
    double t = 1.0;
    Vector next = theta - step;
    double f_next = objective(next);
    while (!(f_next <= f) && t > 1e-10) {
      t *= 0.5;
      next = theta - t * step;
      f_next = objective(next);
    }
    gap = (t * step).cwiseAbs().maxCoeff();
    const double decrease = f - f_next;
    if (f_next <= f) {
      theta = next;
      f = f_next;
    }
    if (gap < 1e-8 || (decrease >= 0.0 && decrease <= 1e-13 * (1.0 + std::abs(f)) && grad.cwiseAbs().maxCoeff() < 1e-6 * (1.0 + static_cast<double>(n)))) {
      LinearModel m;
      m.intercept = off ? theta(0) : 0.0;
      m.coefficients = theta.tail(d);
      m.iterations = it + 1;
      return m;
    }
  }
  throw ConvergenceError("logistic IRLS did not converge", o.max_iterations, gap,
                         std::vector<double>(theta.data(), theta.data() + theta.size()));
}

LinearModel fit_logistic_l1(const Matrix& X, const Vector& y, const LinearFitOptions& o) {
  const Eigen::Index n = X.rows(), d = X.cols();
  const double nn = static_cast<double>(n);
  double b = 0.0;
  if (o.fit_intercept) {
    const double rate = std::clamp(y.mean(), kProbClip, 1.0 - kProbClip);
    b = logit(rate);
  }
  Vector w = Vector::Zero(d);
  auto objective = [&](double bb, const Vector& ww) {
    const Vector eta = (X * ww).array() + bb;
    return logistic_loss(eta, y) / nn + o.lambda * ww.cwiseAbs().sum();
  };
  double f = objective(b, w);
  double gap = std::numeric_limits<double>::infinity();
  for (int it = 0; it < o.max_iterations; ++it) {
    const Vector eta = (X * w).array() + b;
    const Vector p = eta.unaryExpr([](double z) { return sigmoid(z); });
    const Vector wts = (p.array() * (1.0 - p.array())).max(1e-5);
    const Vector z = eta.array() + (y - p).array() / wts.array();

    // Weighted lasso on the quadratic model, warm-started at (b, w).
    double nb = b;
    Vector nw = w;
    Vector r = z - X * nw;
    r.array() -= nb;
    const Vector col_sq = (X.array().square().colwise() * wts.array()).colwise().sum().transpose() / nn;
    const double wsum = wts.sum();
    for (int sweep = 0; sweep < 10000; ++sweep) {
      double max_change = 0.0;
      if (o.fit_intercept) {
        const double delta = wts.dot(r) / wsum;
        nb += delta;
        r.array() -= delta;
        max_change = std::abs(delta);
      }
      for (Eigen::Index j = 0; j < d; ++j) {
        if (col_sq(j) <= 0.0) continue;
        const double rho = (X.col(j).array() * wts.array() * r.array()).sum() / nn + col_sq(j) * nw(j);
        const double next = soft_threshold(rho, o.lambda) / col_sq(j);
        const double delta = next - nw(j);
        if (delta != 0.0) {
          r.noalias() -= delta * X.col(j);
          nw(j) = next;
          max_change = std::max(max_change, std::abs(delta) * std::sqrt(col_sq(j)));
        }
      }
      if (max_change < 1e-10) break;
    }

    const double db = nb - b;
    const Vector dw = nw - w;
    double t = 1.0;
    double f_next = objective(b + db, w + dw);
    while (!(f_next <= f) && t > 1e-10) {
      t *= 0.5;
      f_next = objective(b + t * db, w + t * dw);
    }
    gap = std::max(std::abs(t * db), dw.size() ? (t * dw).cwiseAbs().maxCoeff() : 0.0);
    if (f_next <= f) {
      b += t * db;
      w += t * dw;
      f = f_next;
    }
    if (gap < 1e-8) {
      LinearModel m;
      m.intercept = b;
      m.coefficients = w;
      m.iterations = it + 1;
      return m;
    }
  }
  std::vector<double> last(w.data(), w.data() + w.size());
  last.insert(last.begin(), b);
  throw ConvergenceError("L1 logistic proximal Newton did not converge", o.max_iterations, gap, std::move(last));
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void Model::check_width(const Matrix& X) const {
  if (static_cast<std::size_t>(X.cols()) != n_features())
    throw DataError("model expects " + std::to_string(n_features()) + " features, got " +
                    std::to_string(X.cols()));
}

Vector ConstantModel::predict(const Matrix& X) const {
  check_width(X);
  return Vector::Constant(X.rows(), value_);
}

json ConstantModel::to_json() const {
  auto j = model_header("constant");
  j["value"] = value_;
  j["n_features"] = n_features_;
  j["family"] = family_;
  return j;
}

const char* to_string(LinearFamily f) { return f == LinearFamily::Logistic ? "logistic" : "least-squares"; }

const char* to_string(Penalty p) {
  switch (p) {
    case Penalty::None: return "none";
    case Penalty::L1: return "l1";
    case Penalty::L2: return "l2";
  }
  return "?";
}

Vector LinearModel::decision(const Matrix& X) const {
  check_width(X);
  return (X * coefficients).array() + intercept;
}

Vector LinearModel::predict(const Matrix& X) const {
  Vector z = decision(X);
  if (link == LinearFamily::Logistic) z = z.unaryExpr([](double v) { return sigmoid(v); });
  return z;
}

std::string LinearModel::family() const {
  if (!label.empty()) return label;
  if (link == LinearFamily::Logistic) return "logistic";
  switch (penalty) {
    case Penalty::None: return "ols";
    case Penalty::L1: return "lasso";
    case Penalty::L2: return "ridge";
  }
  return "linear";
}

json LinearModel::to_json() const {
  auto j = model_header("linear");
  j["family"] = to_string(link);
  j["penalty"] = to_string(penalty);
  j["lambda"] = lambda;
  j["intercept"] = intercept;
  j["coefficients"] = vec_to_json(coefficients);
  j["label"] = label;
  return j;
}

LinearModel fit_linear(const Matrix& X, const Vector& y, const LinearFitOptions& o) {
  if (X.rows() != y.size()) throw DataError("fit_linear: X and y lengths differ");
  if (X.rows() < 2) throw DataError("fit_linear: need at least 2 rows");
  if (X.hasNaN() || y.hasNaN()) throw DataError("fit_linear: inputs contain missing values");
  if (o.lambda < 0.0) throw ConfigError("fit_linear: lambda must be non-negative");
  LinearModel m;
  if (o.family == LinearFamily::LeastSquares) {
    m = o.penalty == Penalty::L1 ? fit_lasso(X, y, o) : fit_least_squares_closed(X, y, o);
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) != 0.0 && y(i) != 1.0) throw DataError("logistic regression needs 0/1 targets");
    m = o.penalty == Penalty::L1 ? fit_logistic_l1(X, y, o) : fit_logistic_newton(X, y, o);
  }
  m.link = o.family;
  m.penalty = o.penalty;
  m.lambda = o.penalty == Penalty::None ? 0.0 : o.lambda;
  return m;
}

double lasso_lambda_max(const Matrix& X, const Vector& y) {
  const auto c = center(X, y, true);
  return (c.X.transpose() * c.y).cwiseAbs().maxCoeff() / static_cast<double>(X.rows());
}

// ---------------------------------------------------------------------------

double RegressionTree::predict_row(const double* x, Eigen::Index stride) const {
  int k = 0;
  while (feature[static_cast<std::size_t>(k)] >= 0) {
    const auto kk = static_cast<std::size_t>(k);
    k = x[feature[kk] * stride] <= threshold[kk] ? left[kk] : right[kk];
  }
  return value[static_cast<std::size_t>(k)];
}

std::size_t RegressionTree::leaves() const {
  return static_cast<std::size_t>(std::count(feature.begin(), feature.end(), -1));
}

Vector BoostedTreesModel::margin(const Matrix& X, std::size_t n_trees) const {
  check_width(X);
  n_trees = std::min(n_trees, trees.size());
  Vector out = Vector::Constant(X.rows(), base_score);
  const Eigen::Index stride = X.rows();
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double* row = X.data() + i;
    double s = 0.0;
    for (std::size_t t = 0; t < n_trees; ++t) s += trees[t].predict_row(row, stride);
    out(i) += options.learning_rate * s;
  }
  return out;
}

Vector BoostedTreesModel::predict_staged(const Matrix& X, std::size_t n_trees) const {
  Vector m = margin(X, n_trees);
  if (options.loss == TreeLoss::Logistic) m = m.unaryExpr([](double v) { return sigmoid(v); });
  return m;
}

json BoostedTreesModel::to_json() const {
  auto j = model_header("gbt");
  j["loss"] = options.loss == TreeLoss::Logistic ? "logistic" : "squared";
  j["learning_rate"] = options.learning_rate;
  j["max_depth"] = options.max_depth;
  j["n_trees"] = options.n_trees;
  j["min_samples_leaf"] = options.min_samples_leaf;
  j["l2_leaf"] = options.l2_leaf;
  j["subsample"] = options.subsample;
  j["base_score"] = base_score;
  j["n_features"] = width;
  json arr = json::array();
  for (const auto& t : trees) {
    arr.push_back({{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left}, {"right", t.right},
                   {"value", t.value}});
  }
  j["trees"] = std::move(arr);
  return j;
}

BoostedTreesModel fit_gbt(const Matrix& X, const Vector& y, const GbtOptions& o, std::uint64_t seed) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n != y.size()) throw DataError("fit_gbt: X and y lengths differ");
  if (n < 2) throw DataError("fit_gbt: need at least 2 rows");
  if (X.hasNaN() || y.hasNaN()) throw DataError("fit_gbt: inputs contain missing values");
  if (o.n_trees < 0 || o.max_depth < 0 || o.learning_rate <= 0.0 || o.min_samples_leaf < 1 ||
      o.subsample <= 0.0 || o.subsample > 1.0)
    throw ConfigError("fit_gbt: invalid hyperparameters");

  BoostedTreesModel model;
  model.options = o;
  model.width = static_cast<std::size_t>(d);
  if (o.loss == TreeLoss::Squared) {
    model.base_score = y.mean();
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      if (y(i) != 0.0 && y(i) != 1.0) throw DataError("logistic boosting needs 0/1 targets");
    model.base_score = logit(std::clamp(y.mean(), kProbClip, 1.0 - kProbClip));
  }

  std::vector<std::vector<Eigen::Index>> order(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    auto& ord = order[static_cast<std::size_t>(j)];
    ord.resize(static_cast<std::size_t>(n));
    std::iota(ord.begin(), ord.end(), Eigen::Index{0});
    std::stable_sort(ord.begin(), ord.end(), [&](auto a, auto b) { return X(a, j) < X(b, j); });
  }

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(o.subsample);
  Vector F = Vector::Constant(n, model.base_score);
  Vector g(n), h(n);
  std::vector<int> node_of(static_cast<std::size_t>(n));
  const double l2 = o.l2_leaf;

  for (int m = 0; m < o.n_trees; ++m) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (o.loss == TreeLoss::Squared) {
        g(i) = F(i) - y(i);
        h(i) = 1.0;
      } else {
        const double p = sigmoid(F(i));
        g(i) = p - y(i);
        h(i) = p * (1.0 - p);
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      node_of[static_cast<std::size_t>(i)] = (o.subsample >= 1.0 || keep(rng)) ? 0 : -1;

    RegressionTree tree;
    struct Stat {
      double G = 0.0, H = 0.0;
      int count = 0;
    };
    std::vector<Stat> stat(1);
    tree.feature.push_back(-1);
    tree.threshold.push_back(0.0);
    tree.left.push_back(-1);
    tree.right.push_back(-1);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (node_of[static_cast<std::size_t>(i)] < 0) continue;
      stat[0].G += g(i);
      stat[0].H += h(i);
      ++stat[0].count;
    }
    std::vector<int> frontier{0};
    for (int depth = 0; depth < o.max_depth && !frontier.empty(); ++depth) {
      const std::size_t nodes = tree.feature.size();
      std::vector<char> candidate(nodes, 0);
      for (int k : frontier)
        if (stat[static_cast<std::size_t>(k)].count >= 2 * o.min_samples_leaf) candidate[static_cast<std::size_t>(k)] = 1;
      std::vector<double> best_gain(nodes, 1e-12);
      std::vector<int> best_feature(nodes, -1);
      std::vector<double> best_threshold(nodes, 0.0);
      std::vector<Stat> acc(nodes);
      std::vector<double> prev(nodes, 0.0);
      for (Eigen::Index j = 0; j < d; ++j) {
        std::fill(acc.begin(), acc.end(), Stat{});
        for (Eigen::Index i : order[static_cast<std::size_t>(j)]) {
          const int k = node_of[static_cast<std::size_t>(i)];
          if (k < 0 || !candidate[static_cast<std::size_t>(k)]) continue;
          const auto kk = static_cast<std::size_t>(k);
          const double x = X(i, j);
          Stat& a = acc[kk];
          if (a.count > 0 && x > prev[kk]) {
            const Stat& tot = stat[kk];
            const int right_count = tot.count - a.count;
            if (a.count >= o.min_samples_leaf && right_count >= o.min_samples_leaf) {
              const double GR = tot.G - a.G, HR = tot.H - a.H;
              if (a.H + l2 > 1e-12 && HR + l2 > 1e-12) {
                const double gain = a.G * a.G / (a.H + l2) + GR * GR / (HR + l2) - tot.G * tot.G / (tot.H + l2);
                if (gain > best_gain[kk]) {
                  best_gain[kk] = gain;
                  best_feature[kk] = static_cast<int>(j);
                  double mid = 0.5 * (prev[kk] + x);
                  if (!(mid < x)) mid = prev[kk];
                  best_threshold[kk] = mid;
                }
              }
            }
          }
          a.G += g(i);
          a.H += h(i);
          ++a.count;
          prev[kk] = x;
        }
      }
      std::vector<int> next_frontier;
      for (int k : frontier) {
        const auto kk = static_cast<std::size_t>(k);
        if (best_feature[kk] < 0) continue;
        const int lchild = static_cast<int>(tree.feature.size());
        const int rchild = lchild + 1;
        for (int c = 0; c < 2; ++c) {
          tree.feature.push_back(-1);
          tree.threshold.push_back(0.0);
          tree.left.push_back(-1);
          tree.right.push_back(-1);
          stat.push_back({});
        }
        tree.feature[kk] = best_feature[kk];
        tree.threshold[kk] = best_threshold[kk];
        tree.left[kk] = lchild;
        tree.right[kk] = rchild;
        next_frontier.push_back(lchild);
        next_frontier.push_back(rchild);
      }
      if (next_frontier.empty()) break;
      for (Eigen::Index i = 0; i < n; ++i) {
        int& k = node_of[static_cast<std::size_t>(i)];
        if (k < 0) continue;
        const auto kk = static_cast<std::size_t>(k);
        if (tree.feature[kk] < 0) continue;
        k = X(i, tree.feature[kk]) <= tree.threshold[kk] ? tree.left[kk] : tree.right[kk];
        Stat& s = stat[static_cast<std::size_t>(k)];
        s.G += g(i);
        s.H += h(i);
        ++s.count;
      }
      frontier = std::move(next_frontier);
    }
    tree.value.resize(tree.feature.size(), 0.0);
    for (std::size_t k = 0; k < tree.feature.size(); ++k) {
      const double denom = stat[k].H + l2;
      tree.value[k] = denom > 1e-12 ? -stat[k].G / denom : 0.0;
    }
    const Eigen::Index stride = n;
    for (Eigen::Index i = 0; i < n; ++i) F(i) += o.learning_rate * tree.predict_row(X.data() + i, stride);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------------------

Vector CalibratedClassifier::predict(const Matrix& X) const {
  const Vector s = base_->predict(X);
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double z = logit(std::clamp(s(i), kProbClip, 1.0 - kProbClip));
    out(i) = std::clamp(sigmoid(slope_ * z + offset_), kProbClip, 1.0 - kProbClip);
  }
  return out;
}

json CalibratedClassifier::to_json() const {
  auto j = model_header("calibrated");
  j["slope"] = slope_;
  j["offset"] = offset_;
  j["base"] = base_->to_json();
  return j;
}

CalibratedClassifier calibrate(ModelPtr model, const Matrix& X_val, const std::vector<int>& y_val) {
  if (static_cast<std::size_t>(X_val.rows()) != y_val.size() || y_val.empty())
    throw DataError("calibrate: validation set is empty or mismatched");
  const auto pos = std::count(y_val.begin(), y_val.end(), 1);
  if (pos == 0 || static_cast<std::size_t>(pos) == y_val.size())
    throw ValidationError("calibrate: validation labels contain a single class");
  const Vector s = model->predict(X_val);
  Matrix z(s.size(), 1);
  Vector y(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    z(i, 0) = logit(std::clamp(s(i), kProbClip, 1.0 - kProbClip));
    y(i) = y_val[static_cast<std::size_t>(i)];
  }
  // A whisper of L2 keeps the fit finite on separable validation scores.
  LinearFitOptions o;
  o.family = LinearFamily::Logistic;
  o.penalty = Penalty::L2;
  o.lambda = 1e-4;
  const auto fit = fit_linear(z, y, o);
  const double slope = std::max(fit.coefficients(0), 1e-6);
  return CalibratedClassifier(std::move(model), slope, fit.intercept);
}

// ---------------------------------------------------------------------------

const char* to_string(LearnerType t) {
  switch (t) {
    case LearnerType::Mean: return "mean";
    case LearnerType::Ols: return "ols";
    case LearnerType::Ridge: return "ridge";
    case LearnerType::Lasso: return "lasso";
    case LearnerType::Logistic: return "logistic";
    case LearnerType::Gbt: return "gbt";
  }
  return "?";
}

LearnerType learner_type_from_string(const std::string& s) {
  for (auto t : {LearnerType::Mean, LearnerType::Ols, LearnerType::Ridge, LearnerType::Lasso, LearnerType::Logistic,
                 LearnerType::Gbt})
    if (s == to_string(t)) return t;
  throw ConfigError("unknown learner type '" + s + "'");
}

std::string LearnerSpec::family() const { return to_string(type); }

ModelPtr LearnerSpec::fit_regressor(const Matrix& X, const Vector& y, std::uint64_t seed) const {
  LinearFitOptions o;
  switch (type) {
    case LearnerType::Mean:
      if (y.size() == 0) throw DataError("cannot fit a mean model on zero rows");
      return std::make_shared<ConstantModel>(y.mean(), static_cast<std::size_t>(X.cols()));
    case LearnerType::Ols:
      o.penalty = Penalty::None;
      break;
    case LearnerType::Ridge:
      o.penalty = Penalty::L2;
      o.lambda = lambda;
      break;
    case LearnerType::Lasso:
      o.penalty = Penalty::L1;
      o.lambda = lambda;
      break;
    case LearnerType::Gbt: {
      auto opts = gbt;
      opts.loss = TreeLoss::Squared;
      return std::make_shared<BoostedTreesModel>(fit_gbt(X, y, opts, seed));
    }
    case LearnerType::Logistic:
      throw ConfigError("learner '" + name + "' (logistic) cannot fit a regression target");
  }
  return std::make_shared<LinearModel>(fit_linear(X, y, o));
}

ModelPtr LearnerSpec::fit_classifier(const Matrix& X, const std::vector<int>& labels, std::uint64_t seed) const {
  Vector y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i)) = labels[i];
  switch (type) {
    case LearnerType::Mean: {
      if (labels.empty()) throw DataError("cannot fit a mean model on zero rows");
      const double rate = std::clamp(y.mean(), kProbClip, 1.0 - kProbClip);
      return std::make_shared<ConstantModel>(rate, static_cast<std::size_t>(X.cols()));
    }
    case LearnerType::Logistic: {
      LinearFitOptions o;
      o.family = LinearFamily::Logistic;
      o.penalty = logistic_penalty;
      o.lambda = lambda;
      return std::make_shared<LinearModel>(fit_linear(X, y, o));
    }
    case LearnerType::Gbt: {
      auto opts = gbt;
      opts.loss = TreeLoss::Logistic;
      return std::make_shared<BoostedTreesModel>(fit_gbt(X, y, opts, seed));
    }
    case LearnerType::Ols:
    case LearnerType::Ridge:
    case LearnerType::Lasso:
      break;
  }
  throw ConfigError("learner '" + name + "' (" + family() + ") cannot fit a classification target");
}

json LearnerSpec::to_json() const {
  json j{{"type", to_string(type)}};
  switch (type) {
    case LearnerType::Ridge:
    case LearnerType::Lasso:
      j["lambda"] = lambda;
      break;
    case LearnerType::Logistic:
      j["lambda"] = lambda;
      j["penalty"] = to_string(logistic_penalty);
      break;
    case LearnerType::Gbt:
      j["n_trees"] = gbt.n_trees;
      j["max_depth"] = gbt.max_depth;
      j["learning_rate"] = gbt.learning_rate;
      j["min_samples_leaf"] = gbt.min_samples_leaf;
      j["l2_leaf"] = gbt.l2_leaf;
      j["subsample"] = gbt.subsample;
      break;
    default:
      break;
  }
  return j;
}

LearnerSpec LearnerSpec::from_json(const json& j, const std::string& name) {
  if (!j.is_object()) throw ConfigError("learner '" + name + "' must be an object");
  LearnerSpec s;
  s.name = name;
  if (!j.contains("type")) throw ConfigError("learner '" + name + "' is missing 'type'");
  s.type = learner_type_from_string(j.at("type").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    if (key == "type") continue;
    if (key == "lambda" && (s.type == LearnerType::Ridge || s.type == LearnerType::Lasso || s.type == LearnerType::Logistic)) {
      s.lambda = value.get<double>();
      if (s.lambda < 0.0) throw ConfigError("learner '" + name + "': lambda must be non-negative");
    } else if (key == "penalty" && s.type == LearnerType::Logistic) {
      const auto p = value.get<std::string>();
      if (p == "none") s.logistic_penalty = Penalty::None;
      else if (p == "l1") s.logistic_penalty = Penalty::L1;
      else if (p == "l2") s.logistic_penalty = Penalty::L2;
      else throw ConfigError("learner '" + name + "': unknown penalty '" + p + "'");
    } else if (s.type == LearnerType::Gbt && key == "n_trees") {
      s.gbt.n_trees = value.get<int>();
    } else if (s.type == LearnerType::Gbt && key == "max_depth") {
      s.gbt.max_depth = value.get<int>();
    } else if (s.type == LearnerType::Gbt && key == "learning_rate") {
      s.gbt.learning_rate = value.get<double>();
    } else if (s.type == LearnerType::Gbt && key == "min_samples_leaf") {
      s.gbt.min_samples_leaf = value.get<int>();
    } else if (s.type == LearnerType::Gbt && key == "l2_leaf") {
      s.gbt.l2_leaf = value.get<double>();
    } else if (s.type == LearnerType::Gbt && key == "subsample") {
      s.gbt.subsample = value.get<double>();
    } else {
      throw ConfigError("learner '" + name + "': unknown key '" + key + "'");
    }
  }
  if (s.type == LearnerType::Gbt &&
      (s.gbt.n_trees < 1 || s.gbt.max_depth < 0 || s.gbt.learning_rate <= 0.0 || s.gbt.min_samples_leaf < 1 ||
       s.gbt.l2_leaf < 0.0 || s.gbt.subsample <= 0.0 || s.gbt.subsample > 1.0))
    throw ConfigError("learner '" + name + "': invalid boosting hyperparameters");
  return s;
}

ModelPtr model_from_json(const json& j) {
  if (j.value("format", "") != "policylab.model") throw DataError("not a policylab model document");
  if (j.value("version", 0) != kModelFormatVersion)
    throw DataError("unsupported model document version " + std::to_string(j.value("version", 0)));
  const auto type = j.at("type").get<std::string>();
  if (type == "constant")
    return std::make_shared<ConstantModel>(j.at("value").get<double>(), j.at("n_features").get<std::size_t>(),
                                           j.at("family").get<std::string>());
  if (type == "linear") {
    auto m = std::make_shared<LinearModel>();
    m->link = j.at("family") == "logistic" ? LinearFamily::Logistic : LinearFamily::LeastSquares;
    const auto p = j.at("penalty").get<std::string>();
    m->penalty = p == "l1" ? Penalty::L1 : (p == "l2" ? Penalty::L2 : Penalty::None);
    m->lambda = j.at("lambda").get<double>();
    m->intercept = j.at("intercept").get<double>();
    m->coefficients = vec_from_json(j.at("coefficients"));
    m->label = j.value("label", "");
    return m;
  }
  if (type == "gbt") {
    auto m = std::make_shared<BoostedTreesModel>();
    m->options.loss = j.at("loss") == "logistic" ? TreeLoss::Logistic : TreeLoss::Squared;
    m->options.learning_rate = j.at("learning_rate").get<double>();
    m->options.max_depth = j.at("max_depth").get<int>();
    m->options.n_trees = j.at("n_trees").get<int>();
    m->options.min_samples_leaf = j.at("min_samples_leaf").get<int>();
    m->options.l2_leaf = j.at("l2_leaf").get<double>();
    m->options.subsample = j.at("subsample").get<double>();
    m->base_score = j.at("base_score").get<double>();
    m->width = j.at("n_features").get<std::size_t>();
    for (const auto& t : j.at("trees")) {
      RegressionTree tree;
      tree.feature = t.at("feature").get<std::vector<int>>();
      tree.threshold = t.at("threshold").get<std::vector<double>>();
      tree.left = t.at("left").get<std::vector<int>>();
      tree.right = t.at("right").get<std::vector<int>>();
      tree.value = t.at("value").get<std::vector<double>>();
      m->trees.push_back(std::move(tree));
    }
    return m;
  }
  if (type == "calibrated")
    return std::make_shared<CalibratedClassifier>(model_from_json(j.at("base")), j.at("slope").get<double>(),
                                                  j.at("offset").get<double>());
  throw DataError("unknown model type '" + type + "'");
}

}  // namespace policylab
