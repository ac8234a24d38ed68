#include "policylab/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "policylab/error.hpp"
#include "policylab/stats.hpp"

namespace policylab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kIndicatorSuffix = "__missing";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

// Empty, NA-like or unparseable cells are missing.
double parse_cell(const std::string& s) {
  if (s.empty()) return kNaN;
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return kNaN;
  return v;
}

ColumnKind infer_kind(const Matrix& X, Eigen::Index j) {
  bool any = false;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double v = X(i, j);
    if (std::isnan(v)) continue;
    any = true;
    if (v != 0.0 && v != 1.0) return ColumnKind::Numeric;
  }
  return any ? ColumnKind::Binary : ColumnKind::Numeric;
}

std::vector<double> column_values(const Dataset& d, std::size_t j, const std::vector<std::size_t>& rows,
                                  bool skip_missing) {
  std::vector<double> v;
  v.reserve(rows.size());
  for (auto i : rows) {
    const double x = d.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (skip_missing && std::isnan(x)) continue;
    v.push_back(x);
  }
  return v;
}

}  // namespace

const char* to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::Numeric: return "numeric";
    case ColumnKind::Binary: return "binary";
    case ColumnKind::MissingIndicator: return "missing-indicator";
  }
  return "?";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.columns = columns;
  out.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
  out.outcome.resize(static_cast<Eigen::Index>(rows.size()));
  for (const auto& [name, v] : secondary_outcomes) out.secondary_outcomes[name].resize(out.outcome.size());
  out.treatment.reserve(rows.size());
  out.split.reserve(rows.size());
  out.row_ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(rows[k]);
    const auto kk = static_cast<Eigen::Index>(k);
    out.covariates.row(kk) = covariates.row(i);
    out.outcome(kk) = outcome(i);
    for (const auto& [name, v] : secondary_outcomes) out.secondary_outcomes[name](kk) = v(i);
    out.treatment.push_back(treatment[rows[k]]);
    if (!split.empty()) out.split.push_back(split[rows[k]]);
    if (!row_ids.empty()) out.row_ids.push_back(row_ids[rows[k]]);
  }
  return out;
}

std::optional<std::size_t> Dataset::column_index(const std::string& name) const {
  for (std::size_t j = 0; j < columns.size(); ++j)
    if (columns[j].name == name) return j;
  return std::nullopt;
}

bool Dataset::has_missing() const { return covariates.hasNaN(); }

void Dataset::validate() const {
  const auto n = rows();
  if (static_cast<std::size_t>(outcome.size()) != n || static_cast<std::size_t>(covariates.rows()) != n ||
      split.size() != n || row_ids.size() != n)
    throw ValidationError("dataset component lengths disagree");
  if (static_cast<std::size_t>(covariates.cols()) != columns.size())
    throw ValidationError("covariate matrix width disagrees with column metadata");
  for (std::size_t i = 0; i < n; ++i) {
    if (treatment[i] != 0 && treatment[i] != 1)
      throw ValidationError("treatment must be 0 or 1", static_cast<long>(i));
    if (!std::isfinite(outcome(static_cast<Eigen::Index>(i))))
      throw ValidationError("outcome is missing", static_cast<long>(i));
  }
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].kind != ColumnKind::MissingIndicator) continue;
    for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
      const double v = covariates(i, static_cast<Eigen::Index>(j));
      if (v != 0.0 && v != 1.0)
        throw ValidationError("missing indicator '" + columns[j].name + "' not in {0,1}", static_cast<long>(i));
    }
  }
}

Dataset load_table(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  return load_table(in, schema);
}

Dataset load_table(std::istream& in, const Schema& schema) {
  if (schema.treatment.empty() || schema.outcome.empty())
    throw SchemaError("schema must name one treatment and one outcome column");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("data file is empty (no header row)");
  const auto header = split_line(line, schema.delimiter);

  auto find = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing mandatory column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t t_col = find(schema.treatment);
  const std::size_t y_col = find(schema.outcome);
  std::optional<std::size_t> id_col;
  if (schema.id_column) id_col = find(*schema.id_column);
  std::vector<std::size_t> sec_cols;
  for (const auto& s : schema.secondary_outcomes) sec_cols.push_back(find(s));

  std::vector<std::size_t> cov_cols;
  if (schema.covariates.empty()) {
    std::set<std::size_t> taken{t_col, y_col};
    if (id_col) taken.insert(*id_col);
    taken.insert(sec_cols.begin(), sec_cols.end());
    for (std::size_t j = 0; j < header.size(); ++j)
      if (!taken.count(j)) cov_cols.push_back(j);
  } else {
    for (const auto& c : schema.covariates) cov_cols.push_back(find(c));
  }

  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_line(line, schema.delimiter);
    if (fields.size() != header.size())
      throw ValidationError("expected " + std::to_string(header.size()) + " fields, found " +
                                std::to_string(fields.size()),
                            static_cast<long>(cells.size()));
    cells.push_back(std::move(fields));
  }

  Dataset d;
  const auto n = static_cast<Eigen::Index>(cells.size());
  d.covariates.resize(n, static_cast<Eigen::Index>(cov_cols.size()));
  d.outcome.resize(n);
  for (const auto& s : schema.secondary_outcomes) d.secondary_outcomes[s].resize(n);
  d.treatment.resize(cells.size());
  d.split.assign(cells.size(), Split::Train);
  d.row_ids.resize(cells.size());

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = cells[static_cast<std::size_t>(i)];
    const double t = parse_cell(row[t_col]);
    if (std::isnan(t)) throw ValidationError("treatment value is missing", static_cast<long>(i));
    if (t != 0.0 && t != 1.0)
      throw ValidationError("treatment value '" + row[t_col] + "' outside {0,1}", static_cast<long>(i));
    d.treatment[static_cast<std::size_t>(i)] = static_cast<int>(t);
    const double y = parse_cell(row[y_col]);
    if (std::isnan(y)) throw ValidationError("outcome value is missing", static_cast<long>(i));
    d.outcome(i) = y;
    for (std::size_t k = 0; k < sec_cols.size(); ++k)
      d.secondary_outcomes[schema.secondary_outcomes[k]](i) = parse_cell(row[sec_cols[k]]);
    for (std::size_t j = 0; j < cov_cols.size(); ++j)
      d.covariates(i, static_cast<Eigen::Index>(j)) = parse_cell(row[cov_cols[j]]);
    d.row_ids[static_cast<std::size_t>(i)] = id_col ? row[*id_col] : std::to_string(i);
  }
  for (std::size_t j = 0; j < cov_cols.size(); ++j)
    d.columns.push_back({header[cov_cols[j]], infer_kind(d.covariates, static_cast<Eigen::Index>(j))});
  return d;
}

Imputed impute_and_flag(const Dataset& data, const std::optional<ImputationStats>& given) {
  ImputationStats stats;
  if (given) {
    stats = *given;
  } else {
    auto train = data.indices(Split::Train);
    if (train.empty()) throw DataError("cannot compute imputation statistics: train split is empty");
    for (std::size_t j = 0; j < data.cols(); ++j) {
      const auto& col = data.columns[j];
      if (col.kind == ColumnKind::MissingIndicator) continue;
      const auto vals = column_values(data, j, train, true);
      if (vals.empty()) throw DataError("column '" + col.name + "' is entirely missing on the train split");
      stats.names.push_back(col.name);
      stats.median.push_back(stats::median(vals));
      stats.mean.push_back(stats::mean(vals));
      stats.sd.push_back(stats::sd(vals));
      if (data.covariates.col(static_cast<Eigen::Index>(j)).hasNaN()) stats.indicator_columns.push_back(col.name);
    }
  }

  std::vector<ColumnInfo> columns = data.columns;
  std::vector<Vector> extra;
  Matrix X = data.covariates;
  for (std::size_t k = 0; k < stats.names.size(); ++k) {
    const auto j = data.column_index(stats.names[k]);
    if (!j) throw SchemaError("imputation statistics name unknown column '" + stats.names[k] + "'");
    const auto jj = static_cast<Eigen::Index>(*j);
    const bool wants_indicator = std::find(stats.indicator_columns.begin(), stats.indicator_columns.end(),
                                           stats.names[k]) != stats.indicator_columns.end();
    const std::string ind_name = stats.names[k] + kIndicatorSuffix;
    const bool has_indicator = data.column_index(ind_name).has_value();
    Vector ind = Vector::Zero(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (std::isnan(X(i, jj))) {
        X(i, jj) = stats.median[k];
        ind(i) = 1.0;
      }
    }
    if (wants_indicator && !has_indicator) {
      columns.push_back({ind_name, ColumnKind::MissingIndicator});
      extra.push_back(std::move(ind));
    }
  }

  Dataset out = data;
  out.columns = std::move(columns);
  out.covariates.resize(X.rows(), X.cols() + static_cast<Eigen::Index>(extra.size()));
  out.covariates.leftCols(X.cols()) = X;
  for (std::size_t k = 0; k < extra.size(); ++k) out.covariates.col(X.cols() + static_cast<Eigen::Index>(k)) = extra[k];
  return {std::move(out), std::move(stats)};
}

Matrix standardize(const Matrix& X, std::span<const double> mean, std::span<const double> sd) {
  Matrix Z = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const double s = sd[jj] > 0.0 ? sd[jj] : 1.0;
    Z.col(j) = (X.col(j).array() - mean[jj]) / s;
  }
  return Z;
}

Dataset standardize(const Dataset& data, const ImputationStats& stats) {
  std::vector<double> mean(data.cols(), 0.0), sd(data.cols(), 1.0);
  for (std::size_t k = 0; k < stats.names.size(); ++k) {
    if (auto j = data.column_index(stats.names[k])) {
      mean[*j] = stats.mean[k];
      sd[*j] = stats.sd[k];
    }
  }
  // Indicators are standardized by their own train moments.
  const auto train = data.indices(Split::Train);
  for (std::size_t j = 0; j < data.cols(); ++j) {
    if (data.columns[j].kind != ColumnKind::MissingIndicator || train.empty()) continue;
    const auto vals = column_values(data, j, train, false);
    mean[j] = stats::mean(vals);
    sd[j] = stats::sd(vals);
  }
  Dataset out = data;
  out.covariates = standardize(data.covariates, mean, sd);
  return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split fractions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] / total * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  for (std::size_t k = 0; k < 3; ++k)
    if (sizes[k] == 0) throw DataError(std::string("split '") + to_string(static_cast<Split>(k)) + "' is empty");
  return sizes;
}

Dataset split(const Dataset& data, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(data.rows(), fractions);
  std::vector<std::size_t> perm(data.rows());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out = data;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.split[perm[k]] = k < sizes[0] ? Split::Train : (k < sizes[0] + sizes[1] ? Split::Validation : Split::Test);
  }
  return out;
}

Table Summary::to_table() const {
  Table t;
  t.header = {"variable", "level", "missing"};
  t.header.insert(t.header.end(), groups.begin(), groups.end());
  std::vector<std::string> nrow{"n", "", ""};
  for (auto c : n) nrow.push_back(std::to_string(c));
  t.rows.push_back(std::move(nrow));
  for (const auto& r : rows) {
    std::vector<std::string> row{r.variable, r.level, std::to_string(r.missing)};
    row.insert(row.end(), r.cells.begin(), r.cells.end());
    t.rows.push_back(std::move(row));
  }
  return t;
}

Summary summarize(const Dataset& data, const std::optional<std::vector<int>>& group_by,
                  const std::array<std::string, 2>& group_names) {
  Summary s;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> all(data.rows());
  std::iota(all.begin(), all.end(), 0);
  s.groups.push_back("Overall");
  members.push_back(all);
  if (group_by) {
    if (group_by->size() != data.rows()) throw ValidationError("group labels length differs from row count");
    for (int g = 0; g < 2; ++g) {
      std::vector<std::size_t> m;
      for (std::size_t i = 0; i < data.rows(); ++i)
        if ((*group_by)[i] == g) m.push_back(i);
      s.groups.push_back(group_names[static_cast<std::size_t>(g)]);
      members.push_back(std::move(m));
    }
  }
  for (const auto& m : members) s.n.push_back(m.size());

  for (std::size_t j = 0; j < data.cols(); ++j) {
    const auto& col = data.columns[j];
    const std::size_t missing = static_cast<std::size_t>(
        data.covariates.col(static_cast<Eigen::Index>(j)).array().isNaN().count());
    if (col.kind == ColumnKind::Numeric) {
      SummaryRow row{col.name + ", mean (SD)", "", missing, {}, {}, {}};
      for (const auto& m : members) {
        const auto v = column_values(data, j, m, true);
        if (v.empty()) {
          row.cells.emplace_back("");
          row.first.push_back(std::numeric_limits<double>::quiet_NaN());
          row.second.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        const double mu = stats::mean(v), sd = stats::sd(v);
        row.cells.push_back(fmt_fixed(mu, 1) + " (" + fmt_fixed(sd, 1) + ")");
        row.first.push_back(mu);
        row.second.push_back(sd);
      }
      s.rows.push_back(std::move(row));
    } else {
      for (int level : {0, 1}) {
        SummaryRow row{col.name + ", n (%)", std::to_string(level), level == 0 ? missing : 0, {}, {}, {}};
        for (const auto& m : members) {
          const auto v = column_values(data, j, m, true);
          const auto count = static_cast<double>(std::count(v.begin(), v.end(), static_cast<double>(level)));
          const double pct = v.empty() ? 0.0 : 100.0 * count / static_cast<double>(v.size());
          row.cells.push_back(std::to_string(static_cast<long>(count)) + " (" + fmt_fixed(pct, 1) + "%)");
          row.first.push_back(count);
          row.second.push_back(pct);
        }
        s.rows.push_back(std::move(row));
      }
    }
  }
  return s;
}

}  // namespace policylab
