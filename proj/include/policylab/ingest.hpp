#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "policylab/table.hpp"
#include "policylab/types.hpp"

namespace policylab {

enum class ColumnKind : std::uint8_t { Numeric, Binary, MissingIndicator };
enum class Split : std::uint8_t { Train, Validation, Test };

const char* to_string(ColumnKind k);
const char* to_string(Split s);

struct ColumnInfo {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
};

// Column-role mapping for a delimited file. An empty covariate list means
// "every column not assigned another role".
struct Schema {
  std::string treatment;
  std::string outcome;
  std::vector<std::string> covariates;
  std::vector<std::string> secondary_outcomes;
  std::optional<std::string> id_column;
  char delimiter = ',';
};

// Observational table. Missing covariate cells are NaN until imputed.
// Immutable once built; share freely between readers.
struct Dataset {
  Matrix covariates;
  std::vector<ColumnInfo> columns;
  std::vector<int> treatment;
  Vector outcome;
  std::map<std::string, Vector> secondary_outcomes;
  std::vector<Split> split;
  std::vector<std::string> row_ids;

  std::size_t rows() const { return treatment.size(); }
  std::size_t cols() const { return columns.size(); }

  std::vector<std::size_t> indices(Split s) const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
  Dataset subset(Split s) const { return subset(indices(s)); }
  std::optional<std::size_t> column_index(const std::string& name) const;

  bool has_missing() const;
  // Throws ValidationError on the first broken invariant.
  void validate() const;
};

Dataset load_table(const std::filesystem::path& path, const Schema& schema);
Dataset load_table(std::istream& in, const Schema& schema);

// Train-split statistics. Medians fill missing cells; mean/sd drive
// standardization. indicator_columns fixes which columns get a
// missingness indicator so every split ends up with the same layout.
struct ImputationStats {
  std::vector<std::string> names;
  std::vector<double> median;
  std::vector<double> mean;
  std::vector<double> sd;
  std::vector<std::string> indicator_columns;
};

struct Imputed {
  Dataset data;
  ImputationStats stats;
};

// Fills missing numeric cells with train medians and appends one
// "<name>__missing" indicator per column that had missing values when the
// statistics were computed. Passing the returned stats again is idempotent.
Imputed impute_and_flag(const Dataset& data, const std::optional<ImputationStats>& stats = std::nullopt);

// z-scores covariates by the stats' train mean and sd. Constant columns are
// only centered.
Dataset standardize(const Dataset& data, const ImputationStats& stats);
Matrix standardize(const Matrix& X, std::span<const double> mean, std::span<const double> sd);

// Deterministic shuffled partition; sizes by the largest-remainder method.
Dataset split(const Dataset& data, const std::array<double, 3>& fractions, std::uint64_t seed);
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& fractions);

// Default ratio: the 1305 / 322 / 530 partition of a 2157-row cohort.
inline constexpr std::array<double, 3> kDefaultSplitFractions{1305.0 / 2157.0, 322.0 / 2157.0,
                                                             530.0 / 2157.0};

// Descriptive table: mean (SD) for numeric columns, n (%) for binary
// columns, overall and per group. group_names label group 0 and group 1.
struct SummaryRow {
  std::string variable;
  std::string level;
  std::size_t missing = 0;
  std::vector<std::string> cells;
  std::vector<double> first;   // mean or count per column
  std::vector<double> second;  // SD or percent per column
};

struct Summary {
  std::vector<std::string> groups;  // "Overall" followed by group names
  std::vector<std::size_t> n;
  std::vector<SummaryRow> rows;

  Table to_table() const;
};

Summary summarize(const Dataset& data, const std::optional<std::vector<int>>& group_by = std::nullopt,
                  const std::array<std::string, 2>& group_names = {"0", "1"});

}  // namespace policylab
