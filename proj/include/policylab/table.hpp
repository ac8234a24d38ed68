#pragma once

#include <filesystem>
#include <optional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace policylab {

// Plain string table serialized as RFC 4180-style CSV.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void write_csv(std::ostream& os) const;
  void write_csv(const std::filesystem::path& path) const;
  std::string to_csv() const;

  // Inverse of write_csv. The first record is the header.
  static Table read_csv(std::istream& is);
  static Table read_csv(const std::filesystem::path& path);

  // Index of a header column; throws DataError when absent.
  std::size_t column(const std::string& name) const;
};

// Shortest round-trippable decimal for doubles ("%.12g" is enough for
// reports and stable across runs).
std::string fmt_num(double v);
std::string fmt_num(const std::optional<double>& v);
std::string fmt_fixed(double v, int decimals);

}  // namespace policylab
