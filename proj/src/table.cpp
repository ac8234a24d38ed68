#include "policylab/table.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "policylab/error.hpp"

namespace policylab {

namespace {

void write_field(std::ostream& os, const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) {
    os << s;
    return;
  }
  os << '"';
  for (char c : s) {
    if (c == '"') os << '"';
    os << c;
  }
  os << '"';
}

void write_row(std::ostream& os, const std::vector<std::string>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) os << ',';
    write_field(os, row[i]);
  }
  os << '\n';
}

}  // namespace

void Table::write_csv(std::ostream& os) const {
  write_row(os, header);
  for (const auto& r : rows) write_row(os, r);
}

void Table::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_csv(os);
}

std::string Table::to_csv() const {
  std::ostringstream os;
  write_csv(os);
  return os.str();
}

namespace {

// One record; quoted fields may span lines. Returns false at end of input.
bool read_record(std::istream& is, std::vector<std::string>& out) {
  out.clear();
  if (is.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  char c;
  while (is.get(c)) {
    if (quoted) {
      if (c == '"') {
        if (is.peek() == '"') {
          field += '"';
          is.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw DataError("unterminated quoted CSV field");
  out.push_back(std::move(field));
  return true;
}

}  // namespace

Table Table::read_csv(std::istream& is) {
  Table t;
  if (!read_record(is, t.header)) throw DataError("empty CSV document");
  std::vector<std::string> row;
  while (read_record(is, row)) {
    if (row.size() != t.header.size())
      throw DataError("CSV record " + std::to_string(t.rows.size() + 1) + " has " + std::to_string(row.size()) +
                      " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(row);
  }
  return t;
}

Table Table::read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_csv(is);
}

std::size_t Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw DataError("table has no column '" + name + "'");
}

std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt_num(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string{}; }

std::string fmt_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace policylab
