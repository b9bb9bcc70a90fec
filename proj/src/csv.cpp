#include "procp/csv.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "procp/record.hpp"

namespace procp {

std::size_t CsvTable::column(std::string_view name) const {
  auto it = std::find(header.begin(), header.end(), name);
  return it == header.end() ? npos : static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::vector<std::string>> split_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, field_started = false, any = false;
  std::size_t line = 1;
  auto end_record = [&] {
    if (any) {
      fields.push_back(std::move(field));
      records.push_back(std::move(fields));
    }
    fields.clear();
    field.clear();
    any = false;
    field_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty())
          throw std::invalid_argument("csv line " + std::to_string(line) + ": quote inside an unquoted field");
        quoted = true;
        field_started = any = true;
        break;
      case ',':
        fields.push_back(std::move(field));
        field.clear();
        field_started = false;
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field += c;
        field_started = any = true;
    }
  }
  if (quoted) throw std::invalid_argument("csv: unterminated quoted field");
  end_record();
  return records;
}

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos || (!s.empty() && (s.front() == ' ' || s.back() == ' '));
}

std::string quote(const std::string& s) {
  if (!needs_quotes(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

CsvTable parse_csv(std::string_view text) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  auto records = split_records(text);
  if (records.empty()) throw std::invalid_argument("csv: no header row");
  CsvTable t;
  t.header = std::move(records.front());
  for (auto& h : t.header) h = trim(h);
  std::set<std::string> seen;
  for (const auto& h : t.header) {
    if (h.empty()) throw std::invalid_argument("csv line 1: empty column name");
    if (!seen.insert(h).second) throw std::invalid_argument("csv line 1: duplicate column '" + h + "'");
  }
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size()) {
      throw std::invalid_argument("csv line " + std::to_string(r + 1) + ": expected " +
                                  std::to_string(t.header.size()) + " fields, found " +
                                  std::to_string(records[r].size()));
    }
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

std::string write_csv(const CsvTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t j = 0; j < fields.size(); ++j) {
      if (j) out += ',';
      out += quote(fields[j]);
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
  return out;
}

LoadedDataset load_dataset(const CsvTable& table, std::span<const std::string> categorical) {
  const auto a_col = table.column("a");
  const auto y_col = table.column("y");
  const auto p_col = table.column("p");
  if (a_col == CsvTable::npos) throw std::invalid_argument("csv: missing required column 'a'");
  if (y_col == CsvTable::npos) throw std::invalid_argument("csv: missing required column 'y'");
  if (table.rows.empty()) throw std::invalid_argument("csv: no data rows");
  for (const auto& c : categorical) {
    if (table.column(c) == CsvTable::npos) throw std::invalid_argument("csv: categorical column '" + c + "' not found");
    if (c == "a" || c == "y" || c == "p") throw std::invalid_argument("csv: column '" + c + "' cannot be categorical");
  }

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (j == a_col || j == y_col || j == p_col) continue;
    feature_cols.push_back(j);
    names.push_back(table.header[j]);
  }

  const auto n = table.rows.size();
  const auto d = feature_cols.size();
  FeatureMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<std::uint8_t> mask(n);
  std::vector<double> y(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> p;
  if (p_col != CsvTable::npos) p.resize(n);
  std::map<std::string, std::vector<std::string>> categories;
  std::map<std::string, std::map<std::string, double>> codes;

  auto where = [&](std::size_t r, std::size_t j) {
    return "csv line " + std::to_string(r + 2) + ", column '" + table.header[j] + "': ";
  };
  auto number = [&](std::size_t r, std::size_t j) {
    const auto cell = trim(table.rows[r][j]);
    double v;
    try {
      v = parse_double(cell);
    } catch (const std::exception&) {
      throw std::invalid_argument(where(r, j) + "'" + cell + "' is not a number");
    }
    if (!std::isfinite(v)) throw std::invalid_argument(where(r, j) + "value must be finite");
    return v;
  };

  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    const auto a_cell = trim(row[a_col]);
    if (a_cell == "1") {
      mask[r] = 1;
    } else if (a_cell == "0") {
      mask[r] = 0;
    } else {
      throw std::invalid_argument(where(r, a_col) + "expected 0 or 1, found '" + a_cell + "'");
    }
    if (trim(row[y_col]).empty()) {
      if (mask[r]) throw std::invalid_argument(where(r, y_col) + "outcome is empty but a=1");
    } else if (mask[r]) {
      y[r] = number(r, y_col);
    }
    if (p_col != CsvTable::npos) {
      p[r] = number(r, p_col);
      if (!(p[r] > 0.0 && p[r] < 1.0))
        throw std::invalid_argument(where(r, p_col) + "propensity " + trim(row[p_col]) + " is outside (0,1)");
    }
    for (std::size_t c = 0; c < d; ++c) {
      const auto j = feature_cols[c];
      double v;
      if (std::find(categorical.begin(), categorical.end(), table.header[j]) != categorical.end()) {
        auto& table_codes = codes[table.header[j]];
        const auto label = trim(row[j]);
        auto [it, inserted] = table_codes.try_emplace(label, static_cast<double>(table_codes.size()));
        if (inserted) categories[table.header[j]].push_back(label);
        v = it->second;
      } else {
        v = number(r, j);
      }
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  LoadedDataset out{MaskedDataset(std::move(x), std::move(mask), std::move(y)), std::move(names), std::nullopt,
                    std::move(categories)};
  if (p_col != CsvTable::npos) out.propensity = std::move(p);
  return out;
}

}  // namespace procp
