#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "procp/core.hpp"

namespace procp {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column position by name, or npos.
  std::size_t column(std::string_view name) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Comma-separated with RFC 4180 quoting. Blank lines are skipped.
CsvTable parse_csv(std::string_view text);
std::string write_csv(const CsvTable& table);

struct LoadedDataset {
  MaskedDataset data;
  std::vector<std::string> feature_names;
  std::optional<std::vector<double>> propensity;  // column `p`, when present
  // Label codes for categorical columns, in order of first appearance.
  std::map<std::string, std::vector<std::string>> categories;
};

// Feature columns are every column other than `a`, `y` and `p`. Errors name
// the offending line (the header is line 1) and column.
LoadedDataset load_dataset(const CsvTable& table, std::span<const std::string> categorical = {});

}  // namespace procp
