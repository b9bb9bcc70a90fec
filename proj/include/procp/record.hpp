#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace procp {

// Flat "key=value" text records, one pair per line. Used for model files,
// guarantee reports and study summaries.
class TextRecord {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::span<const double> values);

  bool has(const std::string& key) const { return fields_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;

  std::string str() const;
  static TextRecord parse(std::string_view text);

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> fields_;
};

// Shortest round-trip decimal form; "inf", "-inf" and "nan" for non-finite.
std::string format_double(double value);
// Locale-independent parse; accepts the spellings produced by format_double.
double parse_double(std::string_view text);

}  // namespace procp
