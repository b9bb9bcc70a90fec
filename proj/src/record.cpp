#include "procp/record.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace procp {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, end);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r'))
    text.remove_suffix(1);
  if (text == "inf" || text == "+inf" || text == "Inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf" || text == "-Inf") return -std::numeric_limits<double>::infinity();
  if (text == "nan" || text == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  }
  return value;
}

void TextRecord::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos)
    throw std::invalid_argument("TextRecord: invalid key '" + key + "'");
  if (value.find('\n') != std::string::npos)
    throw std::invalid_argument("TextRecord: value for '" + key + "' contains a newline");
  if (!fields_.count(key)) order_.push_back(key);
  fields_[key] = value;
}

void TextRecord::set(const std::string& key, double value) { set(key, format_double(value)); }

void TextRecord::set(const std::string& key, std::span<const double> values) {
  std::string joined;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) joined += ',';
    joined += format_double(values[i]);
  }
  set(key, joined);
}

const std::string& TextRecord::get(const std::string& key) const {
  auto it = fields_.find(key);
  if (it == fields_.end()) throw std::invalid_argument("TextRecord: missing key '" + key + "'");
  return it->second;
}

double TextRecord::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("TextRecord: key '" + key + "': " + e.what());
  }
}

std::vector<double> TextRecord::get_doubles(const std::string& key) const {
  std::vector<double> out;
  const auto& text = get(key);
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    auto comma = text.find(',', start);
    out.push_back(parse_double(std::string_view(text).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string TextRecord::str() const {
  std::string out;
  for (const auto& key : order_) out += key + "=" + fields_.at(key) + "\n";
  return out;
}

TextRecord TextRecord::parse(std::string_view text) {
  TextRecord record;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0)
      throw std::invalid_argument("TextRecord: line " + std::to_string(line_no) + " is not key=value");
    record.set(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return record;
}

}  // namespace procp
