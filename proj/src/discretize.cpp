#include "procp/discretize.hpp"

#include <bit>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace procp {

namespace {

// Values within this relative distance of a grid point (1+eps)^k are read as
// sitting exactly on it, i.e. in bin k.
constexpr double kEdgeTolerance = 1e-12;

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0) || std::isinf(epsilon))
    throw std::invalid_argument("assign_bins: epsilon must be positive and finite");
}

}  // namespace

BinId odds_bin(double propensity, double epsilon) {
  check_epsilon(epsilon);
  if (!(propensity > 0.0 && propensity < 1.0)) {
    throw std::invalid_argument("assign_bins: propensity " + std::to_string(propensity) +
                                " is not strictly inside (0,1)");
  }
  const double log_odds = std::log(propensity) - std::log1p(-propensity);
  const double step = std::log1p(epsilon);
  auto k = static_cast<BinId>(std::floor(log_odds / step));
  // Correct floor() against the half-open interval with one neighbor check
  // each way, snapping values that round-trip onto a grid point to its bin.
  const auto edge = [&](BinId j) { return static_cast<double>(j) * step; };
  const auto at_or_above = [&](BinId j) { return log_odds >= edge(j) - kEdgeTolerance * std::max(1.0, std::abs(edge(j))); };
  if (!at_or_above(k)) --k;
  if (at_or_above(k + 1)) ++k;
  return k;
}

std::pair<double, double> bin_propensity_range(BinId k, double epsilon) {
  check_epsilon(epsilon);
  const auto z = [&](BinId j) {
    const double odds = std::exp(static_cast<double>(j) * std::log1p(epsilon));
    return odds / (1.0 + odds);
  };
  return {z(k), z(k + 1)};
}

BinAssignment assign_bins(std::span<const double> propensities, double epsilon) {
  check_epsilon(epsilon);
  BinAssignment out;
  out.epsilon = epsilon;
  out.bin_index.reserve(propensities.size());
  for (double p : propensities) out.bin_index.push_back(odds_bin(p, epsilon));
  return out;
}

BinStats bin_stats(const BinAssignment& assignment, std::span<const std::uint8_t> mask) {
  if (assignment.size() != mask.size()) throw std::invalid_argument("bin_stats: assignment and mask lengths differ");
  BinStats stats;
  stats.n = mask.size();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    auto& c = stats.bins[assignment.bin_index[i]];
    ++c.total;
    if (mask[i]) {
      ++c.observed;
      ++stats.n_observed;
    } else {
      ++c.missing;
      ++stats.n_missing;
    }
  }
  return stats;
}

BinAssignment discrete_feature_bins(const MaskedDataset& dataset) {
  struct RowHash {
    std::size_t operator()(const std::vector<std::uint64_t>& bits) const {
      std::size_t h = 1469598103934665603ULL;
      for (auto b : bits) h = (h ^ std::hash<std::uint64_t>{}(b)) * 1099511628211ULL;
      return h;
    }
  };
  std::unordered_map<std::vector<std::uint64_t>, BinId, RowHash> ids;
  BinAssignment out;
  out.bin_index.reserve(dataset.size());
  std::vector<std::uint64_t> key(dataset.dim());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto row = dataset.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      // +0.0 and -0.0 compare equal as values; give them one token.
      key[j] = std::bit_cast<std::uint64_t>(row[j] == 0.0 ? 0.0 : row[j]);
    }
    auto [it, inserted] = ids.try_emplace(key, static_cast<BinId>(ids.size()));
    out.bin_index.push_back(it->second);
  }
  return out;
}

}  // namespace procp
