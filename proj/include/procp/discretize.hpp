#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "procp/core.hpp"

namespace procp {

using BinId = std::int64_t;

// Bin index per data point. epsilon > 0 for propensity-odds bins, 0 when the
// bins are distinct feature values.
struct BinAssignment {
  double epsilon = 0.0;
  std::vector<BinId> bin_index;

  std::size_t size() const { return bin_index.size(); }
};

struct BinCount {
  std::size_t total = 0;
  std::size_t missing = 0;
  std::size_t observed = 0;
};

struct BinStats {
  std::map<BinId, BinCount> bins;  // occupied bins only
  std::size_t n = 0;
  std::size_t n_missing = 0;
  std::size_t n_observed = 0;

  std::size_t occupied() const { return bins.size(); }
};

// Unique k with (1+eps)^k <= p/(1-p) < (1+eps)^(k+1).
BinId odds_bin(double propensity, double epsilon);

// Propensity interval [z_k, z_{k+1}) covered by bin k.
std::pair<double, double> bin_propensity_range(BinId k, double epsilon);

BinAssignment assign_bins(std::span<const double> propensities, double epsilon);

BinStats bin_stats(const BinAssignment& assignment, std::span<const std::uint8_t> mask);

// One bin per distinct feature row (bitwise equality), ids in order of first
// occurrence.
BinAssignment discrete_feature_bins(const MaskedDataset& dataset);

}  // namespace procp
