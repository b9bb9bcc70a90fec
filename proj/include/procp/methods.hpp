#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "procp/conformal.hpp"

namespace procp {

enum class Method { PerFeature, Simultaneous, ProCp, ProCp2, Weighted, McarPac, MarPacSmall };

std::string to_string(Method method);
Method parse_method(std::string_view name);

// Whether the method needs one propensity per calibration row.
bool needs_propensity(Method method);

struct MethodConfig {
  Method method = Method::ProCp;
  Level level{0.2, 0.1, 0.1};
  // Contiguous partition block size; 0 disables partitioning.
  std::size_t block_size = 50;
  bool shuffle_blocks = false;
  std::uint64_t partition_seed = 0;
  double delta_hat = 0.0;
  bool delta_hat_approximate = false;
  std::uint64_t placement_budget = kDefaultPlacementBudget;
};

IndexPartition make_partition(const MethodConfig& config, std::size_t n);

// Dispatches to the constructor for config.method. Discrete-feature methods
// bin on exact feature rows, pro-CP variants on the propensity odds grid.
PredictionRule build_rule(const MethodConfig& config, const MaskedDataset& cal, std::span<const double> scores,
                          std::span<const double> propensities);

}  // namespace procp
