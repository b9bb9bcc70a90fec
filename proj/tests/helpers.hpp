#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "procp/core.hpp"

namespace testing {

// One-feature dataset; y entries at unobserved rows are ignored.
inline procp::MaskedDataset dataset_1d(const std::vector<double>& x, const std::vector<std::uint8_t>& mask,
                                       std::vector<double> y = {}) {
  procp::FeatureMatrix f(static_cast<Eigen::Index>(x.size()), 1);
  for (std::size_t i = 0; i < x.size(); ++i) f(static_cast<Eigen::Index>(i), 0) = x[i];
  if (y.empty()) y.assign(x.size(), 0.0);
  return procp::MaskedDataset(std::move(f), mask, std::move(y));
}

// Dataset whose only role is to carry a mask.
inline procp::MaskedDataset mask_only(const std::vector<std::uint8_t>& mask) {
  std::vector<double> x(mask.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  return dataset_1d(x, mask);
}

}  // namespace testing
