#include "procp/methods.hpp"

#include <stdexcept>

namespace procp {

std::string to_string(Method method) {
  switch (method) {
    case Method::PerFeature: return "per-feature";
    case Method::Simultaneous: return "simultaneous";
    case Method::ProCp: return "pro-cp";
    case Method::ProCp2: return "pro-cp2";
    case Method::Weighted: return "weighted";
    case Method::McarPac: return "mcar-pac";
    case Method::MarPacSmall: return "mar-pac-small";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (auto m : {Method::PerFeature, Method::Simultaneous, Method::ProCp, Method::ProCp2, Method::Weighted,
                 Method::McarPac, Method::MarPacSmall}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected per-feature, simultaneous, pro-cp, pro-cp2, weighted, mcar-pac "
                              "or mar-pac-small)");
}

bool needs_propensity(Method method) {
  return method == Method::ProCp || method == Method::ProCp2 || method == Method::Weighted;
}

IndexPartition make_partition(const MethodConfig& config, std::size_t n) {
  if (config.block_size == 0 || config.block_size >= n) return IndexPartition::whole(n);
  if (config.shuffle_blocks) return IndexPartition::shuffled(n, config.block_size, config.partition_seed);
  return IndexPartition::contiguous(n, config.block_size);
}

PredictionRule build_rule(const MethodConfig& config, const MaskedDataset& cal, std::span<const double> scores,
                          std::span<const double> propensities) {
  const auto& lv = config.level;
  if (needs_propensity(config.method) && propensities.size() != cal.size()) {
    throw std::invalid_argument("method " + to_string(config.method) + " needs one propensity per row");
  }
  switch (config.method) {
    case Method::PerFeature:
      return split_conformal_per_feature(cal, scores, discrete_feature_bins(cal), lv.alpha);
    case Method::Simultaneous:
      return partitioned(SetConstructor::Simultaneous, cal, scores, discrete_feature_bins(cal),
                         make_partition(config, cal.size()), lv.alpha);
    case Method::ProCp:
      return partitioned(SetConstructor::ProCp, cal, scores, assign_bins(propensities, lv.epsilon),
                         make_partition(config, cal.size()), lv.alpha, config.delta_hat,
                         config.delta_hat_approximate);
    case Method::ProCp2:
      return pro_cp2_partitioned(cal, scores, assign_bins(propensities, lv.epsilon),
                                 make_partition(config, cal.size()), lv.alpha, config.delta_hat,
                                 config.delta_hat_approximate);
    case Method::Weighted:
      return weighted_split_conformal(cal, scores, propensities, lv.alpha);
    case Method::McarPac:
      return mcar_pac(cal, scores, lv.alpha, lv.delta);
    case Method::MarPacSmall:
      return mar_pac_small(cal, scores, discrete_feature_bins(cal), lv.alpha, lv.delta, config.placement_budget);
  }
  throw std::logic_error("build_rule: unhandled method");
}

}  // namespace procp
