#include "procp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "procp/rng.hpp"

namespace procp {

// ---------------------------------------------------------------- partitions

IndexPartition::IndexPartition(std::vector<std::vector<std::size_t>> blocks, std::size_t n)
    : n_(n), blocks_(std::move(blocks)) {
  std::vector<std::uint8_t> seen(n, 0);
  std::size_t count = 0;
  for (const auto& block : blocks_) {
    for (auto i : block) {
      if (i >= n) throw std::invalid_argument("IndexPartition: index " + std::to_string(i) + " out of range");
      if (seen[i]) throw std::invalid_argument("IndexPartition: index " + std::to_string(i) + " appears twice");
      seen[i] = 1;
      ++count;
    }
  }
  if (count != n) throw std::invalid_argument("IndexPartition: blocks do not cover every index");
}

IndexPartition IndexPartition::whole(std::size_t n) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return IndexPartition({std::move(all)}, n);
}

IndexPartition IndexPartition::singletons(std::size_t n) {
  std::vector<std::vector<std::size_t>> blocks(n);
  for (std::size_t i = 0; i < n; ++i) blocks[i] = {i};
  return IndexPartition(std::move(blocks), n);
}

namespace {

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("IndexPartition: block size must be positive");
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t start = 0; start < order.size(); start += block_size) {
    const auto stop = std::min(order.size(), start + block_size);
    blocks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return blocks;
}

}  // namespace

IndexPartition IndexPartition::contiguous(std::size_t n, std::size_t block_size) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  return IndexPartition(chunk(order, block_size), n);
}

IndexPartition IndexPartition::shuffled(std::size_t n, std::size_t block_size, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  auto blocks = chunk(order, block_size);
  for (auto& b : blocks) std::sort(b.begin(), b.end());
  return IndexPartition(std::move(blocks), n);
}

std::vector<std::size_t> IndexPartition::missing_counts(std::span<const std::uint8_t> mask) const {
  if (mask.size() != n_) throw std::invalid_argument("IndexPartition: mask length differs from partition size");
  std::vector<std::size_t> counts;
  counts.reserve(blocks_.size());
  for (const auto& block : blocks_) {
    std::size_t c = 0;
    for (auto i : block) c += mask[i] == 0;
    counts.push_back(c);
  }
  return counts;
}

// ------------------------------------------------------------------- reports

std::string to_string(GuaranteeType type) {
  switch (type) {
    case GuaranteeType::MeanCoverage: return "mean-coverage";
    case GuaranteeType::SquaredCoverage: return "squared-coverage";
    case GuaranteeType::Pac: return "pac";
  }
  return "unknown";
}

double GuaranteeReport::slack() const { return epsilon + delta_hat + epsilon * delta_hat; }

double GuaranteeReport::effective_level() const {
  switch (type) {
    case GuaranteeType::MeanCoverage: return 1.0 - alpha - slack();
    case GuaranteeType::SquaredCoverage: return alpha * alpha + 2.0 * slack();
    case GuaranteeType::Pac: return 1.0 - delta;
  }
  return 0.0;
}

TextRecord GuaranteeReport::to_record() const {
  TextRecord r;
  r.set("method", method);
  r.set("guarantee", to_string(type));
  r.set("alpha", alpha);
  r.set("epsilon", epsilon);
  if (type == GuaranteeType::Pac) r.set("delta", delta);
  r.set("delta_hat", delta_hat);
  r.set("slack", slack());
  r.set(type == GuaranteeType::SquaredCoverage ? "effective_bound" : "effective_level", effective_level());
  r.set("approximate", approximate ? "true" : "false");
  r.set("n", static_cast<double>(n));
  r.set("n_missing", static_cast<double>(n_missing));
  r.set("n_observed", static_cast<double>(n_observed));
  r.set("blocks", static_cast<double>(blocks));
  if (vacuous()) r.set("note", "no missing outcomes; coverage is 1 by convention");
  for (std::size_t w = 0; w < warnings.size(); ++w) r.set("warning_" + std::to_string(w + 1), warnings[w]);
  return r;
}

double PredictionRule::threshold(std::size_t i) const {
  auto it = thresholds.find(i);
  if (it == thresholds.end())
    throw std::out_of_range("PredictionRule: index " + std::to_string(i) + " is not a missing index");
  return it->second;
}

// ------------------------------------------------------------- distributions

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0,1)");
}

void check_lengths(std::span<const std::uint8_t> mask, std::span<const double> scores,
                   std::span<const BinId> bins) {
  if (scores.size() != mask.size() || bins.size() != mask.size())
    throw std::invalid_argument("mask, scores and bins must have equal length");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] && std::isnan(scores[i]))
      throw std::invalid_argument("score at observed row " + std::to_string(i) + " is NaN");
  }
}

struct DenseBins {
  std::vector<std::size_t> id;  // dense bin id per row
  std::vector<std::size_t> total;
  std::vector<std::size_t> missing;
  std::size_t n_missing = 0;
};

DenseBins densify(std::span<const std::uint8_t> mask, std::span<const BinId> bins) {
  DenseBins d;
  std::unordered_map<BinId, std::size_t> lookup;
  d.id.reserve(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) {
    auto [it, inserted] = lookup.try_emplace(bins[i], d.total.size());
    if (inserted) {
      d.total.push_back(0);
      d.missing.push_back(0);
    }
    const auto k = it->second;
    d.id.push_back(k);
    ++d.total[k];
    if (!mask[i]) {
      ++d.missing[k];
      ++d.n_missing;
    }
  }
  return d;
}

}  // namespace

WeightedDiscreteDist per_feature_distribution(std::span<const std::uint8_t> mask,
                                              std::span<const double> scores,
                                              std::span<const BinId> bins, BinId group) {
  check_lengths(mask, scores, bins);
  std::size_t observed = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) observed += mask[i] && bins[i] == group;
  const double w = 1.0 / static_cast<double>(observed + 1);
  std::vector<Atom> atoms;
  atoms.reserve(observed + 1);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] && bins[i] == group) atoms.push_back({scores[i], w});
  atoms.push_back({kInf, w});
  return WeightedDiscreteDist(std::move(atoms));
}

WeightedDiscreteDist simultaneous_distribution(std::span<const std::uint8_t> mask,
                                               std::span<const double> scores,
                                               std::span<const BinId> bins) {
  check_lengths(mask, scores, bins);
  const auto d = densify(mask, bins);
  if (d.n_missing == 0) throw std::invalid_argument("simultaneous_distribution: no missing outcomes");
  const double n0 = static_cast<double>(d.n_missing);
  std::vector<Atom> atoms;
  double infinite = 0.0;
  for (std::size_t k = 0; k < d.total.size(); ++k) {
    const double m = static_cast<double>(d.missing[k]);
    infinite += m * m / (n0 * static_cast<double>(d.total[k]));
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const auto k = d.id[i];
    if (mask[i] && d.missing[k] > 0)
      atoms.push_back({scores[i], static_cast<double>(d.missing[k]) / (n0 * static_cast<double>(d.total[k]))});
  }
  atoms.push_back({kInf, infinite});
  return WeightedDiscreteDist(std::move(atoms));
}

WeightedDiscreteDist squared_distribution(std::span<const std::uint8_t> mask,
                                          std::span<const double> scores,
                                          std::span<const BinId> bins) {
  check_lengths(mask, scores, bins);
  const auto d = densify(mask, bins);
  if (d.n_missing == 0) throw std::invalid_argument("squared_distribution: no missing outcomes");
  const std::size_t n = mask.size();
  const std::size_t m = d.total.size();
  const double n0 = static_cast<double>(d.n_missing);

  std::vector<double> c(m), w(m), single(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double nk = static_cast<double>(d.total[k]);
    const double nk0 = static_cast<double>(d.missing[k]);
    c[k] = nk0 / (n0 * nk);
    single[k] = nk0 / (n0 * n0 * nk);
    w[k] = d.total[k] > 1 ? nk0 * (nk0 - 1.0) / (n0 * n0 * nk * (nk - 1.0)) : 0.0;
  }

  std::vector<double> sbar(n);
  for (std::size_t i = 0; i < n; ++i) sbar[i] = mask[i] ? scores[i] : kInf;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sbar[a] < sbar[b]; });

  // Walking from the largest score down, every point already visited is a
  // partner whose pair minimum is the current point's score.
  std::vector<double> later_c(m, 0.0);
  std::vector<std::size_t> later_count(m, 0);
  double later_total = 0.0;
  std::vector<Atom> atoms;
  atoms.reserve(n);
  for (std::size_t pos = n; pos-- > 0;) {
    const auto i = order[pos];
    const auto k = d.id[i];
    const double mass = single[k] + 2.0 * w[k] * static_cast<double>(later_count[k]) +
                        2.0 * c[k] * (later_total - later_c[k]);
    atoms.push_back({sbar[i], mass});
    later_total += c[k];
    later_c[k] += c[k];
    ++later_count[k];
  }
  return WeightedDiscreteDist(std::move(atoms));
}

// -------------------------------------------------------------- constructors

namespace {

GuaranteeReport base_report(const std::string& method, GuaranteeType type, const MaskedDataset& cal,
                            double alpha) {
  GuaranteeReport r;
  r.method = method;
  r.type = type;
  r.alpha = alpha;
  r.n = cal.size();
  r.n_missing = cal.n_missing();
  r.n_observed = cal.n_observed();
  return r;
}

void check_inputs(const MaskedDataset& cal, std::span<const double> scores, const BinAssignment& bins) {
  if (bins.size() != cal.size()) throw std::invalid_argument("bin assignment length differs from dataset size");
  check_lengths(cal.mask(), scores, bins.bin_index);
}

void check_inputs(const MaskedDataset& cal, std::span<const double> scores) {
  if (scores.size() != cal.size()) throw std::invalid_argument("scores length differs from dataset size");
}

PredictionRule uniform_rule(const MaskedDataset& cal, double t, GuaranteeReport report) {
  PredictionRule rule;
  rule.report = std::move(report);
  for (auto i : cal.missing_indices()) rule.thresholds.emplace(i, t);
  return rule;
}

// Rows of U_l u I_{A=1} in increasing index order.
std::vector<std::size_t> augmented_block(const std::vector<std::size_t>& block,
                                         std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(i);
  for (auto i : block)
    if (!mask[i]) rows.push_back(i);
  std::sort(rows.begin(), rows.end());
  return rows;
}

struct SubInstance {
  std::vector<std::uint8_t> mask;
  std::vector<double> scores;
  std::vector<BinId> bins;
};

SubInstance gather(const std::vector<std::size_t>& rows, std::span<const std::uint8_t> mask,
                   std::span<const double> scores, std::span<const BinId> bins) {
  SubInstance s;
  s.mask.reserve(rows.size());
  s.scores.reserve(rows.size());
  s.bins.reserve(rows.size());
  for (auto i : rows) {
    s.mask.push_back(mask[i]);
    s.scores.push_back(scores[i]);
    s.bins.push_back(bins[i]);
  }
  return s;
}

}  // namespace

PredictionRule split_conformal_per_feature(const MaskedDataset& cal, std::span<const double> scores,
                                           const BinAssignment& bins, double alpha) {
  check_alpha(alpha);
  check_inputs(cal, scores, bins);
  PredictionRule rule;
  rule.report = base_report("per-feature", GuaranteeType::MeanCoverage, cal, alpha);
  rule.report.blocks = 0;
  std::map<BinId, double> cache;
  for (auto i : cal.missing_indices()) {
    const auto group = bins.bin_index[i];
    auto it = cache.find(group);
    if (it == cache.end()) {
      const auto dist = per_feature_distribution(cal.mask(), scores, bins.bin_index, group);
      it = cache.emplace(group, weighted_quantile(dist, 1.0 - alpha)).first;
    }
    rule.thresholds.emplace(i, it->second);
  }
  return rule;
}

PredictionRule simultaneous_discrete(const MaskedDataset& cal, std::span<const double> scores,
                                     const BinAssignment& bins, double alpha) {
  check_alpha(alpha);
  check_inputs(cal, scores, bins);
  auto report = base_report("simultaneous", GuaranteeType::MeanCoverage, cal, alpha);
  if (cal.n_missing() == 0) return uniform_rule(cal, kInf, std::move(report));
  const auto dist = simultaneous_distribution(cal.mask(), scores, bins.bin_index);
  return uniform_rule(cal, weighted_quantile(dist, 1.0 - alpha), std::move(report));
}

PredictionRule pro_cp(const MaskedDataset& cal, std::span<const double> scores, const BinAssignment& bins,
                      double alpha, double delta_hat, bool delta_hat_approximate) {
  auto rule = simultaneous_discrete(cal, scores, bins, alpha);
  rule.report.method = "pro-cp";
  rule.report.epsilon = bins.epsilon;
  rule.report.delta_hat = delta_hat;
  rule.report.approximate = delta_hat_approximate;
  return rule;
}

PredictionRule pro_cp2(const MaskedDataset& cal, std::span<const double> scores, const BinAssignment& bins,
                       double alpha, double delta_hat, bool delta_hat_approximate) {
  check_alpha(alpha);
  check_inputs(cal, scores, bins);
  auto report = base_report("pro-cp2", GuaranteeType::SquaredCoverage, cal, alpha);
  report.epsilon = bins.epsilon;
  report.delta_hat = delta_hat;
  report.approximate = delta_hat_approximate;
  if (cal.n_missing() == 0) return uniform_rule(cal, kInf, std::move(report));
  const auto dist = squared_distribution(cal.mask(), scores, bins.bin_index);
  return uniform_rule(cal, weighted_quantile(dist, 1.0 - alpha * alpha), std::move(report));
}

PredictionRule partitioned(SetConstructor constructor, const MaskedDataset& cal, std::span<const double> scores,
                           const BinAssignment& bins, const IndexPartition& partition, double alpha,
                           double delta_hat, bool delta_hat_approximate) {
  check_alpha(alpha);
  check_inputs(cal, scores, bins);
  if (partition.n() != cal.size()) throw std::invalid_argument("partition size differs from dataset size");
  PredictionRule rule;
  const bool pro = constructor == SetConstructor::ProCp;
  rule.report = base_report(pro ? "pro-cp" : "simultaneous", GuaranteeType::MeanCoverage, cal, alpha);
  rule.report.blocks = partition.size();
  if (pro) {
    rule.report.epsilon = bins.epsilon;
    rule.report.delta_hat = delta_hat;
    rule.report.approximate = delta_hat_approximate;
  }
  const auto& mask = cal.mask();
  for (const auto& block : partition.blocks()) {
    if (std::none_of(block.begin(), block.end(), [&](std::size_t i) { return mask[i] == 0; })) continue;
    const auto sub = gather(augmented_block(block, mask), mask, scores, bins.bin_index);
    const double t = weighted_quantile(simultaneous_distribution(sub.mask, sub.scores, sub.bins), 1.0 - alpha);
    for (auto i : block)
      if (!mask[i]) rule.thresholds.emplace(i, t);
  }
  return rule;
}

AlphaAllocation alpha_allocation(const IndexPartition& partition, std::span<const std::uint8_t> mask,
                                 double alpha) {
  check_alpha(alpha);
  const auto counts = partition.missing_counts(mask);
  double n0 = 0.0, sum_sq = 0.0;
  for (auto c : counts) {
    n0 += static_cast<double>(c);
    sum_sq += static_cast<double>(c) * static_cast<double>(c);
  }
  if (n0 == 0.0) throw std::invalid_argument("alpha_allocation: no missing outcomes");
  AlphaAllocation out;
  out.raw.resize(counts.size(), 0.0);
  out.clamped.resize(counts.size(), 0.0);
  for (std::size_t l = 0; l < counts.size(); ++l) {
    if (counts[l] == 0) continue;
    out.raw[l] = static_cast<double>(counts[l]) * n0 * alpha / sum_sq;
    out.clamped[l] = std::min(out.raw[l], 1.0);
    if (out.raw[l] > 1.0) {
      out.warnings.push_back("block " + std::to_string(l) + ": allocated level " + format_double(out.raw[l]) +
                             " exceeds 1, clamped (empty set)");
    }
  }
  return out;
}

PredictionRule pro_cp2_partitioned(const MaskedDataset& cal, std::span<const double> scores,
                                   const BinAssignment& bins, const IndexPartition& partition, double alpha,
                                   double delta_hat, bool delta_hat_approximate) {
  check_alpha(alpha);
  check_inputs(cal, scores, bins);
  if (partition.n() != cal.size()) throw std::invalid_argument("partition size differs from dataset size");
  PredictionRule rule;
  rule.report = base_report("pro-cp2", GuaranteeType::SquaredCoverage, cal, alpha);
  rule.report.blocks = partition.size();
  rule.report.epsilon = bins.epsilon;
  rule.report.delta_hat = delta_hat;
  rule.report.approximate = delta_hat_approximate;
  if (cal.n_missing() == 0) return rule;
  const auto& mask = cal.mask();
  const auto levels = alpha_allocation(partition, mask, alpha);
  rule.report.warnings = levels.warnings;
  for (std::size_t l = 0; l < partition.size(); ++l) {
    const auto& block = partition.block(l);
    if (levels.clamped[l] == 0.0) continue;
    const double a = levels.clamped[l];
    const auto sub = gather(augmented_block(block, mask), mask, scores, bins.bin_index);
    const double t = weighted_quantile(squared_distribution(sub.mask, sub.scores, sub.bins), 1.0 - a * a);
    for (auto i : block)
      if (!mask[i]) rule.thresholds.emplace(i, t);
  }
  return rule;
}

// ---------------------------------------------------------- weighted baseline

namespace {

struct SortedWeights {
  std::vector<double> scores;  // ascending
  std::vector<double> prefix;  // prefix[j] = sum of the first j+1 weights
  double total() const { return prefix.empty() ? 0.0 : prefix.back(); }

  SortedWeights(std::span<const double> s, std::span<const double> w) {
    if (s.size() != w.size()) throw std::invalid_argument("weighted conformal: scores and weights differ in length");
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
    double run = 0.0;
    for (auto j : order) {
      if (!(w[j] >= 0.0) || std::isinf(w[j])) throw std::invalid_argument("weighted conformal: weights must be finite and >= 0");
      if (std::isnan(s[j])) throw std::invalid_argument("weighted conformal: NaN score");
      run += w[j];
      scores.push_back(s[j]);
      prefix.push_back(run);
    }
  }

  double quantile(double test_weight, double alpha) const {
    if (!(test_weight >= 0.0) || std::isinf(test_weight))
      throw std::invalid_argument("weighted conformal: test weight must be finite and >= 0");
    const double all = total() + test_weight;
    if (!(all > 0.0)) throw std::invalid_argument("weighted conformal: total weight is zero");
    const double need = (1.0 - alpha - kLevelTolerance) * all;
    auto it = std::lower_bound(prefix.begin(), prefix.end(), need);
    if (it == prefix.end()) return kInf;
    auto j = static_cast<std::size_t>(it - prefix.begin());
    return scores[j];
  }
};

}  // namespace

double weighted_conformal_threshold(std::span<const double> observed_scores, std::span<const double> observed_weights,
                                    double test_weight, double alpha) {
  check_alpha(alpha);
  return SortedWeights(observed_scores, observed_weights).quantile(test_weight, alpha);
}

double covariate_shift_weight(double propensity) {
  if (!(propensity > 0.0 && propensity < 1.0))
    throw std::invalid_argument("covariate_shift_weight: propensity must lie in (0,1)");
  return (1.0 - propensity) / propensity;
}

PredictionRule weighted_split_conformal(const MaskedDataset& cal, std::span<const double> scores,
                                        std::span<const double> propensities, double alpha) {
  check_alpha(alpha);
  check_inputs(cal, scores);
  if (propensities.size() != cal.size()) throw std::invalid_argument("propensities length differs from dataset size");
  std::vector<double> s, w;
  for (auto j : cal.observed_indices()) {
    s.push_back(scores[j]);
    w.push_back(covariate_shift_weight(propensities[j]));
  }
  const SortedWeights sorted(s, w);
  PredictionRule rule;
  rule.report = base_report("weighted", GuaranteeType::MeanCoverage, cal, alpha);
  rule.report.blocks = 0;
  for (auto i : cal.missing_indices())
    rule.thresholds.emplace(i, sorted.quantile(covariate_shift_weight(propensities[i]), alpha));
  return rule;
}

PredictionRule weighted_split_conformal(const MaskedDataset& cal, std::span<const double> scores,
                                        const PropensityModel& propensity, double alpha) {
  const auto p = propensity.evaluate(cal.features());
  return weighted_split_conformal(cal, scores, p, alpha);
}

// ------------------------------------------------------------------ MCAR PAC

McarPacQuantile mcar_pac_quantile(std::size_t n, std::size_t n_missing, double alpha, double delta) {
  check_alpha(alpha);
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("mcar_pac: delta must lie in (0,1)");
  if (n_missing == 0 || n_missing > n) throw std::invalid_argument("mcar_pac: need 1 <= N0 <= n");
  const auto n1 = n - n_missing;
  McarPacQuantile q;
  q.n_alpha = static_cast<std::size_t>(std::ceil(static_cast<double>(n_missing) * (1.0 - alpha) - 1e-9));
  q.n_alpha = std::max<std::size_t>(q.n_alpha, 1);
  const double prefactor = static_cast<double>(n_missing) / static_cast<double>(n);
  const auto B = static_cast<std::int64_t>(n) - 1;
  const auto b = static_cast<std::int64_t>(n1);
  q.pmf.resize(n1 + 1);
  for (std::size_t l = 0; l <= n1; ++l) {
    const auto A = static_cast<std::int64_t>(q.n_alpha + l) - 1;
    q.pmf[l] = prefactor * hypergeom_pmf(static_cast<std::int64_t>(l), B, A, b);
    q.p_max = std::max(q.p_max, q.pmf[l]);
  }
  double tail = 0.0;
  std::size_t k = 0;
  while (k <= n1 && tail < 1.0 - delta - kLevelTolerance) tail += q.pmf[k++];
  if (tail < 1.0 - delta - kLevelTolerance) k = n1 + 1;
  q.k = std::max<std::size_t>(k, 1);
  q.tail = tail;
  q.infinite = q.k > n1;
  return q;
}

PredictionRule mcar_pac(const MaskedDataset& cal, std::span<const double> scores, double alpha, double delta) {
  check_alpha(alpha);
  check_inputs(cal, scores);
  auto report = base_report("mcar-pac", GuaranteeType::Pac, cal, alpha);
  report.delta = delta;
  report.blocks = 0;
  if (cal.n_missing() == 0) return uniform_rule(cal, kInf, std::move(report));
  if (cal.n_observed() == 0) throw std::invalid_argument("mcar_pac: need at least one observed outcome");
  const auto q = mcar_pac_quantile(cal.size(), cal.n_missing(), alpha, delta);
  double t = kInf;
  if (!q.infinite) {
    std::vector<double> observed;
    for (auto j : cal.observed_indices()) observed.push_back(scores[j]);
    std::nth_element(observed.begin(), observed.begin() + static_cast<std::ptrdiff_t>(q.k - 1), observed.end());
    t = observed[q.k - 1];
  }
  return uniform_rule(cal, t, std::move(report));
}

// ------------------------------------------------------------------- MAR PAC

PredictionRule mar_pac_small(const MaskedDataset& cal, std::span<const double> scores, const BinAssignment& bins,
                             double alpha, double delta, std::uint64_t budget) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("mar_pac_small: alpha must lie in [0,1)");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("mar_pac_small: delta must lie in (0,1)");
  check_inputs(cal, scores, bins);
  auto report = base_report("mar-pac-small", GuaranteeType::Pac, cal, alpha);
  report.delta = delta;
  report.blocks = 0;
  if (cal.n_missing() == 0) return uniform_rule(cal, kInf, std::move(report));

  const auto& mask = cal.mask();
  std::map<BinId, std::vector<std::size_t>> members;
  std::map<BinId, std::size_t> missing;
  for (std::size_t i = 0; i < cal.size(); ++i) {
    members[bins.bin_index[i]].push_back(i);
    missing[bins.bin_index[i]] += mask[i] == 0;
  }

  struct Group {
    std::vector<double> values;  // S-bar over the bin's rows
    std::size_t take;
  };
  std::vector<Group> groups;
  double placements = 1.0;
  for (const auto& [k, rows] : members) {
    const auto take = missing[k];
    if (take == 0) continue;
    Group g{{}, take};
    for (auto i : rows) g.values.push_back(mask[i] ? scores[i] : kInf);
    // C(N_k, N_k^0) accumulated in floating point only to compare with the budget.
    double c = 1.0;
    for (std::size_t j = 1; j <= take; ++j)
      c = c * static_cast<double>(rows.size() - take + j) / static_cast<double>(j);
    placements *= std::round(c);
    if (placements > static_cast<double>(budget)) {
      throw std::invalid_argument("mar_pac_small: more than " + std::to_string(budget) +
                                  " placements to enumerate; use mcar_pac or pro_cp2 instead");
    }
    groups.push_back(std::move(g));
  }

  const auto n0 = cal.n_missing();
  const auto rank = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(n0) - 1e-9)));
  std::vector<double> chosen;
  chosen.reserve(n0);
  std::vector<double> buffer(n0);
  std::vector<Atom> stats;
  stats.reserve(static_cast<std::size_t>(placements));

  // Depth-first over bins, and within a bin over increasing index combinations.
  std::function<void(std::size_t, std::size_t, std::size_t)> visit = [&](std::size_t g, std::size_t start,
                                                                         std::size_t left) {
    if (g == groups.size()) {
      std::copy(chosen.begin(), chosen.end(), buffer.begin());
      std::nth_element(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(rank - 1), buffer.end());
      stats.push_back({buffer[rank - 1], 1.0});
      return;
    }
    if (left == 0) {
      const auto next = g + 1;
      visit(next, 0, next < groups.size() ? groups[next].take : 0);
      return;
    }
    const auto& values = groups[g].values;
    for (std::size_t j = start; j + left <= values.size(); ++j) {
      chosen.push_back(values[j]);
      visit(g, j + 1, left - 1);
      chosen.pop_back();
    }
  };
  visit(0, 0, groups.front().take);

  const auto dist = WeightedDiscreteDist::from_masses(std::move(stats));
  return uniform_rule(cal, weighted_quantile(dist, 1.0 - delta), std::move(report));
}

// ---------------------------------------------------------------------- ITE

std::map<std::size_t, Interval> ite_sets(const PredictionRule& rule, const ScoreModel& model,
                                         const MaskedDataset& cal, std::span<const double> control) {
  if (control.size() != cal.size()) throw std::invalid_argument("ite_sets: control outcomes length differs");
  std::map<std::size_t, Interval> out;
  for (const auto& [i, t] : rule.thresholds) {
    const double y0 = control[i];
    if (!std::isfinite(y0))
      throw std::invalid_argument("ite_sets: control outcome missing at index " + std::to_string(i));
    auto iv = interval_from_threshold(model, cal.row(i), t);
    if (!iv.empty()) {
      iv.lower -= y0;
      iv.upper -= y0;
    }
    out.emplace(i, iv);
  }
  return out;
}

}  // namespace procp
