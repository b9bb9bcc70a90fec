#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "procp/core.hpp"
#include "procp/discretize.hpp"
#include "procp/propensity.hpp"
#include "procp/record.hpp"
#include "procp/scores.hpp"

namespace procp {

// Disjoint blocks U_1..U_L covering [n], in a stable order.
class IndexPartition {
 public:
  explicit IndexPartition(std::vector<std::vector<std::size_t>> blocks, std::size_t n);

  static IndexPartition whole(std::size_t n);
  static IndexPartition singletons(std::size_t n);
  // Consecutive runs of block_size indices; the last block may be shorter.
  static IndexPartition contiguous(std::size_t n, std::size_t block_size);
  // Contiguous blocks over a seeded permutation of [n].
  static IndexPartition shuffled(std::size_t n, std::size_t block_size, std::uint64_t seed);

  std::size_t n() const { return n_; }
  std::size_t size() const { return blocks_.size(); }
  const std::vector<std::vector<std::size_t>>& blocks() const { return blocks_; }
  const std::vector<std::size_t>& block(std::size_t l) const { return blocks_.at(l); }

  // N_l^0 for each block.
  std::vector<std::size_t> missing_counts(std::span<const std::uint8_t> mask) const;

 private:
  std::size_t n_ = 0;
  std::vector<std::vector<std::size_t>> blocks_;
};

enum class GuaranteeType { MeanCoverage, SquaredCoverage, Pac };

std::string to_string(GuaranteeType type);

struct GuaranteeReport {
  std::string method;
  GuaranteeType type = GuaranteeType::MeanCoverage;
  double alpha = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;      // PAC failure probability
  double delta_hat = 0.0;  // propensity-estimation slack, 0 when known
  // Set when delta_hat comes from a sample maximum rather than a sup-norm.
  bool approximate = false;
  std::size_t n = 0;
  std::size_t n_missing = 0;
  std::size_t n_observed = 0;
  std::size_t blocks = 1;
  std::vector<std::string> warnings;

  // eps + delta_hat + eps * delta_hat
  double slack() const;
  // Lower bound on coverage for mean-coverage and PAC guarantees, upper bound
  // on E[miscoverage^2] for squared-coverage guarantees.
  double effective_level() const;
  bool vacuous() const { return n_missing == 0; }

  TextRecord to_record() const;
};

// Threshold t_i for every missing index i; the set is {y : s(X_i, y) <= t_i}.
struct PredictionRule {
  std::map<std::size_t, double> thresholds;
  std::string score_name;
  GuaranteeReport report;

  double threshold(std::size_t i) const;
  bool empty() const { return thresholds.empty(); }
};

// Distributions behind the constructors. scores carries S_i at observed rows
// (other entries ignored), bins one id per row.
WeightedDiscreteDist per_feature_distribution(std::span<const std::uint8_t> mask,
                                              std::span<const double> scores,
                                              std::span<const BinId> bins, BinId group);
WeightedDiscreteDist simultaneous_distribution(std::span<const std::uint8_t> mask,
                                               std::span<const double> scores,
                                               std::span<const BinId> bins);
// Sorted-sweep aggregation of the min-pair distribution, O(n log n).
WeightedDiscreteDist squared_distribution(std::span<const std::uint8_t> mask,
                                          std::span<const double> scores,
                                          std::span<const BinId> bins);

PredictionRule split_conformal_per_feature(const MaskedDataset& cal, std::span<const double> scores,
                                           const BinAssignment& bins, double alpha);

PredictionRule simultaneous_discrete(const MaskedDataset& cal, std::span<const double> scores,
                                     const BinAssignment& bins, double alpha);

// Propensity-discretized set. delta_hat > 0 when the bins came from an
// estimated propensity.
PredictionRule pro_cp(const MaskedDataset& cal, std::span<const double> scores,
                      const BinAssignment& bins, double alpha, double delta_hat = 0.0,
                      bool delta_hat_approximate = false);

PredictionRule pro_cp2(const MaskedDataset& cal, std::span<const double> scores,
                       const BinAssignment& bins, double alpha, double delta_hat = 0.0,
                       bool delta_hat_approximate = false);

enum class SetConstructor { Simultaneous, ProCp };

// Runs the constructor on U_l u I_{A=1} for every block holding a missing
// index and assembles the per-index thresholds.
PredictionRule partitioned(SetConstructor constructor, const MaskedDataset& cal,
                           std::span<const double> scores, const BinAssignment& bins,
                           const IndexPartition& partition, double alpha, double delta_hat = 0.0,
                           bool delta_hat_approximate = false);

struct AlphaAllocation {
  std::vector<double> raw;      // per block; 0 for blocks without missing indices
  std::vector<double> clamped;  // raw capped at 1
  std::vector<std::string> warnings;
};

AlphaAllocation alpha_allocation(const IndexPartition& partition, std::span<const std::uint8_t> mask,
                                 double alpha);

PredictionRule pro_cp2_partitioned(const MaskedDataset& cal, std::span<const double> scores,
                                   const BinAssignment& bins, const IndexPartition& partition,
                                   double alpha, double delta_hat = 0.0,
                                   bool delta_hat_approximate = false);

// Q_{1-alpha} of the normalized weights {w_j on S_j} u {w_test on +inf}.
double weighted_conformal_threshold(std::span<const double> observed_scores,
                                    std::span<const double> observed_weights, double test_weight,
                                    double alpha);

// Likelihood-ratio weight (1-p)/p of the missing-outcome feature law against
// the observed one.
double covariate_shift_weight(double propensity);

PredictionRule weighted_split_conformal(const MaskedDataset& cal, std::span<const double> scores,
                                        std::span<const double> propensities, double alpha);
PredictionRule weighted_split_conformal(const MaskedDataset& cal, std::span<const double> scores,
                                        const PropensityModel& propensity, double alpha);

struct McarPacQuantile {
  std::size_t k = 0;         // rank of the observed score used as threshold
  bool infinite = false;     // k exceeds the number of observed scores
  double tail = 0.0;         // P(K <= k-1)
  double p_max = 0.0;        // max_l P(K = l)
  std::size_t n_alpha = 0;   // ceil(N0 (1 - alpha))
  std::vector<double> pmf;   // P(K = l), l = 0..N1
};

// K counts the observed scores below the n_alpha-th smallest missing score
// when the N0 missing positions are a uniformly random subset of [n].
McarPacQuantile mcar_pac_quantile(std::size_t n, std::size_t n_missing, double alpha, double delta);

PredictionRule mcar_pac(const MaskedDataset& cal, std::span<const double> scores, double alpha,
                        double delta);

inline constexpr std::uint64_t kDefaultPlacementBudget = 1'000'000;

// Enumerates every placement J of the per-bin missing counts, records the
// ceil((1-alpha) N0)-th smallest of the scores indexed by J (+inf at rows
// whose outcome is missing), and returns their (1-delta)-quantile.
PredictionRule mar_pac_small(const MaskedDataset& cal, std::span<const double> scores,
                             const BinAssignment& bins, double alpha, double delta,
                             std::uint64_t budget = kDefaultPlacementBudget);

// Counterfactual interval shifted by the observed control outcome. control
// must hold a finite value at every index of the rule.
std::map<std::size_t, Interval> ite_sets(const PredictionRule& rule, const ScoreModel& model,
                                         const MaskedDataset& cal, std::span<const double> control);

}  // namespace procp
