#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace procp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Slack used when comparing accumulated probability mass against a level.
// Masses built from integer counts are exact rationals; this absorbs the
// rounding of their floating-point partial sums so that a CDF which equals
// the level in exact arithmetic counts as reaching it.
inline constexpr double kLevelTolerance = 1e-12;

using FeatureMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Features X, missingness indicators A (1 = outcome observed) and outcomes
// Y that are only readable where A = 1.
class MaskedDataset {
 public:
  MaskedDataset(FeatureMatrix features, std::vector<std::uint8_t> mask,
                std::vector<double> outcomes);

  std::size_t size() const { return mask_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }

  const FeatureMatrix& features() const { return features_; }
  std::span<const double> row(std::size_t i) const;

  const std::vector<std::uint8_t>& mask() const { return mask_; }
  bool observed(std::size_t i) const { return mask_.at(i) != 0; }

  // Throws std::out_of_range when the outcome at i is missing.
  double outcome(std::size_t i) const;

  std::vector<std::size_t> missing_indices() const;
  std::vector<std::size_t> observed_indices() const;
  std::size_t n_missing() const { return n_missing_; }
  std::size_t n_observed() const { return size() - n_missing_; }

  MaskedDataset subset(std::span<const std::size_t> rows) const;

 private:
  FeatureMatrix features_;
  std::vector<std::uint8_t> mask_;
  std::vector<double> outcomes_;  // NaN where mask == 0
  std::size_t n_missing_ = 0;
};

struct Atom {
  double value;   // finite or +inf
  double weight;  // >= 0
};

// Finite discrete distribution on R u {+inf}. Atoms are kept sorted by value
// with equal values merged and zero-weight atoms dropped.
class WeightedDiscreteDist {
 public:
  static constexpr double kMassTolerance = 1e-9;

  // Requires the weights to sum to 1 within kMassTolerance; renormalizes.
  explicit WeightedDiscreteDist(std::vector<Atom> atoms);

  // Accepts any positive total mass and rescales it to 1.
  static WeightedDiscreteDist from_masses(std::vector<Atom> atoms);

  std::span<const Atom> atoms() const { return atoms_; }
  double mass_at(double value) const;
  double infinite_mass() const;
  // Sum of the weights as supplied, before normalization.
  double input_mass() const { return input_mass_; }

 private:
  WeightedDiscreteDist() = default;
  static std::vector<Atom> canonicalize(std::vector<Atom> atoms, double total);
  std::vector<Atom> atoms_;
  double input_mass_ = 0.0;
};

// inf{t : P(T <= t) >= level}. Levels <= 0 give -inf, levels > 1 give +inf.
double weighted_quantile(const WeightedDiscreteDist& dist, double level);

// C(A,a) C(B-A,b-a) / C(B,b), with out-of-range binomials read as zero.
// Exact big-integer arithmetic for B <= 1000, log-gamma beyond.
double hypergeom_pmf(std::int64_t a, std::int64_t B, std::int64_t A,
                     std::int64_t b);
double hypergeom_pmf_logspace(std::int64_t a, std::int64_t B, std::int64_t A,
                              std::int64_t b);

double tv_distance(const WeightedDiscreteDist& p, const WeightedDiscreteDist& q);

// Nominal levels. Effective guarantee levels are derived by the constructors.
struct Level {
  double alpha = 0.1;
  double epsilon = 0.0;
  double delta = 0.1;

  void validate() const;
};

// Closed interval [lower, upper]; lower > upper encodes the empty set.
struct Interval {
  double lower = kInf;
  double upper = -kInf;

  static Interval empty_set() { return {}; }
  bool empty() const { return lower > upper; }
  double width() const { return empty() ? 0.0 : upper - lower; }
  bool contains(double y) const { return lower <= y && y <= upper; }
};

}  // namespace procp
