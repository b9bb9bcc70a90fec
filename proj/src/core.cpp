#include "procp/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/multiprecision/cpp_int.hpp>

namespace procp {

namespace {

void check_atoms(const std::vector<Atom>& atoms) {
  for (const auto& atom : atoms) {
    if (std::isnan(atom.value) || atom.value == -kInf) {
      throw std::invalid_argument("WeightedDiscreteDist: atom values must be finite or +inf");
    }
    if (!(atom.weight >= 0.0) || std::isinf(atom.weight)) {
      throw std::invalid_argument("WeightedDiscreteDist: weights must be finite and nonnegative");
    }
  }
}

double total_weight(const std::vector<Atom>& atoms) {
  double total = 0.0;
  for (const auto& atom : atoms) total += atom.weight;
  return total;
}

}  // namespace

MaskedDataset::MaskedDataset(FeatureMatrix features, std::vector<std::uint8_t> mask,
                             std::vector<double> outcomes)
    : features_(std::move(features)), mask_(std::move(mask)), outcomes_(std::move(outcomes)) {
  const auto n = mask_.size();
  if (n == 0) throw std::invalid_argument("MaskedDataset: need at least one row");
  if (static_cast<std::size_t>(features_.rows()) != n || outcomes_.size() != n) {
    throw std::invalid_argument("MaskedDataset: features, mask and outcomes must have equal length (rows=" +
                                std::to_string(features_.rows()) + ", mask=" + std::to_string(n) +
                                ", outcomes=" + std::to_string(outcomes_.size()) + ")");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (mask_[i] > 1) throw std::invalid_argument("MaskedDataset: mask entries must be 0 or 1");
    if (mask_[i] == 0) {
      outcomes_[i] = std::numeric_limits<double>::quiet_NaN();
      ++n_missing_;
    }
  }
}

std::span<const double> MaskedDataset::row(std::size_t i) const {
  if (i >= size()) throw std::out_of_range("MaskedDataset::row: index out of range");
  return {features_.data() + i * dim(), dim()};
}

double MaskedDataset::outcome(std::size_t i) const {
  if (!observed(i)) {
    throw std::out_of_range("MaskedDataset::outcome: outcome at index " + std::to_string(i) + " is missing");
  }
  return outcomes_[i];
}

std::vector<std::size_t> MaskedDataset::missing_indices() const {
  std::vector<std::size_t> out;
  out.reserve(n_missing_);
  for (std::size_t i = 0; i < size(); ++i)
    if (mask_[i] == 0) out.push_back(i);
  return out;
}

std::vector<std::size_t> MaskedDataset::observed_indices() const {
  std::vector<std::size_t> out;
  out.reserve(n_observed());
  for (std::size_t i = 0; i < size(); ++i)
    if (mask_[i] != 0) out.push_back(i);
  return out;
}

MaskedDataset MaskedDataset::subset(std::span<const std::size_t> rows) const {
  FeatureMatrix f(static_cast<Eigen::Index>(rows.size()), features_.cols());
  std::vector<std::uint8_t> m(rows.size());
  std::vector<double> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = rows[r];
    if (i >= size()) throw std::out_of_range("MaskedDataset::subset: index out of range");
    f.row(static_cast<Eigen::Index>(r)) = features_.row(static_cast<Eigen::Index>(i));
    m[r] = mask_[i];
    y[r] = outcomes_[i];
  }
  return MaskedDataset(std::move(f), std::move(m), std::move(y));
}

std::vector<Atom> WeightedDiscreteDist::canonicalize(std::vector<Atom> atoms, double total) {
  std::sort(atoms.begin(), atoms.end(),
            [](const Atom& a, const Atom& b) { return a.value < b.value; });
  std::vector<Atom> merged;
  merged.reserve(atoms.size());
  for (const auto& atom : atoms) {
    if (atom.weight == 0.0) continue;
    if (!merged.empty() && merged.back().value == atom.value) {
      merged.back().weight += atom.weight;
    } else {
      merged.push_back(atom);
    }
  }
  for (auto& atom : merged) atom.weight /= total;
  return merged;
}

WeightedDiscreteDist::WeightedDiscreteDist(std::vector<Atom> atoms) {
  check_atoms(atoms);
  input_mass_ = total_weight(atoms);
  if (std::abs(input_mass_ - 1.0) > kMassTolerance) {
    throw std::invalid_argument("WeightedDiscreteDist: weights sum to " + std::to_string(input_mass_) +
                                ", expected 1 within 1e-9");
  }
  atoms_ = canonicalize(std::move(atoms), input_mass_);
}

WeightedDiscreteDist WeightedDiscreteDist::from_masses(std::vector<Atom> atoms) {
  check_atoms(atoms);
  const double total = total_weight(atoms);
  if (!(total > 0.0)) throw std::invalid_argument("WeightedDiscreteDist: total mass must be positive");
  WeightedDiscreteDist dist;
  dist.input_mass_ = total;
  dist.atoms_ = canonicalize(std::move(atoms), total);
  return dist;
}

double WeightedDiscreteDist::mass_at(double value) const {
  auto it = std::lower_bound(atoms_.begin(), atoms_.end(), value,
                             [](const Atom& a, double v) { return a.value < v; });
  return (it != atoms_.end() && it->value == value) ? it->weight : 0.0;
}

double WeightedDiscreteDist::infinite_mass() const { return mass_at(kInf); }

double weighted_quantile(const WeightedDiscreteDist& dist, double level) {
  if (std::isnan(level)) throw std::invalid_argument("weighted_quantile: level is NaN");
  if (level <= 0.0) return -kInf;
  if (level > 1.0) return kInf;
  const auto atoms = dist.atoms();
  double cumulative = 0.0;
  for (const auto& atom : atoms) {
    cumulative += atom.weight;
    if (cumulative >= level - kLevelTolerance) return atom.value;
  }
  return atoms.empty() ? kInf : atoms.back().value;
}

namespace {

using boost::multiprecision::cpp_int;
using boost::multiprecision::cpp_rational;

cpp_int binomial_exact(std::int64_t n, std::int64_t k) {
  if (n < 0 || k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  cpp_int result = 1;
  for (std::int64_t i = 1; i <= k; ++i) {
    result *= (n - k + i);
    result /= i;
  }
  return result;
}

double log_binomial(std::int64_t n, std::int64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

bool binomial_is_zero(std::int64_t n, std::int64_t k) { return n < 0 || k < 0 || k > n; }

void check_hypergeom_args(std::int64_t B, std::int64_t b) {
  if (B < 0) throw std::invalid_argument("hypergeom_pmf: B must be nonnegative");
  if (binomial_is_zero(B, b)) {
    throw std::invalid_argument("hypergeom_pmf: C(B,b) is zero (B=" + std::to_string(B) +
                                ", b=" + std::to_string(b) + ")");
  }
}

}  // namespace

double hypergeom_pmf_logspace(std::int64_t a, std::int64_t B, std::int64_t A, std::int64_t b) {
  check_hypergeom_args(B, b);
  if (binomial_is_zero(A, a) || binomial_is_zero(B - A, b - a)) return 0.0;
  return std::exp(log_binomial(A, a) + log_binomial(B - A, b - a) - log_binomial(B, b));
}

double hypergeom_pmf(std::int64_t a, std::int64_t B, std::int64_t A, std::int64_t b) {
  check_hypergeom_args(B, b);
  if (B > 1000) return hypergeom_pmf_logspace(a, B, A, b);
  const cpp_int numerator = binomial_exact(A, a) * binomial_exact(B - A, b - a);
  if (numerator == 0) return 0.0;
  const cpp_rational ratio(numerator, binomial_exact(B, b));
  return ratio.convert_to<double>();
}

double tv_distance(const WeightedDiscreteDist& p, const WeightedDiscreteDist& q) {
  const auto pa = p.atoms();
  const auto qa = q.atoms();
  std::size_t i = 0, j = 0;
  double sum = 0.0;
  while (i < pa.size() || j < qa.size()) {
    if (j == qa.size() || (i < pa.size() && pa[i].value < qa[j].value)) {
      sum += pa[i++].weight;
    } else if (i == pa.size() || qa[j].value < pa[i].value) {
      sum += qa[j++].weight;
    } else {
      sum += std::abs(pa[i++].weight - qa[j++].weight);
    }
  }
  return std::clamp(0.5 * sum, 0.0, 1.0);
}

void Level::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("Level: alpha must lie in (0,1)");
  if (!(epsilon >= 0.0) || std::isinf(epsilon)) throw std::invalid_argument("Level: epsilon must be >= 0");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("Level: delta must lie in (0,1)");
}

}  // namespace procp
