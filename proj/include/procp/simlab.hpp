#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "procp/methods.hpp"
#include "procp/propensity.hpp"
#include "procp/record.hpp"
#include "procp/rng.hpp"
#include "procp/scores.hpp"

namespace procp {

enum class DgpKind { Setting1, Setting2, HighDim, Custom };

std::string to_string(DgpKind kind);
DgpKind parse_dgp_kind(std::string_view name);

struct DgpSpec {
  DgpKind kind = DgpKind::Setting1;
  std::size_t n = 500;
  std::uint64_t seed = 1;

  // High-dimensional logistic design.
  std::size_t dim = 1;
  Eigen::VectorXd beta;   // outcome coefficients
  double gamma0 = 1.2;
  Eigen::VectorXd gamma;  // missingness coefficients

  // Custom designs supply their own samplers. sample_outcome may be empty,
  // in which case the design cannot be used for conditional studies.
  std::function<std::vector<double>(Rng&)> sample_features;
  std::function<double(std::span<const double>)> propensity;
  std::function<double(std::span<const double>, Rng&)> sample_outcome;

  static DgpSpec setting1(std::size_t n = 500, std::uint64_t seed = 1);
  static DgpSpec setting2(std::size_t n = 500, std::uint64_t seed = 1);
  // d = 30; beta ~ U(-2,2)^d drawn from param_seed, gamma = (0.2,-0.3,0.2,0,...).
  static DgpSpec highdim(std::size_t n = 500, std::uint64_t seed = 1, std::uint64_t param_seed = 1);
};

double true_propensity(const DgpSpec& spec, std::span<const double> x);
PropensityModel known_propensity(const DgpSpec& spec);
double sample_outcome(const DgpSpec& spec, std::span<const double> x, Rng& rng);

// Observed data plus the hidden truth, which is kept for evaluation only.
struct SimData {
  MaskedDataset data;
  std::vector<double> outcomes;
  std::vector<double> propensities;
};

SimData generate(const DgpSpec& spec);
SimData generate(const DgpSpec& spec, std::size_t n, Rng& rng);

struct TrialMetrics {
  std::size_t n_missing = 0;
  std::size_t n_covered = 0;
  double coverage_proportion = 1.0;
  double median_width = 0.0;
  std::size_t infinite_width_count = 0;
  std::map<BinId, double> bin_coverage;

  // covered >= ceil((1 - alpha) N0), evaluated in integers.
  bool meets(double alpha) const;
};

double median_of(std::vector<double> values);

TrialMetrics evaluate(const PredictionRule& rule, const MaskedDataset& cal, std::span<const double> truth,
                      const ScoreModel& model, const BinAssignment* bins = nullptr);

enum class PropensitySource { Known, Logistic, Kernel };

std::string to_string(PropensitySource source);
PropensitySource parse_propensity_source(std::string_view name);

struct StudyConfig {
  MethodConfig method;
  PropensitySource propensity = PropensitySource::Known;
  std::size_t n_train = 500;
  std::size_t n_trials = 500;
  std::uint64_t seed = 1;
  // 0 picks the hardware concurrency, capped by PROCP_THREADS.
  unsigned threads = 0;
};

struct MeanWithError {
  double mean = 0.0;
  double se = 0.0;
};

MeanWithError mean_and_se(std::span<const double> values);

struct StudySummary {
  std::string method;
  double alpha = 0.0;
  std::vector<TrialMetrics> trials;
  MeanWithError coverage;
  MeanWithError prob_meets;  // P(coverage >= 1 - alpha)
  MeanWithError median_width;
  std::size_t infinite_median_trials = 0;
  double delta_hat = 0.0;

  TextRecord to_record() const;
};

unsigned worker_count(unsigned requested);

// Training split (mean model, estimated propensity) is drawn once and shared
// by every trial; each trial draws its own calibration set from substream
// (seed, trial).
StudySummary run_study(const DgpSpec& spec, const StudyConfig& config);

struct ConditionalTrial {
  double coverage = 0.0;  // mean coverage proportion over inner draws
  double se = 0.0;
  std::size_t n_missing = 0;
  bool features_resampled = false;
};

// Holds (B, A) fixed per outer draw and redraws outcomes, and for Setting 1
// with a known propensity also the features within each bin given A.
std::vector<ConditionalTrial> conditional_coverage_study(const DgpSpec& spec, const StudyConfig& config,
                                                         std::size_t n_outer, std::size_t n_inner,
                                                         std::uint64_t seed);

struct Histogram {
  std::vector<double> edges;  // bins [edges[j], edges[j+1])
  std::vector<std::size_t> counts;
  std::size_t infinite = 0;
};

Histogram histogram(std::span<const double> values, std::size_t bins);
std::string histogram_csv(const Histogram& h, const std::string& label);

}  // namespace procp
