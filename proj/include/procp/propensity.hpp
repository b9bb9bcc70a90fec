#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "procp/core.hpp"

namespace procp {

enum class PropensityKind { Known, Logistic, Kernel };

using PropensityFunction = std::function<double(std::span<const double>)>;

// x -> P(A = 1 | X = x), clamped to [clamp, 1 - clamp] on evaluation.
class PropensityModel {
 public:
  static constexpr double kDefaultClamp = 1e-3;

  static PropensityModel known(PropensityFunction fn, std::string name,
                               double clamp = kDefaultClamp);
  static PropensityModel logistic(double intercept, Eigen::VectorXd coefficients,
                                  double clamp = kDefaultClamp);
  static PropensityModel kernel(FeatureMatrix train_features, std::vector<double> train_mask,
                                double bandwidth, double clamp = kDefaultClamp);

  PropensityKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double clamp() const { return clamp_; }

  double operator()(std::span<const double> x) const;
  std::vector<double> evaluate(const FeatureMatrix& points) const;

  // Logistic parameters.
  double intercept() const { return intercept_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  int iterations() const { return iterations_; }
  bool converged() const { return converged_; }

  // Kernel parameters.
  double bandwidth() const { return bandwidth_; }
  const FeatureMatrix& train_features() const { return train_features_; }
  const std::vector<double>& train_mask() const { return train_mask_; }
  // Evaluations where every kernel weight underflowed and the training mask
  // mean was returned instead.
  std::size_t fallback_count() const { return fallbacks_ ? fallbacks_->load() : 0; }

 private:
  friend PropensityModel fit_logistic(const MaskedDataset&, int, double, double);

  double raw(std::span<const double> x) const;

  PropensityKind kind_ = PropensityKind::Known;
  std::string name_;
  double clamp_ = kDefaultClamp;
  PropensityFunction fn_;
  double intercept_ = 0.0;
  Eigen::VectorXd coefficients_;
  int iterations_ = 0;
  bool converged_ = true;
  FeatureMatrix train_features_;
  std::vector<double> train_mask_;
  double train_mask_mean_ = 0.0;
  double bandwidth_ = 0.0;
  std::shared_ptr<std::atomic<std::size_t>> fallbacks_;
};

// Maximum-likelihood logistic regression of the mask on the features, fitted
// by iteratively reweighted least squares.
PropensityModel fit_logistic(const MaskedDataset& train, int max_iter = 100, double tol = 1e-8,
                             double clamp = PropensityModel::kDefaultClamp);

// 20 log-spaced bandwidths spanning [0.05, 5] times the mean feature
// standard deviation.
std::vector<double> default_bandwidth_grid(const MaskedDataset& train);

// Gaussian-kernel Nadaraya-Watson estimate of the mask. The bandwidth is the
// grid value with the smallest validation squared error when half of the
// rows (odd positions) are held out; the returned model uses all rows.
PropensityModel fit_kernel(const MaskedDataset& train, std::span<const double> bandwidth_grid,
                           double clamp = PropensityModel::kDefaultClamp);

// Odds-ratio accuracy of an estimated propensity. max_abs_log_f is a maximum
// over the supplied points only, so it under-reports the true sup-norm.
struct OddsDiagnostic {
  double max_abs_log_f = 0.0;
  double delta_hat = 0.0;  // exp(2 * max_abs_log_f) - 1
};

OddsDiagnostic odds_diagnostic(std::span<const double> truth, std::span<const double> estimate);
OddsDiagnostic odds_diagnostic(const PropensityModel& truth, const PropensityModel& estimate,
                               const FeatureMatrix& eval_points);

// Logistic and kernel models only; known closed forms cannot be serialized.
std::string serialize(const PropensityModel& model);
PropensityModel parse_propensity_model(std::string_view text);

}  // namespace procp
