#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "procp/core.hpp"

namespace procp {

// Linear mean model mu(x) = intercept + coefficients . x
struct MeanModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  // Nonzero when the normal equations were near-singular and a ridge term
  // was added.
  double ridge_penalty = 0.0;

  double predict(std::span<const double> x) const;
};

// Ordinary least squares on the rows with an observed outcome.
MeanModel fit_mean_lsq(const MaskedDataset& train);

std::string serialize(const MeanModel& model);
MeanModel parse_mean_model(std::string_view text);

enum class ScoreKind { Residual, Custom };

using ScoreFunction = std::function<double(std::span<const double>, double)>;

// Nonconformity score s(x, y). Residual scores |y - mu(x)| are built in;
// anything else can be plugged in as a callable.
class ScoreModel {
 public:
  static ScoreModel residual(MeanModel mean);
  static ScoreModel custom(ScoreFunction fn, std::string name = "custom");

  ScoreKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  const MeanModel& mean() const;

  double operator()(std::span<const double> x, double y) const;

 private:
  ScoreKind kind_ = ScoreKind::Residual;
  std::string name_;
  MeanModel mean_;
  ScoreFunction fn_;
};

double score(const ScoreModel& model, std::span<const double> x, double y);

// Scores of the observed rows; NaN at rows whose outcome is missing.
std::vector<double> observed_scores(const ScoreModel& model, const MaskedDataset& data);

// {y : s(x,y) <= t} for the residual score.
Interval interval_from_threshold(const ScoreModel& model, std::span<const double> x, double t);

}  // namespace procp
