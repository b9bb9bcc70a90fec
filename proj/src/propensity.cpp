#include "procp/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <ranges>
#include <stdexcept>

#include "procp/record.hpp"

namespace procp {

namespace {

void check_clamp(double clamp) {
  if (!(clamp > 0.0 && clamp < 0.5)) throw std::invalid_argument("PropensityModel: clamp must lie in (0, 0.5)");
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double squared_distance(std::span<const double> a, const double* b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

// Nadaraya-Watson average of `response` over `rows` of `features`. Returns
// NaN when every weight underflows.
template <class Rows>
double nadaraya_watson(std::span<const double> x, const FeatureMatrix& features,
                       std::span<const double> response, const Rows& rows, double bandwidth) {
  const double scale = -0.5 / (bandwidth * bandwidth);
  const auto d = static_cast<std::size_t>(features.cols());
  double num = 0.0, den = 0.0;
  for (auto i : rows) {
    const double w = std::exp(scale * squared_distance(x, features.data() + i * d));
    num += w * response[i];
    den += w;
  }
  if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return num / den;
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

PropensityModel PropensityModel::known(PropensityFunction fn, std::string name, double clamp) {
  check_clamp(clamp);
  if (!fn) throw std::invalid_argument("PropensityModel::known: empty function");
  PropensityModel m;
  m.kind_ = PropensityKind::Known;
  m.name_ = std::move(name);
  m.clamp_ = clamp;
  m.fn_ = std::move(fn);
  return m;
}

PropensityModel PropensityModel::logistic(double intercept, Eigen::VectorXd coefficients, double clamp) {
  check_clamp(clamp);
  PropensityModel m;
  m.kind_ = PropensityKind::Logistic;
  m.name_ = "logistic";
  m.clamp_ = clamp;
  m.intercept_ = intercept;
  m.coefficients_ = std::move(coefficients);
  return m;
}

PropensityModel PropensityModel::kernel(FeatureMatrix train_features, std::vector<double> train_mask,
                                        double bandwidth, double clamp) {
  check_clamp(clamp);
  if (!(bandwidth > 0.0) || std::isinf(bandwidth))
    throw std::invalid_argument("PropensityModel::kernel: bandwidth must be positive and finite");
  if (train_mask.empty() || static_cast<std::size_t>(train_features.rows()) != train_mask.size())
    throw std::invalid_argument("PropensityModel::kernel: training features and mask disagree in length");
  PropensityModel m;
  m.kind_ = PropensityKind::Kernel;
  m.name_ = "kernel";
  m.clamp_ = clamp;
  m.bandwidth_ = bandwidth;
  m.train_features_ = std::move(train_features);
  m.train_mask_ = std::move(train_mask);
  double total = 0.0;
  for (double a : m.train_mask_) total += a;
  m.train_mask_mean_ = total / static_cast<double>(m.train_mask_.size());
  m.fallbacks_ = std::make_shared<std::atomic<std::size_t>>(0);
  return m;
}

double PropensityModel::raw(std::span<const double> x) const {
  switch (kind_) {
    case PropensityKind::Known:
      return fn_(x);
    case PropensityKind::Logistic: {
      if (x.size() != static_cast<std::size_t>(coefficients_.size()))
        throw std::invalid_argument("PropensityModel: feature dimension mismatch");
      double eta = intercept_;
      for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients_[static_cast<Eigen::Index>(j)] * x[j];
      return sigmoid(eta);
    }
    case PropensityKind::Kernel: {
      if (x.size() != static_cast<std::size_t>(train_features_.cols()))
        throw std::invalid_argument("PropensityModel: feature dimension mismatch");
      const auto rows = std::views::iota(std::size_t{0}, train_mask_.size());
      const double p = nadaraya_watson(x, train_features_, train_mask_, rows, bandwidth_);
      if (std::isnan(p)) {
        fallbacks_->fetch_add(1, std::memory_order_relaxed);
        return train_mask_mean_;
      }
      return p;
    }
  }
  throw std::logic_error("PropensityModel: unknown kind");
}

double PropensityModel::operator()(std::span<const double> x) const {
  const double p = raw(x);
  if (std::isnan(p)) throw std::runtime_error("PropensityModel '" + name_ + "' returned NaN");
  return std::clamp(p, clamp_, 1.0 - clamp_);
}

std::vector<double> PropensityModel::evaluate(const FeatureMatrix& points) const {
  std::vector<double> out(static_cast<std::size_t>(points.rows()));
  const auto d = static_cast<std::size_t>(points.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)({points.data() + i * d, d});
  return out;
}

PropensityModel fit_logistic(const MaskedDataset& train, int max_iter, double tol, double clamp) {
  const auto n = static_cast<Eigen::Index>(train.size());
  const auto d = static_cast<Eigen::Index>(train.dim());
  if (train.n_missing() == 0 || train.n_observed() == 0) {
    throw std::invalid_argument("fit_logistic: training mask has a single class; both observed and missing rows are required");
  }
  if (max_iter < 1) throw std::invalid_argument("fit_logistic: max_iter must be positive");

  Eigen::MatrixXd design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = train.features();
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = train.mask()[static_cast<std::size_t>(i)];

  constexpr double kDivergence = 1e3;
  const auto separation = [] {
    return std::runtime_error(
        "fit_logistic: perfect separation detected (coefficients diverge); clamp the estimate or use the kernel estimator");
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d + 1);
  int iter = 0;
  bool converged = false;
  while (iter < max_iter) {
    ++iter;
    const Eigen::VectorXd eta = design * beta;
    Eigen::VectorXd mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu[i] = sigmoid(eta[i]);
      w[i] = mu[i] * (1.0 - mu[i]);
    }
    const Eigen::VectorXd grad = design.transpose() * (a - mu);
    const Eigen::MatrixXd hessian = design.transpose() * w.asDiagonal() * design;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw separation();
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) throw separation();
    beta += step;
    if (beta.cwiseAbs().maxCoeff() > kDivergence) throw separation();
    if (step.cwiseAbs().maxCoeff() < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    // Non-convergence with near-perfect fitted probabilities is separation
    // that has not yet crossed the divergence bound.
    const Eigen::VectorXd eta = design * beta;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) worst = std::max(worst, std::abs(a[i] - sigmoid(eta[i])));
    if (worst < 1e-6) throw separation();
  }

  auto model = PropensityModel::logistic(beta[0], beta.tail(d), clamp);
  model.iterations_ = iter;
  model.converged_ = converged;
  return model;
}

std::vector<double> default_bandwidth_grid(const MaskedDataset& train) {
  const auto& x = train.features();
  double scale = 0.0;
  const auto n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = n > 1 ? (x.col(j).array() - mean).square().sum() / (n - 1.0) : 0.0;
    scale += std::sqrt(var);
  }
  scale = x.cols() > 0 ? scale / static_cast<double>(x.cols()) : 1.0;
  if (!(scale > 0.0)) scale = 1.0;
  std::vector<double> grid(20);
  const double lo = std::log(0.05), hi = std::log(5.0);
  for (std::size_t g = 0; g < grid.size(); ++g)
    grid[g] = scale * std::exp(lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid.size() - 1));
  return grid;
}

PropensityModel fit_kernel(const MaskedDataset& train, std::span<const double> bandwidth_grid, double clamp) {
  if (bandwidth_grid.empty()) throw std::invalid_argument("fit_kernel: bandwidth grid is empty");
  for (double h : bandwidth_grid)
    if (!(h > 0.0) || std::isinf(h)) throw std::invalid_argument("fit_kernel: bandwidths must be positive and finite");

  const auto n = train.size();
  std::vector<double> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = train.mask()[i];

  double best_h = bandwidth_grid.front();
  if (n >= 2 && bandwidth_grid.size() > 1) {
    std::vector<std::size_t> fit_rows, val_rows;
    for (std::size_t i = 0; i < n; ++i) (i % 2 == 0 ? fit_rows : val_rows).push_back(i);
    double fit_mean = 0.0;
    for (auto i : fit_rows) fit_mean += mask[i];
    fit_mean /= static_cast<double>(fit_rows.size());

    double best_err = kInf;
    for (double h : bandwidth_grid) {
      double err = 0.0;
      for (auto i : val_rows) {
        double p = nadaraya_watson(train.row(i), train.features(), mask, fit_rows, h);
        if (std::isnan(p)) p = fit_mean;
        err += (p - mask[i]) * (p - mask[i]);
      }
      if (err < best_err) {
        best_err = err;
        best_h = h;
      }
    }
  }
  return PropensityModel::kernel(train.features(), std::move(mask), best_h, clamp);
}

OddsDiagnostic odds_diagnostic(std::span<const double> truth, std::span<const double> estimate) {
  if (truth.empty()) throw std::invalid_argument("odds_diagnostic: no evaluation points");
  if (truth.size() != estimate.size()) throw std::invalid_argument("odds_diagnostic: length mismatch");
  OddsDiagnostic diag;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double p = truth[i], q = estimate[i];
    if (!(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0))
      throw std::invalid_argument("odds_diagnostic: propensities must lie strictly inside (0,1)");
    diag.max_abs_log_f = std::max(diag.max_abs_log_f, std::abs(logit(p) - logit(q)));
  }
  diag.delta_hat = std::exp(2.0 * diag.max_abs_log_f) - 1.0;
  return diag;
}

OddsDiagnostic odds_diagnostic(const PropensityModel& truth, const PropensityModel& estimate,
                               const FeatureMatrix& eval_points) {
  const auto p = truth.evaluate(eval_points);
  const auto q = estimate.evaluate(eval_points);
  return odds_diagnostic(p, q);
}

std::string serialize(const PropensityModel& model) {
  TextRecord record;
  record.set("clamp", model.clamp());
  switch (model.kind()) {
    case PropensityKind::Known:
      throw std::invalid_argument("serialize: known closed-form propensities cannot be serialized");
    case PropensityKind::Logistic: {
      record.set("kind", std::string("logistic"));
      record.set("intercept", model.intercept());
      const auto& c = model.coefficients();
      record.set("coefficients", std::span<const double>(c.data(), static_cast<std::size_t>(c.size())));
      break;
    }
    case PropensityKind::Kernel: {
      record.set("kind", std::string("kernel"));
      record.set("bandwidth", model.bandwidth());
      const auto& x = model.train_features();
      record.set("dim", static_cast<double>(x.cols()));
      record.set("train_features", std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
      record.set("train_mask", std::span<const double>(model.train_mask()));
      break;
    }
  }
  return record.str();
}

PropensityModel parse_propensity_model(std::string_view text) {
  const auto record = TextRecord::parse(text);
  const auto& kind = record.get("kind");
  const double clamp = record.has("clamp") ? record.get_double("clamp") : PropensityModel::kDefaultClamp;
  if (kind == "logistic") {
    const auto c = record.get_doubles("coefficients");
    return PropensityModel::logistic(record.get_double("intercept"),
                                     Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())),
                                     clamp);
  }
  if (kind == "kernel") {
    const auto dim = static_cast<Eigen::Index>(record.get_double("dim"));
    const auto values = record.get_doubles("train_features");
    auto mask = record.get_doubles("train_mask");
    if (dim <= 0 || values.size() != mask.size() * static_cast<std::size_t>(dim))
      throw std::invalid_argument("parse_propensity_model: kernel training data has inconsistent shape");
    FeatureMatrix x = Eigen::Map<const FeatureMatrix>(values.data(), static_cast<Eigen::Index>(mask.size()), dim);
    return PropensityModel::kernel(std::move(x), std::move(mask), record.get_double("bandwidth"), clamp);
  }
  throw std::invalid_argument("parse_propensity_model: unknown kind '" + kind + "'");
}

}  // namespace procp
