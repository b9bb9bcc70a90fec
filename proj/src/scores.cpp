#include "procp/scores.hpp"

#include <cmath>
#include <stdexcept>

#include "procp/record.hpp"

namespace procp {

double MeanModel::predict(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(coefficients.size())) {
    throw std::invalid_argument("MeanModel::predict: expected " + std::to_string(coefficients.size()) +
                                " features, got " + std::to_string(x.size()));
  }
  double mu = intercept;
  for (std::size_t j = 0; j < x.size(); ++j) mu += coefficients[static_cast<Eigen::Index>(j)] * x[j];
  return mu;
}

MeanModel fit_mean_lsq(const MaskedDataset& train) {
  const auto rows = train.observed_indices();
  const auto d = static_cast<Eigen::Index>(train.dim());
  const Eigen::Index p = d + 1;
  if (static_cast<Eigen::Index>(rows.size()) < p) {
    throw std::invalid_argument("fit_mean_lsq: need at least d+1 = " + std::to_string(p) +
                                " observed rows, got " + std::to_string(rows.size()));
  }

  Eigen::MatrixXd design(static_cast<Eigen::Index>(rows.size()), p);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    design(i, 0) = 1.0;
    design.row(i).tail(d) = train.features().row(static_cast<Eigen::Index>(rows[r]));
    y[i] = train.outcome(rows[r]);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const auto dependent = qr.colsPermutation().indices()[qr.rank()];
    const std::string what = dependent == 0 ? std::string("the intercept column")
                                            : "feature column " + std::to_string(dependent - 1);
    throw std::invalid_argument("fit_mean_lsq: design is rank deficient (rank " + std::to_string(qr.rank()) +
                                " < " + std::to_string(p) + "); " + what +
                                " is a linear combination of the others");
  }

  MeanModel model;
  Eigen::MatrixXd gram = design.transpose() * design;
  const Eigen::VectorXd rhs = design.transpose() * y;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  Eigen::VectorXd beta;
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
    beta = llt.solve(rhs);
  } else {
    model.ridge_penalty = 1e-8 * gram.trace() / static_cast<double>(p);
    gram.diagonal().array() += model.ridge_penalty;
    beta = gram.ldlt().solve(rhs);
  }
  model.intercept = beta[0];
  model.coefficients = beta.tail(d);
  return model;
}

std::string serialize(const MeanModel& model) {
  TextRecord record;
  record.set("kind", std::string("mean_lsq"));
  record.set("intercept", model.intercept);
  record.set("coefficients", std::span<const double>(model.coefficients.data(),
                                                     static_cast<std::size_t>(model.coefficients.size())));
  record.set("ridge_penalty", model.ridge_penalty);
  return record.str();
}

MeanModel parse_mean_model(std::string_view text) {
  const auto record = TextRecord::parse(text);
  if (record.get("kind") != "mean_lsq")
    throw std::invalid_argument("parse_mean_model: unexpected kind '" + record.get("kind") + "'");
  MeanModel model;
  model.intercept = record.get_double("intercept");
  const auto coefs = record.get_doubles("coefficients");
  model.coefficients = Eigen::Map<const Eigen::VectorXd>(coefs.data(), static_cast<Eigen::Index>(coefs.size()));
  if (record.has("ridge_penalty")) model.ridge_penalty = record.get_double("ridge_penalty");
  return model;
}

ScoreModel ScoreModel::residual(MeanModel mean) {
  ScoreModel model;
  model.kind_ = ScoreKind::Residual;
  model.name_ = "residual";
  model.mean_ = std::move(mean);
  return model;
}

ScoreModel ScoreModel::custom(ScoreFunction fn, std::string name) {
  if (!fn) throw std::invalid_argument("ScoreModel::custom: empty score function");
  ScoreModel model;
  model.kind_ = ScoreKind::Custom;
  model.name_ = std::move(name);
  model.fn_ = std::move(fn);
  return model;
}

const MeanModel& ScoreModel::mean() const {
  if (kind_ != ScoreKind::Residual) throw std::logic_error("ScoreModel::mean: not a residual score");
  return mean_;
}

double ScoreModel::operator()(std::span<const double> x, double y) const {
  if (kind_ == ScoreKind::Residual) return std::abs(y - mean_.predict(x));
  return fn_(x, y);
}

double score(const ScoreModel& model, std::span<const double> x, double y) { return model(x, y); }

std::vector<double> observed_scores(const ScoreModel& model, const MaskedDataset& data) {
  std::vector<double> out(data.size(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.observed(i)) out[i] = model(data.row(i), data.outcome(i));
  return out;
}

Interval interval_from_threshold(const ScoreModel& model, std::span<const double> x, double t) {
  if (model.kind() != ScoreKind::Residual) {
    throw std::invalid_argument("interval_from_threshold: score '" + model.name() +
                                "' does not define an interval; compare s(x,y) against the threshold directly");
  }
  if (std::isnan(t)) throw std::invalid_argument("interval_from_threshold: threshold is NaN");
  if (t < 0.0) return Interval::empty_set();
  if (std::isinf(t)) return {-kInf, kInf};
  const double mu = model.mean().predict(x);
  return {mu - t, mu + t};
}

}  // namespace procp
