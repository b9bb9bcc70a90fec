#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "procp/scores.hpp"

using namespace procp;

namespace {

MeanModel line(double b0, double b1) {
  MeanModel m;
  m.intercept = b0;
  m.coefficients = Eigen::VectorXd::Constant(1, b1);
  return m;
}

}  // namespace

TEST_SUITE("scores") {

TEST_CASE("least squares examples") {
  auto two = fit_mean_lsq(testing::dataset_1d({0, 1}, {1, 1}, {1, 3}));
  CHECK(two.intercept == doctest::Approx(1.0));
  CHECK(two.coefficients[0] == doctest::Approx(2.0));

  auto flat = fit_mean_lsq(testing::dataset_1d({0, 1, 2, 5}, {1, 1, 1, 1}, {4, 4, 4, 4}));
  CHECK(flat.intercept == doctest::Approx(4.0));
  CHECK(flat.coefficients[0] == doctest::Approx(0.0).epsilon(1e-12));

  auto three = fit_mean_lsq(testing::dataset_1d({0, 1, 2}, {1, 1, 1}, {0, 1, 1}));
  const auto [b0, b1] = oracle::normal_equations_1d({0, 1, 2}, {0, 1, 1});
  CHECK(three.intercept == doctest::Approx(b0));
  CHECK(three.coefficients[0] == doctest::Approx(b1));
  CHECK(three.intercept == doctest::Approx(1.0 / 6.0));
  CHECK(three.coefficients[0] == doctest::Approx(0.5));
}

TEST_CASE("least squares ignores unobserved rows") {
  auto m = fit_mean_lsq(testing::dataset_1d({0, 1, 7}, {1, 1, 0}, {1, 3, 1000}));
  CHECK(m.intercept == doctest::Approx(1.0));
  CHECK(m.coefficients[0] == doctest::Approx(2.0));
}

TEST_CASE("least squares errors") {
  CHECK_THROWS_AS(fit_mean_lsq(testing::dataset_1d({0, 1}, {1, 0}, {1, 0})), std::invalid_argument);
  FeatureMatrix f(4, 2);
  f << 1, 2, 2, 4, 3, 6, 4, 8;
  MaskedDataset collinear(f, {1, 1, 1, 1}, {1, 2, 3, 5});
  try {
    fit_mean_lsq(collinear);
    FAIL("expected rank-deficiency error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("feature column") != std::string::npos);
  }
}

TEST_CASE("residuals are orthogonal to the design") {
  std::mt19937_64 gen(9);
  std::normal_distribution<double> z(0, 1);
  const int n = 200, d = 4;
  FeatureMatrix f(n, d);
  std::vector<std::uint8_t> mask(n);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) f(i, j) = 10 * z(gen) + j;
    mask[i] = z(gen) > -0.5;
    y[i] = 3 + f(i, 0) - 2 * f(i, 2) + 5 * z(gen);
  }
  MaskedDataset data(f, mask, y);
  auto m = fit_mean_lsq(data);
  CHECK(m.ridge_penalty == 0.0);
  std::vector<double> dots(d + 1, 0.0), scale(d + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double r = y[i] - m.predict(data.row(i));
    dots[0] += r;
    scale[0] += std::abs(r);
    for (int j = 0; j < d; ++j) {
      dots[j + 1] += r * f(i, j);
      scale[j + 1] += std::abs(r * f(i, j));
    }
  }
  for (int j = 0; j <= d; ++j) CHECK(std::abs(dots[j]) <= 1e-8 * scale[j]);
}

TEST_CASE("score examples and invariants") {
  auto zero = ScoreModel::residual(line(0, 0));
  const double x2[] = {2.0};
  CHECK(score(zero, x2, -3) == 3);
  auto model = ScoreModel::residual(line(1, 2));
  CHECK(score(model, x2, 4) == 1);
  CHECK(score(model, x2, 5) == 0);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int i = 0; i < 200; ++i) {
    const double x[] = {u(gen)};
    const double mu = model.mean().predict(x);
    const double y = u(gen);
    CHECK(score(model, x, y) >= 0.0);
    CHECK(score(model, x, y) == doctest::Approx(score(model, x, 2 * mu - y)));
  }
  const double xx[] = {1.0, 2.0};
  CHECK_THROWS_AS(score(model, xx, 1.0), std::invalid_argument);
}

TEST_CASE("intervals from thresholds") {
  auto model = ScoreModel::residual(line(5, 0));
  const double x[] = {0.0};
  auto i = interval_from_threshold(model, x, 2);
  CHECK(i.lower == 3);
  CHECK(i.upper == 7);
  auto whole = interval_from_threshold(model, x, kInf);
  CHECK(whole.lower == -kInf);
  CHECK(whole.upper == kInf);
  auto point = interval_from_threshold(model, x, 0);
  CHECK(point.lower == 5);
  CHECK(point.upper == 5);
  CHECK(interval_from_threshold(model, x, -1).empty());
  CHECK(interval_from_threshold(model, x, -kInf).empty());
  for (double t : {0.0, 0.25, 1.5, 1e6}) CHECK(interval_from_threshold(model, x, t).width() == 2 * t);

  auto custom = ScoreModel::custom([](std::span<const double>, double y) { return y * y; }, "square");
  CHECK(custom(x, 3) == 9);
  CHECK_THROWS_AS(interval_from_threshold(custom, x, 1), std::invalid_argument);
}

TEST_CASE("observed scores mark missing rows") {
  auto data = testing::dataset_1d({0, 1, 2}, {1, 0, 1}, {1, 9, -2});
  auto s = observed_scores(ScoreModel::residual(line(0, 0)), data);
  CHECK(s[0] == 1);
  CHECK(std::isnan(s[1]));
  CHECK(s[2] == 2);
}

TEST_CASE("mean model serialization round trip") {
  MeanModel m;
  m.intercept = 0.1;
  m.coefficients = Eigen::VectorXd(3);
  m.coefficients << 1.0 / 3.0, -2e-17, 12345.678;
  m.ridge_penalty = 1e-9;
  auto back = parse_mean_model(serialize(m));
  CHECK(back.intercept == m.intercept);
  CHECK(back.coefficients == m.coefficients);
  CHECK(back.ridge_penalty == m.ridge_penalty);
  CHECK_THROWS(parse_mean_model("kind=other\n"));
}

}
