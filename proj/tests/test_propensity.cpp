#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "oracles.hpp"
#include "procp/propensity.hpp"

using namespace procp;

namespace {

struct LogisticSample {
  std::vector<double> x, a;
  MaskedDataset data;
};

LogisticSample logistic_sample(std::size_t n, double b0, double b1, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> ux(0, 10), u(0, 1);
  std::vector<double> x(n), a(n);
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = ux(gen);
    mask[i] = u(gen) < oracle::logistic(b0 + b1 * x[i]);
    a[i] = mask[i];
  }
  return {x, a, testing::dataset_1d(x, mask)};
}

}  // namespace

TEST_SUITE("propensity") {

TEST_CASE("logistic on balanced independent labels") {
  std::vector<double> x;
  std::vector<std::uint8_t> mask;
  for (int v = 0; v < 10; ++v)
    for (int a = 0; a < 2; ++a) {
      x.push_back(v);
      mask.push_back(static_cast<std::uint8_t>(a));
    }
  auto m = fit_logistic(testing::dataset_1d(x, mask));
  CHECK(m.converged());
  CHECK(m.intercept() == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  CHECK(m.coefficients()[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
}

TEST_CASE("logistic rejects a single class and separation") {
  CHECK_THROWS_AS(fit_logistic(testing::dataset_1d({0, 1, 2}, {1, 1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(fit_logistic(testing::dataset_1d({0, 1, 2, 3}, {0, 0, 1, 1})), std::runtime_error);
}

TEST_CASE("logistic recovers parameters and matches a Newton oracle") {
  const double b0 = 1.2, b1 = 0.2;
  auto s = logistic_sample(100000, b0, b1, 17);
  auto m = fit_logistic(s.data);
  const auto [o0, o1] = oracle::newton_logistic(s.x, s.a);
  CHECK(m.intercept() == doctest::Approx(o0).epsilon(1e-6));
  CHECK(m.coefficients()[0] == doctest::Approx(o1).epsilon(1e-6));

  // Standard errors from the inverse Fisher information at the estimate.
  double h00 = 0, h01 = 0, h11 = 0;
  for (double x : s.x) {
    const double p = oracle::logistic(o0 + o1 * x), w = p * (1 - p);
    h00 += w;
    h01 += w * x;
    h11 += w * x * x;
  }
  const double det = h00 * h11 - h01 * h01;
  const double se0 = std::sqrt(h11 / det), se1 = std::sqrt(h00 / det);
  CHECK(std::abs(m.intercept() - b0) <= 3 * se0);
  CHECK(std::abs(m.coefficients()[0] - b1) <= 3 * se1);
}

TEST_CASE("logistic predictions are invariant to affine feature changes") {
  auto s = logistic_sample(2000, -0.5, 0.3, 23);
  auto base = fit_logistic(s.data);
  std::vector<double> shifted(s.x.size());
  for (std::size_t i = 0; i < s.x.size(); ++i) shifted[i] = 4.0 * s.x[i] - 7.0;
  auto moved = fit_logistic(testing::dataset_1d(shifted, s.data.mask()));
  CHECK(moved.coefficients()[0] == doctest::Approx(base.coefficients()[0] / 4.0).epsilon(1e-6));
  for (std::size_t i = 0; i < s.x.size(); i += 97) {
    const double xa[] = {s.x[i]}, xb[] = {shifted[i]};
    CHECK(std::abs(base(xa) - moved(xb)) <= 1e-6);
  }
}

TEST_CASE("evaluations stay inside the clamp") {
  auto m = PropensityModel::logistic(50.0, Eigen::VectorXd::Constant(1, 10.0));
  const double hi[] = {100.0}, lo[] = {-100.0};
  CHECK(m(hi) == 1.0 - PropensityModel::kDefaultClamp);
  CHECK(m(lo) == PropensityModel::kDefaultClamp);
  auto known = PropensityModel::known([](std::span<const double>) { return 0.0; }, "zero", 0.01);
  CHECK(known(lo) == 0.01);
}

TEST_CASE("kernel examples") {
  FeatureMatrix two(2, 1);
  two << 0, 1;
  auto k = PropensityModel::kernel(two, {1.0, 0.0}, 0.5);
  const double x0[] = {0.0};
  CHECK(k(x0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));

  FeatureMatrix one(1, 1);
  one << 3.0;
  auto single = PropensityModel::kernel(one, {1.0}, 0.7);
  const double x3[] = {3.0};
  CHECK(single(x3) == 1.0 - PropensityModel::kDefaultClamp);

  auto all_observed = testing::dataset_1d({0, 1, 2, 3, 4, 5}, {1, 1, 1, 1, 1, 1});
  const auto grid = default_bandwidth_grid(all_observed);
  auto constant = fit_kernel(all_observed, grid);
  for (double x : {-5.0, 0.5, 2.0, 40.0}) {
    const double q[] = {x};
    CHECK(constant(q) == 1.0 - PropensityModel::kDefaultClamp);
  }
  CHECK_THROWS(fit_kernel(all_observed, std::vector<double>{}));
  CHECK_THROWS(fit_kernel(all_observed, std::vector<double>{0.0}));
}

TEST_CASE("kernel at a training point approaches its mask as the bandwidth vanishes") {
  std::vector<double> x{0.0, 0.7, 1.9, 3.3, 4.1};
  std::vector<std::uint8_t> mask{1, 0, 0, 1, 0};
  auto data = testing::dataset_1d(x, mask);
  auto k = PropensityModel::kernel(data.features(), {1, 0, 0, 1, 0}, 1e-6 * 1.6);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q[] = {x[i]};
    CHECK(k(q) == (mask[i] ? 1.0 - k.clamp() : k.clamp()));
  }
  CHECK(k.fallback_count() == 0);
  const double far[] = {2.6};
  CHECK(k(far) == doctest::Approx(0.4));
  CHECK(k.fallback_count() == 1);
}

TEST_CASE("bandwidth grid and validation choice") {
  auto s = logistic_sample(400, 2.0, -0.5, 3);
  const auto grid = default_bandwidth_grid(s.data);
  REQUIRE(grid.size() == 20);
  for (std::size_t g = 1; g < grid.size(); ++g) CHECK(grid[g] > grid[g - 1]);
  CHECK(grid.back() / grid.front() == doctest::Approx(100.0));
  auto k = fit_kernel(s.data, grid);
  CHECK(std::find(grid.begin(), grid.end(), k.bandwidth()) != grid.end());
  CHECK(k.kind() == PropensityKind::Kernel);
}

TEST_CASE("odds diagnostic examples") {
  const std::vector<double> p{0.2, 0.5, 0.9};
  auto same = odds_diagnostic(p, p);
  CHECK(same.max_abs_log_f == 0.0);
  CHECK(same.delta_hat == 0.0);

  const std::vector<double> t{0.5}, e{0.6};
  auto one = odds_diagnostic(t, e);
  CHECK(one.max_abs_log_f == doctest::Approx(std::log(1.5)));
  CHECK(one.delta_hat == std::exp(2.0 * one.max_abs_log_f) - 1.0);

  // A point whose odds ratio is e^0.1 gives the closed-form slack.
  const double q = 1.0 / (1.0 + std::exp(-0.1));
  auto tenth = odds_diagnostic(std::vector<double>{0.5, 0.5}, std::vector<double>{q, 0.5});
  CHECK(tenth.max_abs_log_f == doctest::Approx(0.1));
  CHECK(tenth.delta_hat == doctest::Approx(0.2214).epsilon(1e-4));

  CHECK_THROWS(odds_diagnostic(std::vector<double>{}, std::vector<double>{}));
  CHECK_THROWS(odds_diagnostic(std::vector<double>{1.0}, std::vector<double>{0.5}));

  auto truth = PropensityModel::logistic(0.0, Eigen::VectorXd::Constant(1, 1.0));
  auto est = PropensityModel::logistic(0.1, Eigen::VectorXd::Constant(1, 1.0));
  FeatureMatrix pts(3, 1);
  pts << -1, 0, 1;
  auto d = odds_diagnostic(truth, est, pts);
  CHECK(d.max_abs_log_f == doctest::Approx(0.1));
}

TEST_CASE("propensity model serialization") {
  auto lg = PropensityModel::logistic(0.3, Eigen::VectorXd::Constant(2, -1.0 / 3.0), 0.01);
  auto back = parse_propensity_model(serialize(lg));
  const double x[] = {0.4, 1.7};
  CHECK(back(x) == lg(x));
  CHECK(back.clamp() == 0.01);

  FeatureMatrix f(3, 1);
  f << 0, 1, 2;
  auto k = PropensityModel::kernel(f, {1, 0, 1}, 0.37);
  auto kb = parse_propensity_model(serialize(k));
  const double q[] = {0.8};
  CHECK(kb(q) == k(q));
  CHECK(kb.bandwidth() == 0.37);

  auto known = PropensityModel::known([](std::span<const double>) { return 0.5; }, "half");
  CHECK_THROWS(serialize(known));
}

}
