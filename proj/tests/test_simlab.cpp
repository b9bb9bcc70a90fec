#include <doctest.h>

#include <cstdlib>

#include "helpers.hpp"
#include "procp/simlab.hpp"

using namespace procp;

namespace {

StudyConfig small_study(Method method, std::size_t trials, std::uint64_t seed) {
  StudyConfig c;
  c.method.method = method;
  c.method.level = {0.2, 0.1, 0.1};
  c.n_trials = trials;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_SUITE("simlab") {

TEST_CASE("rng streams") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.bits() == b.bits());
  CHECK(substream_seed(1, 2) == substream_seed(1, 2));
  CHECK(substream_seed(1, 2) != substream_seed(1, 3));
  CHECK(substream_seed(1, 2) != substream_seed(2, 2));
  Rng r(9);
  double sum = 0, sum_sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = r.normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[r.below(7)]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  std::vector<int> perm{0, 1, 2, 3, 4, 5};
  r.shuffle(perm);
  std::sort(perm.begin(), perm.end());
  CHECK(perm == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("setting propensities") {
  const auto s1 = DgpSpec::setting1();
  const double x0[] = {0.0}, x10[] = {10.0};
  CHECK(true_propensity(s1, x0) == doctest::Approx(0.9));
  CHECK(true_propensity(s1, x10) == doctest::Approx(0.7));
  const auto s2 = DgpSpec::setting2();
  for (int j = 0; j <= 10000; ++j) {
    const double x[] = {j * 1e-3};
    const double p1 = true_propensity(s1, x), p2 = true_propensity(s2, x);
    CHECK(p1 >= 0.7 - 1e-12);
    CHECK(p1 <= 0.9 + 1e-12);
    CHECK(p2 > 0.58);
    CHECK(p2 < 1.0);
  }
  CHECK(parse_dgp_kind("1") == DgpKind::Setting1);
  CHECK(parse_dgp_kind("setting2") == DgpKind::Setting2);
  CHECK(parse_dgp_kind("highdim") == DgpKind::HighDim);
  CHECK_THROWS(parse_dgp_kind("4"));
}

TEST_CASE("generate is reproducible and well formed") {
  const auto spec = DgpSpec::setting1(300, 17);
  const auto a = generate(spec), b = generate(spec);
  CHECK(a.outcomes == b.outcomes);
  CHECK(a.data.mask() == b.data.mask());
  CHECK(a.data.features() == b.data.features());
  CHECK(a.propensities == b.propensities);
  const auto c = generate(DgpSpec::setting1(300, 18));
  CHECK(a.outcomes != c.outcomes);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double x = a.data.features()(static_cast<Eigen::Index>(i), 0);
    CHECK(x >= 0.0);
    CHECK(x <= 10.0);
    CHECK(a.propensities[i] == doctest::Approx(0.9 - 0.02 * x));
    if (a.data.observed(i)) CHECK(a.data.outcome(i) == a.outcomes[i]);
  }
}

TEST_CASE("high-dimensional design") {
  const auto spec = DgpSpec::highdim(100000, 3, 4);
  CHECK(spec.dim == 30);
  const auto sim = generate(spec);
  CHECK(sim.data.dim() == 30);
  const double missing = static_cast<double>(sim.data.n_missing()) / static_cast<double>(sim.data.size());
  CHECK(missing == doctest::Approx(0.23).epsilon(0.02 / 0.23));
}

TEST_CASE("custom designs") {
  DgpSpec spec;
  spec.kind = DgpKind::Custom;
  spec.n = 50;
  spec.sample_features = [](Rng& r) { return std::vector<double>{r.uniform()}; };
  spec.propensity = [](std::span<const double> x) { return 0.5 + x[0]; };
  spec.sample_outcome = [](std::span<const double> x, Rng& r) { return x[0] + r.normal(); };
  CHECK_THROWS(generate(spec));
  spec.propensity = [](std::span<const double>) { return 0.5; };
  CHECK_NOTHROW(generate(spec));
  spec.sample_outcome = nullptr;
  CHECK_THROWS(conditional_coverage_study(spec, small_study(Method::ProCp, 1, 1), 1, 1, 1));
}

TEST_CASE("evaluate") {
  MeanModel mean;
  mean.coefficients = Eigen::VectorXd::Zero(1);
  const auto model = ScoreModel::residual(mean);
  auto cal = testing::dataset_1d({0, 1, 2, 3, 4}, {1, 0, 0, 1, 0}, {0, 0, 0, 0, 0});
  const std::vector<double> truth{0, 1.0, -3.0, 0, 0.5};

  PredictionRule inf;
  inf.thresholds = {{1, kInf}, {2, kInf}, {4, kInf}};
  auto m = evaluate(inf, cal, truth, model);
  CHECK(m.coverage_proportion == 1.0);
  CHECK(m.median_width == kInf);
  CHECK(m.infinite_width_count == 3);

  PredictionRule hand;
  hand.thresholds = {{1, 1.0}, {2, 2.0}, {4, 0.4}};
  auto h = evaluate(hand, cal, truth, model);
  CHECK(h.n_covered == 1);
  CHECK(h.coverage_proportion == doctest::Approx(1.0 / 3.0));
  CHECK(h.median_width == 2.0);
  CHECK_FALSE(h.meets(0.2));
  CHECK(h.meets(0.7));

  auto full = testing::dataset_1d({0, 1}, {1, 1}, {0, 0});
  auto none = evaluate(PredictionRule{}, full, std::vector<double>{0, 0}, model);
  CHECK(none.coverage_proportion == 1.0);
  CHECK(none.meets(0.01));
  CHECK_THROWS(evaluate(hand, full, std::vector<double>{0, 0}, model));

  CHECK(median_of({3, 1, 2}) == 2);
  CHECK(median_of({4, 1, 2, 3}) == 2.5);
  CHECK(median_of({1, kInf}) == kInf);
  CHECK(std::isnan(median_of({})));
}

TEST_CASE("studies are deterministic and order independent") {
  const auto spec = DgpSpec::setting1(500, 1);
  auto config = small_study(Method::ProCp, 24, 7);
  config.threads = 1;
  const auto serial = run_study(spec, config);
  config.threads = 4;
  const auto parallel = run_study(spec, config);
  CHECK(serial.to_record().str() == parallel.to_record().str());
  REQUIRE(serial.trials.size() == 24);

  // Aggregates do not depend on trial order.
  std::vector<double> cov, rev;
  for (const auto& t : serial.trials) cov.push_back(t.coverage_proportion);
  rev.assign(cov.rbegin(), cov.rend());
  const auto a = mean_and_se(cov), b = mean_and_se(rev);
  CHECK(a.mean == doctest::Approx(serial.coverage.mean).epsilon(1e-14));
  CHECK(b.mean == doctest::Approx(a.mean).epsilon(1e-14));
  CHECK(b.se == doctest::Approx(a.se).epsilon(1e-12));

  auto one = small_study(Method::ProCp2, 1, 3);
  CHECK(run_study(spec, one).to_record().str() == run_study(spec, one).to_record().str());
  auto other = small_study(Method::ProCp2, 1, 4);
  CHECK(run_study(spec, one).to_record().str() != run_study(spec, other).to_record().str());
}

TEST_CASE("worker count honors the environment cap") {
  CHECK(worker_count(3) == 3);
#if defined(__unix__)
  setenv("PROCP_THREADS", "2", 1);
  CHECK(worker_count(8) == 2);
  unsetenv("PROCP_THREADS");
#endif
}

TEST_CASE("weighted conformal is marginally valid under the known propensity") {
  auto config = small_study(Method::Weighted, 400, 11);
  const auto s = run_study(DgpSpec::setting1(500, 1), config);
  CHECK(std::abs(s.coverage.mean - 0.8) <= 3 * s.coverage.se);
}

TEST_CASE("conditional study with a single inner draw") {
  auto config = small_study(Method::ProCp, 1, 2);
  const auto trials = conditional_coverage_study(DgpSpec::setting1(200, 1), config, 5, 1, 13);
  REQUIRE(trials.size() == 5);
  for (const auto& t : trials) {
    CHECK(t.features_resampled);
    const double scaled = t.coverage * static_cast<double>(t.n_missing);
    CHECK(scaled == doctest::Approx(std::round(scaled)));
  }
  const auto s2 = conditional_coverage_study(DgpSpec::setting2(200, 1), config, 2, 3, 13);
  CHECK_FALSE(s2.front().features_resampled);
}

TEST_CASE("histograms") {
  const std::vector<double> v{0.0, 0.5, 1.0, kInf, 0.25};
  const auto h = histogram(v, 4);
  CHECK(h.infinite == 1);
  CHECK(h.counts == std::vector<std::size_t>{1, 1, 1, 1});
  const auto csv = histogram_csv(h, "width");
  CHECK(csv.rfind("quantity,lower,upper,count\n", 0) == 0);
  CHECK(csv.find("width,inf,inf,1") != std::string::npos);
  CHECK_THROWS(histogram(v, 0));
}

}
