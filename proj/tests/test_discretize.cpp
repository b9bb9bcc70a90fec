#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "procp/discretize.hpp"

using namespace procp;

TEST_SUITE("discretize") {

TEST_CASE("odds bin examples") {
  for (double eps : {0.01, 0.1, 0.5, 2.0}) CHECK(odds_bin(0.5, eps) == 0);
  CHECK(odds_bin(0.6, 0.1) == 4);
  CHECK(odds_bin(1.0 / 2.1, 0.1) == -1);
  CHECK_THROWS_AS(odds_bin(0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(odds_bin(0.5, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(odds_bin(0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(odds_bin(1.0, 0.1), std::invalid_argument);
}

TEST_CASE("odds bins honor the half-open bracket") {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(1e-3, 1 - 1e-3);
  for (double eps : {0.05, 0.1, 0.3}) {
    for (int i = 0; i < 5000; ++i) {
      const double p = u(gen);
      const auto k = odds_bin(p, eps);
      const auto [lo, hi] = bin_propensity_range(k, eps);
      CHECK(lo <= p * (1 + 1e-12));
      CHECK(p < hi * (1 + 1e-12));
    }
    // Exact grid points land at the left edge of their bin.
    for (int k = -20; k <= 20; ++k) {
      const double odds = std::pow(1.0 + eps, k);
      CHECK(odds_bin(odds / (1.0 + odds), eps) == k);
    }
  }
}

TEST_CASE("odds bins are monotone and tight") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(1e-3, 1 - 1e-3);
  const double eps = 0.1;
  std::vector<double> p(2000);
  for (auto& v : p) v = u(gen);
  std::sort(p.begin(), p.end());
  const auto bins = assign_bins(p, eps);
  CHECK(bins.epsilon == eps);
  for (std::size_t i = 1; i < p.size(); ++i) CHECK(bins.bin_index[i - 1] <= bins.bin_index[i]);
  std::map<BinId, std::pair<double, double>> odds_range;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double o = p[i] / (1 - p[i]);
    auto [it, fresh] = odds_range.try_emplace(bins.bin_index[i], o, o);
    it->second.first = std::min(it->second.first, o);
    it->second.second = std::max(it->second.second, o);
  }
  for (const auto& [k, r] : odds_range) CHECK(r.second / r.first <= 1 + eps + 1e-12);
  CHECK_THROWS_AS(assign_bins(p, 0.0), std::invalid_argument);
}

TEST_CASE("bin stats examples") {
  BinAssignment one{0.1, {3, 3, 3}};
  const std::vector<std::uint8_t> all{1, 1, 1};
  auto s = bin_stats(one, all);
  CHECK(s.occupied() == 1);
  CHECK(s.n_missing == 0);

  BinAssignment two{0.1, {0, 0, 1}};
  const std::vector<std::uint8_t> mask{1, 0, 0};
  auto t = bin_stats(two, mask);
  CHECK(t.bins.at(0).total == 2);
  CHECK(t.bins.at(0).observed == 1);
  CHECK(t.bins.at(0).missing == 1);
  CHECK(t.bins.at(1).total == 1);
  CHECK(t.bins.at(1).missing == 1);
  CHECK(t.n_missing == 2);
  CHECK_THROWS(bin_stats(two, std::vector<std::uint8_t>{1, 0}));
}

TEST_CASE("bin stats match a recount") {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> p(1000);
  std::vector<std::uint8_t> mask(1000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = u(gen);
    mask[i] = u(gen) < p[i];
  }
  const auto bins = assign_bins(p, 0.1);
  const auto s = bin_stats(bins, mask);
  std::map<BinId, std::array<std::size_t, 2>> recount;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double odds = p[i] / (1 - p[i]);
    const auto k = static_cast<BinId>(std::floor(std::log(odds) / std::log(1.1)));
    recount[k][mask[i]]++;
  }
  REQUIRE(recount.size() == s.occupied());
  std::size_t total = 0, missing = 0;
  for (const auto& [k, c] : recount) {
    CHECK(s.bins.at(k).missing == c[0]);
    CHECK(s.bins.at(k).observed == c[1]);
    CHECK(s.bins.at(k).total == c[0] + c[1]);
    total += s.bins.at(k).total;
    missing += s.bins.at(k).missing;
  }
  CHECK(total == 1000);
  CHECK(missing == s.n_missing);
  CHECK(s.n_missing + s.n_observed == s.n);
}

TEST_CASE("discrete feature bins") {
  auto same = testing::dataset_1d({2, 2, 2}, {1, 0, 1});
  const auto a = discrete_feature_bins(same);
  CHECK(a.bin_index == std::vector<BinId>{0, 0, 0});
  CHECK(a.epsilon == 0.0);

  auto aba = testing::dataset_1d({5, -1, 5}, {1, 1, 0});
  CHECK(discrete_feature_bins(aba).bin_index == std::vector<BinId>{0, 1, 0});

  auto signed_zero = testing::dataset_1d({0.0, -0.0}, {1, 0});
  CHECK(discrete_feature_bins(signed_zero).bin_index == std::vector<BinId>{0, 0});

  std::mt19937_64 gen(12);
  std::uniform_int_distribution<int> v(0, 6);
  FeatureMatrix f(500, 2);
  std::vector<std::uint8_t> mask(500);
  for (int i = 0; i < 500; ++i) {
    const int c = v(gen);
    f(i, 0) = c * 0.1;
    f(i, 1) = c % 2;
    mask[i] = i % 3 != 0;
  }
  MaskedDataset data(f, mask, std::vector<double>(500, 0.0));
  const auto bins = discrete_feature_bins(data);
  const auto stats = bin_stats(bins, mask);
  CHECK(stats.occupied() == 7);
  std::map<std::pair<double, double>, std::size_t> groups;
  for (int i = 0; i < 500; ++i) groups[{f(i, 0), f(i, 1)}]++;
  std::map<std::pair<double, double>, BinId> id_of;
  for (int i = 0; i < 500; ++i) {
    auto [it, fresh] = id_of.try_emplace({f(i, 0), f(i, 1)}, bins.bin_index[i]);
    CHECK(it->second == bins.bin_index[i]);
  }
  for (const auto& [key, count] : groups) CHECK(stats.bins.at(id_of.at(key)).total == count);
}

}
