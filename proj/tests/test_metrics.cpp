#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "vaebo/metrics.hpp"
#include "vaebo/span.hpp"

using namespace vaebo;
using namespace vaebo::metrics;

namespace {

// Every interior bin edge tried directly on the raw values; two-pass variances.
double otsu_brute_force(const std::vector<double>& v, int n_bins) {
  const double lo = *std::min_element(v.begin(), v.end());
  const double hi = *std::max_element(v.begin(), v.end());
  const double w = (hi - lo) / n_bins;
  double best = 0;
  int best_k = -1;
  for (int k = 1; k < n_bins; ++k) {
    std::vector<double> a, b;
    for (double x : v) (static_cast<int>((x - lo) / w) < k ? a : b).push_back(x);
    if (a.empty() || b.empty()) continue;
    auto ss = [](const std::vector<double>& s) {
      const double m = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
      double q = 0;
      for (double x : s) q += (x - m) * (x - m);
      return q;
    };
    const double within = ss(a) + ss(b);
    if (best_k < 0 || within < best - 1e-9 * std::max(1.0, best)) {
      best = within;
      best_k = k;
    }
  }
  return lo + best_k * w;
}

std::vector<double> bimodal(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> lo(0.2, 0.05), hi(0.45, 0.05);
  std::bernoulli_distribution pick(0.3);
  std::vector<double> v(n);
  for (auto& x : v) x = pick(rng) ? hi(rng) : lo(rng);
  return v;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("rmse") {
    const std::vector<double> a{0.15, 0.5, 0.15}, c(3, 0.15), e(3, 0.5);
    CHECK(rmse(a, a) == 0.0);
    CHECK(rmse(c, e) == doctest::Approx(0.35).epsilon(1e-14));
    CHECK_THROWS_AS(rmse(a, std::vector<double>{0.1, 0.2}), std::invalid_argument);
  }

  TEST_CASE("rmse is permutation invariant and satisfies the triangle inequality") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(50), b(50), c(50);
      for (int i = 0; i < 50; ++i) {
        a[i] = u(rng);
        b[i] = u(rng);
        c[i] = u(rng);
      }
      CHECK(rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-15);
      std::vector<int> perm(50);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> pa(50), pb(50);
      for (int i = 0; i < 50; ++i) {
        pa[i] = a[perm[i]];
        pb[i] = b[perm[i]];
      }
      CHECK(rmse(pa, pb) == doctest::Approx(rmse(a, b)).epsilon(1e-12));
    }
  }

  TEST_CASE("otsu on a two-level field separates the levels") {
    const std::vector<double> f{0.1, 0.9, 0.1, 0.9, 0.1};
    const double t = otsu_threshold(f);
    CHECK(t > 0.1);
    CHECK(t < 0.9);
    CHECK(above(f, t) == std::vector<int>{1, 3});
    CHECK(t == otsu_brute_force(f, kDefaultBins));
    const std::vector<double> g{0.15, 0.5, 0.5, 0.15};
    CHECK(above(g, otsu_threshold(g)) == std::vector<int>{1, 2});
  }

  TEST_CASE("otsu equals the brute-force minimiser on random bimodal fields") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      auto v = bimodal(rng, 256);
      const int bins = trial % 2 ? 64 : 16;
      const double t = otsu_threshold(v, bins);
      CHECK(t == doctest::Approx(otsu_brute_force(v, bins)).epsilon(1e-12));
      const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
      CHECK(t >= lo);
      CHECK(t <= hi);
      std::shuffle(v.begin(), v.end(), rng);
      CHECK(otsu_threshold(v, bins) == t);
    }
  }

  TEST_CASE("constant field has no threshold") {
    CHECK_THROWS_AS(otsu_threshold(std::vector<double>(10, 0.3)), NoThreshold);
  }

  TEST_CASE("dice") {
    CHECK(dice({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(dice({1, 2}, {3, 4}) == 0.0);
    CHECK(dice({1, 2, 3}, {2, 3, 4}) == doctest::Approx(2.0 / 3.0));
    CHECK(dice({}, {1}) == 0.0);
    CHECK_THROWS_AS(dice({}, {}), std::invalid_argument);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<int> a, b;
      for (int i = 0; i < 30; ++i) {
        if (rng() % 2) a.push_back(i);
        if (rng() % 3 == 0) b.push_back(i);
      }
      if (a.empty() && b.empty()) continue;
      const double d = dice(a, b);
      CHECK(d == dice(b, a));
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
  }

  TEST_CASE("evaluate") {
    std::vector<double> truth(20, 0.15);
    for (int i = 5; i < 9; ++i) truth[i] = 0.5;
    const auto self = evaluate(truth, truth);
    CHECK(self.rmse == 0.0);
    CHECK(self.dice == 1.0);
    CHECK(self.true_set_size == 4);
    CHECK(self.est_set_size == 4);

    std::vector<double> est(20, 0.2);
    est[5] = est[6] = est[12] = 0.45;
    const auto r = evaluate(truth, est);
    CHECK(r.est_set_size == static_cast<int>(above(est, r.threshold).size()));
    CHECK(r.dice == doctest::Approx(2.0 * 2 / (4 + 3)));
    CHECK(r.rmse == doctest::Approx(rmse(truth, est)));

    try {
      evaluate(truth, std::vector<double>(20, 0.3));
      FAIL("expected EvaluationError");
    } catch (const EvaluationError& e) {
      CHECK(e.partial().rmse == doctest::Approx(rmse(truth, std::vector<double>(20, 0.3))));
    }
    CHECK(report_to_json(r).find("above_threshold") != std::string::npos);
    const std::string header = report_csv_header(), row = report_csv_row(r);
    CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  }
}
