#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "support.hpp"
#include "vaebo/datagen.hpp"
#include "vaebo/error.hpp"

using namespace vaebo;
using namespace vaebo::datagen;

namespace {

// Greedy centroid growth scanning every non-member node.
std::vector<int> compact_oracle(const geometry::MeshGraph& mesh, int seed, int target) {
  std::vector<int> set{seed};
  std::vector<bool> in(mesh.n_nodes(), false);
  in[seed] = true;
  while (static_cast<int>(set.size()) < target) {
    double cx = 0, cy = 0, cz = 0;
    for (int i : set) {
      cx += mesh.position(i)[0];
      cy += mesh.position(i)[1];
      cz += mesh.position(i)[2];
    }
    const double n = static_cast<double>(set.size());
    const geometry::Position c{cx / n, cy / n, cz / n};
    int best = -1;
    double best_d = 0;
    for (int i = 0; i < mesh.n_nodes(); ++i) {
      if (in[i]) continue;
      const double d = mesh.distance_to(i, c);
      if (best < 0 || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    set.push_back(best);
    in[best] = true;
  }
  return set;
}

std::vector<int> infarct_of(const Dataset& d, int row) {
  std::vector<int> out;
  for (int i = 0; i < d.n_nodes(); ++i)
    if (d.fields(row, i) == d.theta_infarct) out.push_back(i);
  return out;
}

}  // namespace

TEST_SUITE("datagen") {
  const auto grid = geometry::build_grid_mesh(16, 16);

  TEST_CASE("target counts") {
    CHECK(target_count(grid, 0.1) == 26);
    CHECK(target_count(grid, 0.02) == 5);
    CHECK_THROWS_AS(target_count(grid, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(target_count(grid, 0.999), std::invalid_argument);
  }

  TEST_CASE("single-node infarcts are the seed") {
    for (auto mode : {GrowthMode::random_growth, GrowthMode::compact_growth}) {
      InfarctSpec s{1.0 / 256, 77, mode, 3};
      CHECK(grow_infarct(grid, s) == std::vector<int>{77});
    }
  }

  TEST_CASE("random growth gives connected sets of the requested size") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      InfarctSpec s{0.02 + 0.38 * static_cast<double>(seed) / 99.0, std::nullopt, GrowthMode::random_growth, seed};
      const auto set = grow_random_infarct(grid, s);
      CHECK(static_cast<int>(set.size()) == target_count(grid, s.size_fraction));
      CHECK(std::set<int>(set.begin(), set.end()).size() == set.size());
      CHECK(testing_support::connected_within(grid, set));
      CHECK(is_connected_subset(grid, set));
    }
    InfarctSpec s{0.1, 40, GrowthMode::random_growth, 9};
    CHECK(grow_random_infarct(grid, s).size() == 26);
    CHECK(grow_random_infarct(grid, s) == grow_random_infarct(grid, s));
    CHECK(grow_random_infarct(grid, s).front() == 40);
  }

  TEST_CASE("compact growth around a centered seed matches the exhaustive oracle") {
    const int seed = 8 * 16 + 8;
    InfarctSpec s{9.0 / 256, seed, GrowthMode::compact_growth, 0};
    const auto set = grow_compact_infarct(grid, s);
    auto oracle = compact_oracle(grid, seed, 9);
    CHECK(set == oracle);
    int xmin = 16, xmax = -1, ymin = 16, ymax = -1;
    for (int i : set) {
      xmin = std::min(xmin, i % 16);
      xmax = std::max(xmax, i % 16);
      ymin = std::min(ymin, i / 16);
      ymax = std::max(ymax, i / 16);
    }
    CHECK(xmax - xmin == 2);
    CHECK(ymax - ymin == 2);
    CHECK(std::find(set.begin(), set.end(), seed) != set.end());
  }

  TEST_CASE("compact growth matches the oracle for many seeds and sizes") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 30; ++trial) {
      const int seed = static_cast<int>(rng() % 256);
      const int target = 2 + static_cast<int>(rng() % 60);
      InfarctSpec s{(target + 0.1) / 256.0, seed, GrowthMode::compact_growth, 0};
      CHECK(grow_compact_infarct(grid, s) == compact_oracle(grid, seed, target));
    }
  }

  TEST_CASE("compact sets have smaller perimeter than random ones") {
    double compact = 0, random = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const int node = static_cast<int>(rng() % 256);
      InfarctSpec c{0.15, node, GrowthMode::compact_growth, seed};
      InfarctSpec r{0.15, node, GrowthMode::random_growth, seed};
      compact += testing_support::perimeter(grid, grow_infarct(grid, c));
      random += testing_support::perimeter(grid, grow_infarct(grid, r));
    }
    CHECK(compact <= random);
  }

  TEST_CASE("smallest dataset") {
    DatasetConfig cfg;
    cfg.count = 1;
    cfg.size_min = cfg.size_max = 0.02;
    const auto d = make_dataset(grid, cfg);
    CHECK(d.size() == 1);
    CHECK(infarct_of(d, 0).size() == 5);
    CHECK((d.fields.array() == 0.15).count() == 251);
    CHECK(d.mesh_fingerprint == grid.fingerprint());
  }

  TEST_CASE("datasets satisfy their invariants and are reproducible") {
    DatasetConfig cfg;
    cfg.count = 400;
    cfg.rng_seed = 12;
    const auto a = make_dataset(grid, cfg);
    const auto b = make_dataset(grid, cfg);
    CHECK(check_dataset(a, grid).empty());
    CHECK(a.fields == b.fields);
    for (int r = 0; r < a.size(); ++r) CHECK(testing_support::connected_within(grid, infarct_of(a, r)));
    std::set<double> values(a.fields.data(), a.fields.data() + a.fields.size());
    CHECK(values == std::set<double>{0.15, 0.5});
    cfg.rng_seed = 13;
    CHECK(make_dataset(grid, cfg).fields != a.fields);
    cfg.size_min = 0.5;
    cfg.size_max = 0.4;
    CHECK_THROWS_AS(make_dataset(grid, cfg), std::invalid_argument);
  }

  TEST_CASE("a broken dataset is reported") {
    DatasetConfig cfg;
    cfg.count = 3;
    auto d = make_dataset(grid, cfg);
    d.fields(1, 0) = 0.3;
    CHECK_FALSE(check_dataset(d, grid).empty());
    d = make_dataset(grid, cfg);
    d.fields.row(2).setConstant(0.15);
    d.fields(2, 0) = 0.5;
    d.fields(2, 255) = 0.5;
    CHECK(check_dataset(d, grid).find("connected") != std::string::npos);
  }

  TEST_CASE("infarct sizes are uniform over the configured range") {
    DatasetConfig cfg;
    cfg.count = 10000;
    cfg.rng_seed = 4;
    const auto d = make_dataset(grid, cfg);
    std::vector<double> sizes;
    for (int r = 0; r < d.size(); ++r) sizes.push_back((d.fields.row(r).array() == 0.5).count() / 256.0);
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes.front() >= 0.02 - 0.5 / 256);
    CHECK(sizes.back() <= 0.40 + 0.5 / 256);
    // Kolmogorov-Smirnov against U(0.02, 0.40) on the rounded sizes.
    double ks = 0;
    const double n = static_cast<double>(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const double f = std::clamp((sizes[i] - 0.02) / 0.38, 0.0, 1.0);
      ks = std::max({ks, std::abs(f - i / n), std::abs((i + 1) / n - f)});
    }
    // Critical value at the 1% level plus the rounding width of one node.
    CHECK(ks < 1.63 / std::sqrt(n) + (1.0 / 256) / 0.38);
  }

  TEST_CASE("dataset file round trip") {
    DatasetConfig cfg;
    cfg.count = 20;
    const auto d = make_dataset(grid, cfg);
    const auto back = dataset_from_bytes(dataset_to_bytes(d));
    CHECK(back.fields == d.fields);
    CHECK(back.theta_healthy == 0.15);
    CHECK(back.theta_infarct == 0.5);
    auto bytes = dataset_to_bytes(d);
    bytes.pop_back();
    CHECK_THROWS_AS(dataset_from_bytes(bytes), CorruptFile);
    bytes = dataset_to_bytes(d);
    bytes[1] = 'x';
    CHECK_THROWS_AS(dataset_from_bytes(bytes), CorruptFile);
  }

  TEST_CASE("connectivity check agrees with BFS on random subsets") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<int> nodes;
      const int k = 1 + static_cast<int>(rng() % 12);
      const int base = static_cast<int>(rng() % 200);
      for (int j = 0; j < k; ++j) nodes.push_back((base + static_cast<int>(rng() % 40)) % 256);
      std::sort(nodes.begin(), nodes.end());
      nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
      CHECK(is_connected_subset(grid, nodes) == testing_support::connected_within(grid, nodes));
    }
  }
}
