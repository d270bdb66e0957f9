#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "support.hpp"
#include "vaebo/error.hpp"
#include "vaebo/geometry.hpp"

using namespace vaebo;
using namespace vaebo::geometry;

TEST_SUITE("geometry") {
  TEST_CASE("smallest grid") {
    const auto m = build_grid_mesh(2, 2);
    CHECK(m.n_nodes() == 4);
    CHECK(m.edges().size() == 4);
    CHECK(m.n_segments() == 1);
  }

  TEST_CASE("16x16 grid edge count matches pairwise enumeration") {
    const auto m = build_grid_mesh(16, 16);
    int unit_pairs = 0;
    for (int a = 0; a < m.n_nodes(); ++a)
      for (int b = a + 1; b < m.n_nodes(); ++b)
        if (std::abs(m.distance(a, b) - 1.0) < 1e-12) ++unit_pairs;
    CHECK(m.n_nodes() == 256);
    CHECK(m.edges().size() == static_cast<std::size_t>(unit_pairs));
    CHECK(unit_pairs == 480);
  }

  TEST_CASE("degenerate grids rejected") {
    CHECK_THROWS_AS(build_grid_mesh(1, 5), std::invalid_argument);
    CHECK_THROWS_AS(build_grid_mesh(5, 0), std::invalid_argument);
  }

  TEST_CASE("nearest neighbours on 3x3") {
    const auto m = build_grid_mesh(3, 3);
    CHECK(k_nearest_neighbors(m, 0, 2) == std::vector<int>{1, 3});
    CHECK(k_nearest_neighbors(m, 4, 4) == std::vector<int>{1, 3, 5, 7});
    CHECK_THROWS_AS(k_nearest_neighbors(m, 0, 9), std::invalid_argument);
    CHECK_THROWS_AS(k_nearest_neighbors(m, 9, 1), std::invalid_argument);
    CHECK_THROWS_AS(k_nearest_neighbors(m, 0, 0), std::invalid_argument);
  }

  TEST_CASE("nearest neighbours agree with a full sort on random clouds") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = testing_support::random_mesh(rng, 40, 20);
      const int node = static_cast<int>(rng() % 40);
      const int k = 1 + static_cast<int>(rng() % 38);
      std::vector<int> all;
      for (int i = 0; i < 40; ++i)
        if (i != node) all.push_back(i);
      std::sort(all.begin(), all.end(), [&](int a, int b) {
        const double da = m.distance(node, a), db = m.distance(node, b);
        return da != db ? da < db : a < b;
      });
      all.resize(k);
      const auto got = k_nearest_neighbors(m, node, k);
      CHECK(got == all);
      CHECK(k_nearest_neighbors(m, node, k) == got);
    }
  }

  TEST_CASE("two-node diffusion operator") {
    const MeshGraph m({{0, 0, 0}, {1, 0, 0}}, 2, {{0, 1}});
    const Eigen::MatrixXd l = build_diffusion(m, 1.0).matrix();
    Eigen::MatrixXd expect(2, 2);
    expect << -1, 1, 1, -1;
    CHECK((l - expect).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(build_diffusion(m, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(build_diffusion(m, -1.0), std::invalid_argument);
  }

  TEST_CASE("diffusion operator is symmetric with zero row sums on random meshes") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto m = testing_support::random_mesh(rng, 30, 25);
      const double d = 0.1 + 2.0 * std::uniform_real_distribution<double>()(rng);
      const Eigen::MatrixXd l = build_diffusion(m, d).matrix();
      CHECK((l - l.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(l.rowwise().sum().cwiseAbs().maxCoeff() < 1e-12);
      for (int i = 0; i < l.rows(); ++i)
        for (int j = 0; j < l.cols(); ++j)
          if (i != j) CHECK(l(i, j) >= 0.0);
    }
  }

  TEST_CASE("constant field is in the null space") {
    const auto op = build_diffusion(build_grid_mesh(16, 16), 0.1);
    const Eigen::VectorXd out = op.apply(Eigen::VectorXd::Constant(256, 0.37));
    CHECK(out.cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("block partition") {
    const auto g = build_grid_mesh(16, 16);
    const auto p4 = partition_segments(g, 4);
    CHECK(p4.n_segments() == 16);
    for (const auto& members : p4.segment_members()) CHECK(members.size() == 16);
    for (int i = 0; i < 256; ++i) CHECK(p4.segment_of()[i] == (i / 16 / 4) * 4 + (i % 16) / 4);
    const auto p1 = partition_segments(g, 1);
    CHECK(p1.n_segments() == 1);
    CHECK(p1.segment_members()[0].size() == 256);
    CHECK_THROWS_AS(partition_segments(g, 3), std::invalid_argument);
    CHECK(p4.fingerprint() == g.fingerprint());
  }

  TEST_CASE("invalid graphs rejected") {
    const std::vector<Position> p{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    CHECK_THROWS_AS(MeshGraph(p, 2, {{0, 1}, {1, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(MeshGraph(p, 2, {{0, 1}, {1, 0}, {1, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(MeshGraph(p, 2, {{0, 1}}), std::invalid_argument);
    CHECK_THROWS_AS(MeshGraph(p, 2, {{0, 1}, {1, 3}}), std::invalid_argument);
    CHECK_THROWS_AS(MeshGraph(p, 2, {{0, 1}, {1, 2}}, {0, 2, 2}), std::invalid_argument);
    CHECK_NOTHROW(MeshGraph(p, 2, {{0, 1}, {1, 2}}, {0, 1, 1}));
  }

  TEST_CASE("mesh file round trip") {
    const auto m = partition_segments(build_grid_mesh(8, 4), 2);
    const auto back = mesh_from_json_text(mesh_to_json_text(m));
    CHECK(back.positions() == m.positions());
    CHECK(back.edges() == m.edges());
    CHECK(back.segment_of() == m.segment_of());
    CHECK(back.fingerprint() == m.fingerprint());
    CHECK(back.grid().has_value());
  }

  TEST_CASE("malformed mesh file names the line") {
    const std::string text = "{\n \"nodes\": [[0, 0], [1, 0]],\n \"edges\": [[0, 1]],,\n}\n";
    try {
      mesh_from_json_text(text);
      FAIL("expected CorruptFile");
    } catch (const CorruptFile& e) {
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(mesh_from_json_text("{\"nodes\": [[0, 0], [1, 0]], \"edges\": [[0, 5]]}"), CorruptFile);
  }

  TEST_CASE("fingerprint separates different meshes") {
    CHECK(build_grid_mesh(4, 4).fingerprint() != build_grid_mesh(4, 5).fingerprint());
    CHECK(build_grid_mesh(4, 4).fingerprint() == build_grid_mesh(4, 4).fingerprint());
  }
}
