// Shared generators and independent reference implementations for the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "vaebo/geometry.hpp"

namespace testing_support {

using vaebo::geometry::Edge;
using vaebo::geometry::MeshGraph;
using vaebo::geometry::Position;

// Random connected graph: random points, a random spanning tree, then extra edges.
inline MeshGraph random_mesh(std::mt19937_64& rng, int n, int extra_edges, int dim = 3) {
  std::uniform_real_distribution<double> coord(0.0, 10.0);
  std::vector<Position> pos(n);
  for (auto& p : pos) p = {coord(rng), coord(rng), dim == 3 ? coord(rng) : 0.0};
  std::set<std::pair<int, int>> edges;
  for (int i = 1; i < n; ++i) {
    int j = std::uniform_int_distribution<int>(0, i - 1)(rng);
    edges.insert({std::min(i, j), std::max(i, j)});
  }
  std::uniform_int_distribution<int> node(0, n - 1);
  for (int e = 0; e < extra_edges; ++e) {
    int a = node(rng), b = node(rng);
    if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
  }
  return MeshGraph(pos, dim, std::vector<Edge>(edges.begin(), edges.end()));
}

// BFS over an explicit adjacency relation restricted to `nodes`.
inline bool connected_within(const MeshGraph& mesh, const std::vector<int>& nodes) {
  if (nodes.empty()) return true;
  std::set<int> in(nodes.begin(), nodes.end());
  std::set<int> seen{nodes.front()};
  std::queue<int> q;
  q.push(nodes.front());
  while (!q.empty()) {
    int a = q.front();
    q.pop();
    for (const auto& [u, v] : mesh.edges()) {
      int b = u == a ? v : (v == a ? u : -1);
      if (b >= 0 && in.count(b) && !seen.count(b)) {
        seen.insert(b);
        q.push(b);
      }
    }
  }
  return seen.size() == in.size();
}

// Count of mesh edges with exactly one endpoint in the set.
inline int perimeter(const MeshGraph& mesh, const std::vector<int>& nodes) {
  std::set<int> in(nodes.begin(), nodes.end());
  int p = 0;
  for (const auto& [u, v] : mesh.edges()) p += (in.count(u) != 0) != (in.count(v) != 0);
  return p;
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Dense log N(y; 0, K) via an explicit inverse and determinant.
inline double mvn_logpdf(const Eigen::VectorXd& y, const Eigen::MatrixXd& k) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(k);
  const double n = static_cast<double>(y.size());
  return -0.5 * y.dot(lu.inverse() * y) - 0.5 * std::log(lu.determinant()) - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

// Matern 5/2 written out in long double.
inline double matern_ref(double amp, const Eigen::VectorXd& ls, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  long double r2 = 0;
  for (int i = 0; i < a.size(); ++i) {
    long double d = (static_cast<long double>(a[i]) - b[i]) / ls[i];
    r2 += d * d;
  }
  long double r = std::sqrt(r2);
  long double s5 = std::sqrt(5.0L);
  return static_cast<double>(static_cast<long double>(amp) * amp * (1 + s5 * r + 5 * r2 / 3) * std::exp(-s5 * r));
}

// Single-cell two-variable model with classical RK4 at a fine step. The
// stimulus is applied as a constant current over [0, stim_time).
struct CellResult {
  std::vector<double> u;  // sampled every `sample_every` fine steps
};

inline CellResult reference_cell(double theta, double c, double eps0, double mu1, double mu2, double stim,
                                 double stim_time, double t_end, double h, int sample_every) {
  auto rhs = [&](double t, double u, double v, double& du, double& dv) {
    const double eps = eps0 + mu1 * v / std::max(u + mu2, 1e-9);
    du = -c * u * (u - theta) * (u - 1.0) - u * v + (t < stim_time ? stim : 0.0);
    dv = eps * (-v - c * u * (u - theta - 1.0));
  };
  CellResult out;
  double u = 0, v = 0;
  const int steps = static_cast<int>(std::llround(t_end / h));
  for (int s = 0; s < steps; ++s) {
    const double t = s * h;
    double k1u, k1v, k2u, k2v, k3u, k3v, k4u, k4v;
    rhs(t, u, v, k1u, k1v);
    rhs(t + h / 2, u + h / 2 * k1u, v + h / 2 * k1v, k2u, k2v);
    rhs(t + h / 2, u + h / 2 * k2u, v + h / 2 * k2v, k3u, k3v);
    rhs(t + h, u + h * k3u, v + h * k3v, k4u, k4v);
    u += h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
    if ((s + 1) % sample_every == 0) out.u.push_back(u);
  }
  return out;
}

}  // namespace testing_support
