#include "vaebo/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <queue>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"
#include "vaebo/seed.hpp"

namespace vaebo::geometry {

using nlohmann::json;

MeshGraph::MeshGraph(std::vector<Position> positions, int dim, std::vector<Edge> edges,
                     std::vector<int> segment_of, std::optional<GridShape> grid)
    : positions_(std::move(positions)), dim_(dim), edges_(std::move(edges)), grid_(grid) {
  const int n = n_nodes();
  if (n < 1) throw std::invalid_argument("mesh needs at least one node");
  if (dim_ != 2 && dim_ != 3) throw std::invalid_argument("mesh dimension must be 2 or 3");
  for (const auto& p : positions_)
    for (double c : p)
      if (!std::isfinite(c)) throw std::invalid_argument("non-finite node coordinate");

  adjacency_.assign(n, {});
  std::set<Edge> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    auto [a, b] = edges_[e];
    if (a < 0 || a >= n || b < 0 || b >= n)
      throw std::invalid_argument("edge " + std::to_string(e) + " references an invalid node");
    if (a == b) throw std::invalid_argument("edge " + std::to_string(e) + " is a self-loop");
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second)
      throw std::invalid_argument("edge " + std::to_string(e) + " is a duplicate");
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto& nb : adjacency_) std::sort(nb.begin(), nb.end());

  std::vector<char> visited(n, 0);
  std::queue<int> frontier;
  frontier.push(0);
  visited[0] = 1;
  int reached = 1;
  while (!frontier.empty()) {
    int i = frontier.front();
    frontier.pop();
    for (int j : adjacency_[i])
      if (!visited[j]) {
        visited[j] = 1;
        ++reached;
        frontier.push(j);
      }
  }
  if (reached != n) throw std::invalid_argument("mesh graph is not connected");

  if (segment_of.empty()) segment_of.assign(n, 0);
  if (static_cast<int>(segment_of.size()) != n)
    throw std::invalid_argument("segment labels must cover every node");
  const int max_label = *std::max_element(segment_of.begin(), segment_of.end());
  std::vector<int> counts(std::max(max_label + 1, 1), 0);
  for (int s : segment_of) {
    if (s < 0) throw std::invalid_argument("negative segment label");
    ++counts[s];
  }
  if (std::find(counts.begin(), counts.end(), 0) != counts.end())
    throw std::invalid_argument("segment labels must be contiguous with no empty segment");
  segment_of_ = std::move(segment_of);
  n_segments_ = max_label + 1;

  if (grid_ && grid_->width * grid_->height != n) throw std::invalid_argument("grid shape does not match node count");
}

int MeshGraph::max_degree() const noexcept {
  std::size_t m = 0;
  for (const auto& nb : adjacency_) m = std::max(m, nb.size());
  return static_cast<int>(m);
}

std::vector<std::vector<int>> MeshGraph::segment_members() const {
  std::vector<std::vector<int>> out(n_segments_);
  for (int i = 0; i < n_nodes(); ++i) out[segment_of_[i]].push_back(i);
  return out;
}

double MeshGraph::distance_to(int a, const Position& p) const {
  const auto& x = positions_.at(a);
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (x[k] - p[k]) * (x[k] - p[k]);
  return std::sqrt(s);
}

double MeshGraph::distance(int a, int b) const { return distance_to(a, positions_.at(b)); }

std::string MeshGraph::fingerprint() const {
  std::uint64_t h = fnv1a("mesh");
  auto feed = [&h](std::uint64_t v) { h = mix64(h ^ v); };
  feed(static_cast<std::uint64_t>(dim_));
  feed(positions_.size());
  for (const auto& p : positions_)
    for (double c : p) feed(std::bit_cast<std::uint64_t>(c));
  feed(edges_.size());
  for (auto [a, b] : edges_) {
    feed(static_cast<std::uint64_t>(std::min(a, b)));
    feed(static_cast<std::uint64_t>(std::max(a, b)));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MeshGraph build_grid_mesh(int width, int height) {
  if (width < 2 || height < 2) throw std::invalid_argument("grid needs width >= 2 and height >= 2");
  std::vector<Position> pos;
  pos.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) pos.push_back({double(x), double(y), 0.0});
  std::vector<Edge> edges;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int i = y * width + x;
      if (x + 1 < width) edges.emplace_back(i, i + 1);
      if (y + 1 < height) edges.emplace_back(i, i + width);
    }
  return MeshGraph(std::move(pos), 2, std::move(edges), {}, GridShape{width, height});
}

std::vector<int> k_nearest_neighbors(const MeshGraph& mesh, int node, int k) {
  const int n = mesh.n_nodes();
  if (node < 0 || node >= n) throw std::invalid_argument("invalid node index");
  if (k < 1 || k >= n) throw std::invalid_argument("k must satisfy 1 <= k < n_nodes");
  std::vector<std::pair<double, int>> cand;
  cand.reserve(n - 1);
  for (int j = 0; j < n; ++j)
    if (j != node) cand.emplace_back(mesh.distance(node, j), j);
  std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) out[i] = cand[i].second;
  return out;
}

DiffusionOperator build_diffusion(const MeshGraph& mesh, double d) {
  if (!(d > 0.0) || !std::isfinite(d)) throw std::invalid_argument("diffusion coefficient must be positive");
  const int n = mesh.n_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n + 2 * mesh.edges().size());
  for (int i = 0; i < n; ++i) {
    const auto& nb = mesh.neighbors(i);
    for (int j : nb) trip.emplace_back(i, j, d);
    trip.emplace_back(i, i, -d * static_cast<double>(nb.size()));
  }
  Eigen::SparseMatrix<double, Eigen::RowMajor> L(n, n);
  L.setFromTriplets(trip.begin(), trip.end());
  L.makeCompressed();
  return DiffusionOperator(std::move(L), d);
}

MeshGraph partition_segments(const MeshGraph& mesh, int s_per_axis) {
  if (!mesh.grid()) throw std::invalid_argument("segment partition requires a grid-built mesh");
  if (s_per_axis < 1) throw std::invalid_argument("segments per axis must be positive");
  const auto [w, h] = *mesh.grid();
  if (w % s_per_axis != 0 || h % s_per_axis != 0)
    throw std::invalid_argument("segments per axis (" + std::to_string(s_per_axis) + ") must divide both grid axes");
  const int bw = w / s_per_axis;
  const int bh = h / s_per_axis;
  std::vector<int> seg(mesh.n_nodes());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) seg[y * w + x] = (y / bh) * s_per_axis + (x / bw);
  return MeshGraph(mesh.positions(), mesh.dim(), mesh.edges(), std::move(seg), mesh.grid());
}

namespace {

std::string line_anchor(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

MeshGraph mesh_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorruptFile("mesh file parse error at " + line_anchor(text, e.byte) + ": " + e.what());
  }
  try {
    const auto& nodes = doc.at("nodes");
    if (!nodes.is_array() || nodes.empty()) throw std::invalid_argument("'nodes' must be a non-empty array");
    const int dim = static_cast<int>(nodes.at(0).size());
    if (dim != 2 && dim != 3) throw std::invalid_argument("nodes must have 2 or 3 coordinates");
    std::vector<Position> pos;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& c = nodes[i];
      if (!c.is_array() || static_cast<int>(c.size()) != dim)
        throw std::invalid_argument("nodes[" + std::to_string(i) + "] has the wrong number of coordinates");
      Position p{0.0, 0.0, 0.0};
      for (int k = 0; k < dim; ++k) p[k] = c[k].get<double>();
      pos.push_back(p);
    }
    std::vector<Edge> edges;
    const auto& e = doc.at("edges");
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!e[i].is_array() || e[i].size() != 2)
        throw std::invalid_argument("edges[" + std::to_string(i) + "] must be a pair of node indices");
      edges.emplace_back(e[i][0].get<int>(), e[i][1].get<int>());
    }
    std::vector<int> seg;
    if (doc.contains("segments")) seg = doc["segments"].get<std::vector<int>>();
    std::optional<GridShape> grid;
    if (doc.contains("grid")) grid = GridShape{doc["grid"].at(0).get<int>(), doc["grid"].at(1).get<int>()};
    return MeshGraph(std::move(pos), dim, std::move(edges), std::move(seg), grid);
  } catch (const json::exception& ex) {
    throw CorruptFile(std::string("malformed mesh file: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw CorruptFile(std::string("invalid mesh file: ") + ex.what());
  }
}

std::string mesh_to_json_text(const MeshGraph& mesh) {
  json nodes = json::array();
  for (const auto& p : mesh.positions()) {
    json c = json::array();
    for (int k = 0; k < mesh.dim(); ++k) c.push_back(p[k]);
    nodes.push_back(std::move(c));
  }
  json edges = json::array();
  for (auto [a, b] : mesh.edges()) edges.push_back({a, b});
  json doc{{"nodes", std::move(nodes)}, {"edges", std::move(edges)}, {"segments", mesh.segment_of()},
           {"fingerprint", mesh.fingerprint()}};
  if (mesh.grid()) doc["grid"] = {mesh.grid()->width, mesh.grid()->height};
  return doc.dump() + "\n";
}

MeshGraph load_mesh(const std::string& path) { return mesh_from_json_text(io::read_text(path)); }

void save_mesh(const MeshGraph& mesh, const std::string& path) { io::write_atomic(path, mesh_to_json_text(mesh)); }

}  // namespace vaebo::geometry
