#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace vaebo::geometry {

using Position = std::array<double, 3>;
using Edge = std::pair<int, int>;

struct GridShape {
  int width = 0;
  int height = 0;
};

/// Node graph over 2D or 3D positions. Validated on construction: edges are
/// in range, undirected, unique and loop-free; the graph is connected;
/// segment labels form a contiguous non-empty range 0..S-1.
class MeshGraph {
 public:
  MeshGraph(std::vector<Position> positions, int dim, std::vector<Edge> edges,
            std::vector<int> segment_of = {}, std::optional<GridShape> grid = std::nullopt);

  int n_nodes() const noexcept { return static_cast<int>(positions_.size()); }
  int dim() const noexcept { return dim_; }
  const std::vector<Position>& positions() const noexcept { return positions_; }
  const Position& position(int i) const { return positions_.at(i); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<int>& neighbors(int i) const { return adjacency_.at(i); }
  int max_degree() const noexcept;

  const std::vector<int>& segment_of() const noexcept { return segment_of_; }
  int n_segments() const noexcept { return n_segments_; }
  std::vector<std::vector<int>> segment_members() const;

  const std::optional<GridShape>& grid() const noexcept { return grid_; }

  double distance(int a, int b) const;
  double distance_to(int a, const Position& p) const;

  /// Hex digest over positions and edges. Segment labels are excluded so a
  /// partitioned mesh keeps the fingerprint of its parent.
  std::string fingerprint() const;

 private:
  std::vector<Position> positions_;
  int dim_;
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<int> segment_of_;
  int n_segments_ = 1;
  std::optional<GridShape> grid_;
};

/// d * (A - Deg) for the 0/1 adjacency A. Rows sum to zero.
class DiffusionOperator {
 public:
  DiffusionOperator(Eigen::SparseMatrix<double, Eigen::RowMajor> matrix, double d)
      : matrix_(std::move(matrix)), d_(d) {}

  const Eigen::SparseMatrix<double, Eigen::RowMajor>& matrix() const noexcept { return matrix_; }
  double coefficient() const noexcept { return d_; }
  int size() const noexcept { return static_cast<int>(matrix_.rows()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return matrix_ * u; }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix_;
  double d_;
};

/// 4-connected lattice, node index y * width + x at integer coordinates.
MeshGraph build_grid_mesh(int width, int height);

/// The k nodes other than `node` closest in Euclidean distance, ties by index.
std::vector<int> k_nearest_neighbors(const MeshGraph& mesh, int node, int k);

DiffusionOperator build_diffusion(const MeshGraph& mesh, double d);

/// Uniform s x s block partition of a grid-built mesh.
MeshGraph partition_segments(const MeshGraph& mesh, int s_per_axis);

// Mesh file: {"nodes": [[x, y(, z)]...], "edges": [[i, j]...], "segments": [...]}
// plus an optional "grid": [w, h]. Parse failures report the offending line.
MeshGraph mesh_from_json_text(const std::string& text);
std::string mesh_to_json_text(const MeshGraph& mesh);
MeshGraph load_mesh(const std::string& path);
void save_mesh(const MeshGraph& mesh, const std::string& path);

}  // namespace vaebo::geometry
