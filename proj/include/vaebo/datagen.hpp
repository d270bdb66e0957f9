#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vaebo/geometry.hpp"

namespace vaebo::datagen {

enum class GrowthMode { random_growth, compact_growth };

struct InfarctSpec {
  double size_fraction = 0.1;
  std::optional<int> seed_node;  // nullopt: drawn uniformly from rng_seed
  GrowthMode mode = GrowthMode::random_growth;
  std::uint64_t rng_seed = 0;
};

/// Number of infarct nodes a spec asks for; throws if it is < 1 or >= n_nodes.
int target_count(const geometry::MeshGraph& mesh, double size_fraction);

/// Region growing: each step ranks the unclaimed graph neighbours of the set
/// by distance to the nearest member and adds one of the five closest
/// uniformly at random. Equal distances fall back to distance from the seed
/// node, then node index. Returns nodes in the order they were added (seed
/// first).
std::vector<int> grow_random_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec);

/// Adds the unclaimed graph neighbour closest to the current centroid; ties by index.
std::vector<int> grow_compact_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec);

std::vector<int> grow_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec);

struct DatasetConfig {
  int count = 5000;
  double size_min = 0.02;
  double size_max = 0.40;
  double random_fraction = 0.7;  // remainder uses compact growth
  double theta_healthy = 0.15;
  double theta_infarct = 0.5;
  std::uint64_t rng_seed = 0;
};

struct Dataset {
  Eigen::MatrixXd fields;  // N x n_nodes
  double theta_healthy = 0.15;
  double theta_infarct = 0.5;
  std::string mesh_fingerprint;

  int size() const noexcept { return static_cast<int>(fields.rows()); }
  int n_nodes() const noexcept { return static_cast<int>(fields.cols()); }
  Eigen::VectorXd field(int i) const { return fields.row(i).transpose(); }
};

/// theta field with `infarct` nodes at theta_infarct, others at theta_healthy.
Eigen::VectorXd make_field(int n_nodes, const std::vector<int>& infarct, double theta_healthy, double theta_infarct);

/// Field i uses child seed derive_seed(rng_seed, i), so any subset can be
/// regenerated independently.
Dataset make_dataset(const geometry::MeshGraph& mesh, const DatasetConfig& config);

/// Empty string when every row is two-valued with a mesh-connected infarct,
/// otherwise a description of the first violation.
std::string check_dataset(const Dataset& data, const geometry::MeshGraph& mesh);

bool is_connected_subset(const geometry::MeshGraph& mesh, std::vector<int> nodes);

// Dataset binary: "THET", u32 N, u32 n_nodes, f64 theta_healthy,
// f64 theta_infarct, row-major f32 fields.
std::vector<std::uint8_t> dataset_to_bytes(const Dataset& data);
Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace vaebo::datagen
