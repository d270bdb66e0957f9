#include "vaebo/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <random>
#include <stdexcept>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"
#include "vaebo/seed.hpp"

namespace vaebo::datagen {

namespace {

constexpr int kCandidatePool = 5;

int pick_seed_node(const geometry::MeshGraph& mesh, const InfarctSpec& spec, std::mt19937_64& rng) {
  if (spec.seed_node) {
    if (*spec.seed_node < 0 || *spec.seed_node >= mesh.n_nodes()) throw std::invalid_argument("invalid seed node");
    return *spec.seed_node;
  }
  return std::uniform_int_distribution<int>(0, mesh.n_nodes() - 1)(rng);
}

// Unclaimed graph neighbours of the member set.
std::vector<int> frontier_of(const geometry::MeshGraph& mesh, const std::vector<char>& member,
                             const std::vector<int>& members) {
  std::vector<char> seen(member.size(), 0);
  std::vector<int> out;
  for (int m : members)
    for (int j : mesh.neighbors(m))
      if (!member[j] && !seen[j]) {
        seen[j] = 1;
        out.push_back(j);
      }
  return out;
}

}  // namespace

int target_count(const geometry::MeshGraph& mesh, double size_fraction) {
  if (!(size_fraction > 0.0 && size_fraction < 1.0)) throw std::invalid_argument("size_fraction must lie in (0, 1)");
  const int target = static_cast<int>(std::lround(size_fraction * mesh.n_nodes()));
  if (target < 1) throw std::invalid_argument("infarct target count rounds to zero");
  if (target >= mesh.n_nodes()) throw std::invalid_argument("infarct target count must be below n_nodes");
  return target;
}

std::vector<int> grow_random_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec) {
  const int target = target_count(mesh, spec.size_fraction);
  const int n = mesh.n_nodes();
  std::mt19937_64 rng(spec.rng_seed);
  const int seed = pick_seed_node(mesh, spec, rng);

  std::vector<char> member(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::vector<int> members{seed};
  member[seed] = 1;
  for (int i = 0; i < n; ++i) nearest[i] = mesh.distance(seed, i);
  const std::vector<double> from_seed = nearest;

  while (static_cast<int>(members.size()) < target) {
    auto cand = frontier_of(mesh, member, members);
    std::sort(cand.begin(), cand.end(), [&](int a, int b) {
      if (nearest[a] != nearest[b]) return nearest[a] < nearest[b];
      if (from_seed[a] != from_seed[b]) return from_seed[a] < from_seed[b];
      return a < b;
    });
    const int pool = std::min<int>(kCandidatePool, static_cast<int>(cand.size()));
    const int chosen = cand[std::uniform_int_distribution<int>(0, pool - 1)(rng)];
    member[chosen] = 1;
    members.push_back(chosen);
    for (int i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], mesh.distance(chosen, i));
  }
  return members;
}

std::vector<int> grow_compact_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec) {
  const int target = target_count(mesh, spec.size_fraction);
  std::mt19937_64 rng(spec.rng_seed);
  const int seed = pick_seed_node(mesh, spec, rng);

  std::vector<char> member(mesh.n_nodes(), 0);
  std::vector<int> members{seed};
  member[seed] = 1;
  geometry::Position sum = mesh.position(seed);

  while (static_cast<int>(members.size()) < target) {
    geometry::Position centroid;
    for (int k = 0; k < 3; ++k) centroid[k] = sum[k] / static_cast<double>(members.size());
    auto cand = frontier_of(mesh, member, members);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j : cand) {
      const double d = mesh.distance_to(j, centroid);
      if (d < best_d || (d == best_d && j < best)) {
        best_d = d;
        best = j;
      }
    }
    member[best] = 1;
    members.push_back(best);
    for (int k = 0; k < 3; ++k) sum[k] += mesh.position(best)[k];
  }
  return members;
}

std::vector<int> grow_infarct(const geometry::MeshGraph& mesh, const InfarctSpec& spec) {
  return spec.mode == GrowthMode::random_growth ? grow_random_infarct(mesh, spec) : grow_compact_infarct(mesh, spec);
}

Eigen::VectorXd make_field(int n_nodes, const std::vector<int>& infarct, double theta_healthy, double theta_infarct) {
  Eigen::VectorXd f = Eigen::VectorXd::Constant(n_nodes, theta_healthy);
  for (int i : infarct) f[i] = theta_infarct;
  return f;
}

Dataset make_dataset(const geometry::MeshGraph& mesh, const DatasetConfig& cfg) {
  if (cfg.count < 1) throw std::invalid_argument("dataset count must be at least 1");
  if (!(cfg.size_min > 0.0 && cfg.size_max < 1.0 && cfg.size_min <= cfg.size_max))
    throw std::invalid_argument("infarct size range must satisfy 0 < min <= max < 1");
  if (!(cfg.random_fraction >= 0.0 && cfg.random_fraction <= 1.0))
    throw std::invalid_argument("random_fraction must lie in [0, 1]");
  for (double t : {cfg.theta_healthy, cfg.theta_infarct})
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("theta values must lie in [0, 1]");

  Dataset data;
  data.theta_healthy = cfg.theta_healthy;
  data.theta_infarct = cfg.theta_infarct;
  data.mesh_fingerprint = mesh.fingerprint();
  data.fields.resize(cfg.count, mesh.n_nodes());
  for (int i = 0; i < cfg.count; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, static_cast<std::uint64_t>(i)));
    InfarctSpec spec;
    spec.size_fraction = std::uniform_real_distribution<double>(cfg.size_min, cfg.size_max)(rng);
    spec.mode = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.random_fraction
                    ? GrowthMode::random_growth
                    : GrowthMode::compact_growth;
    spec.seed_node = std::uniform_int_distribution<int>(0, mesh.n_nodes() - 1)(rng);
    spec.rng_seed = rng();
    // Rounding can push tiny fractions to zero nodes; clamp to one.
    spec.size_fraction = std::max(spec.size_fraction, 0.5 / mesh.n_nodes() + 1e-12);
    data.fields.row(i) = make_field(mesh.n_nodes(), grow_infarct(mesh, spec), cfg.theta_healthy, cfg.theta_infarct);
  }
  return data;
}

bool is_connected_subset(const geometry::MeshGraph& mesh, std::vector<int> nodes) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  if (nodes.empty()) return true;
  std::vector<char> in(mesh.n_nodes(), 0), seen(mesh.n_nodes(), 0);
  for (int i : nodes) in[i] = 1;
  std::queue<int> q;
  q.push(nodes.front());
  seen[nodes.front()] = 1;
  std::size_t reached = 1;
  while (!q.empty()) {
    int i = q.front();
    q.pop();
    for (int j : mesh.neighbors(i))
      if (in[j] && !seen[j]) {
        seen[j] = 1;
        ++reached;
        q.push(j);
      }
  }
  return reached == nodes.size();
}

std::string check_dataset(const Dataset& data, const geometry::MeshGraph& mesh) {
  if (data.n_nodes() != mesh.n_nodes()) return "dataset width does not match mesh";
  if (!data.mesh_fingerprint.empty() && data.mesh_fingerprint != mesh.fingerprint())
    return "dataset mesh fingerprint does not match mesh";
  // Tolerance covers the f32 storage round trip.
  constexpr double kTol = 1e-6;
  for (int r = 0; r < data.size(); ++r) {
    std::vector<int> infarct;
    for (int i = 0; i < data.n_nodes(); ++i) {
      const double v = data.fields(r, i);
      if (std::abs(v - data.theta_infarct) <= kTol)
        infarct.push_back(i);
      else if (std::abs(v - data.theta_healthy) > kTol)
        return "row " + std::to_string(r) + " has a value outside {theta_healthy, theta_infarct}";
    }
    if (!is_connected_subset(mesh, infarct)) return "row " + std::to_string(r) + " infarct is not connected";
  }
  return {};
}

std::vector<std::uint8_t> dataset_to_bytes(const Dataset& data) {
  io::ByteWriter w;
  w.raw("THET");
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.n_nodes()));
  w.f64(data.theta_healthy);
  w.f64(data.theta_infarct);
  for (int r = 0; r < data.size(); ++r)
    for (int i = 0; i < data.n_nodes(); ++i) w.f32(static_cast<float>(data.fields(r, i)));
  return w.bytes();
}

Dataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "dataset");
  if (r.raw(4) != "THET") throw CorruptFile("dataset: bad magic");
  const auto rows = r.u32();
  const auto cols = r.u32();
  Dataset d;
  d.theta_healthy = r.f64();
  d.theta_infarct = r.f64();
  if (static_cast<std::uint64_t>(rows) * cols * 4 != r.remaining())
    throw CorruptFile("dataset: payload size does not match header");
  d.fields.resize(rows, cols);
  // Stored as f32; values that round-trip a theta level are restored exactly.
  const float fh = static_cast<float>(d.theta_healthy), fi = static_cast<float>(d.theta_infarct);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) {
      const float v = r.f32();
      d.fields(i, j) = v == fh ? d.theta_healthy : v == fi ? d.theta_infarct : static_cast<double>(v);
    }
  return d;
}

void save_dataset(const Dataset& data, const std::string& path) { io::write_atomic(path, dataset_to_bytes(data)); }

Dataset load_dataset(const std::string& path) { return dataset_from_bytes(io::read_bytes(path)); }

}  // namespace vaebo::datagen
