#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vaebo/bayesopt.hpp"
#include "vaebo/datagen.hpp"
#include "vaebo/epsim.hpp"
#include "vaebo/vae.hpp"

namespace vaebo::config {

/// Flat `section.key = value` document. '#' starts a comment; blank lines
/// are ignored. Parse errors name the offending line.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text);
  static FlatConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value".
  void set_assignment(const std::string& assignment);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

struct MeshBlock {
  int width = 16;
  int height = 16;
  std::string import_path;  // empty: build a grid
  int segments = 4;         // per axis; 0 leaves the mesh unpartitioned
};

struct LeadBlock {
  int n_leads = 120;
  double height = 2.0;
  double jitter = 0.0;
};

struct PriorBlock {
  std::string kind = "post1";  // isotropic | post1 | postk
  int k = 10;
  int subsample = 20000;
  int max_iters = 100;
};

struct ExperimentBlock {
  int cases = 10;
  double size_min = 0.05;
  double size_max = 0.30;
  double random_fraction = 0.7;
  std::vector<std::string> methods{"ei_post1", "fs"};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
  MeshBlock mesh;
  double diffusion = 1.5;
  epsim::ApParams ap;
  LeadBlock lead;
  double snr_db = 20.0;
  datagen::DatasetConfig datagen;
  vae::VaeArch arch;
  vae::TrainConfig train;
  PriorBlock prior;
  bayesopt::BoConfig bo;
  int metrics_bins = 64;
  ExperimentBlock experiment;

  /// Unknown keys and malformed values are errors.
  static RunConfig from_flat(const FlatConfig& flat);
  FlatConfig to_flat() const;

  /// Every check that does not need simulation; throws std::invalid_argument.
  void validate() const;
};

/// Methods accepted by estimate and experiment: the acquisition names plus "fs".
bool is_method(const std::string& name);

}  // namespace vaebo::config
