#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vaebo/bayesopt.hpp"
#include "vaebo/config.hpp"
#include "vaebo/datagen.hpp"
#include "vaebo/epsim.hpp"
#include "vaebo/geometry.hpp"
#include "vaebo/latentprior.hpp"
#include "vaebo/metrics.hpp"
#include "vaebo/vae.hpp"

namespace vaebo::pipeline {

// Every artifact gets a "<path>.meta.json" sidecar with its kind, the mesh
// fingerprint and the seed it was produced from.
struct ArtifactMeta {
  std::string kind;
  std::string mesh_fingerprint;
  std::uint64_t seed = 0;
  std::map<std::string, double> extra;  // e.g. the field scale of a weights file
};

std::string meta_path(const std::string& artifact);
void write_meta(const std::string& artifact, const ArtifactMeta& meta);
ArtifactMeta read_meta(const std::string& artifact);
/// Throws FingerprintMismatch naming `what` when fingerprints differ.
void check_fingerprint(const ArtifactMeta& meta, const std::string& expected, const std::string& what);

geometry::MeshGraph build_mesh(const config::RunConfig& cfg);
epsim::ApParams ap_params(const config::RunConfig& cfg);
epsim::LeadField build_lead_field(const config::RunConfig& cfg, const geometry::MeshGraph& mesh);
epsim::ForwardModel build_forward(const config::RunConfig& cfg, const geometry::MeshGraph& mesh,
                                  std::optional<epsim::LeadField> lead = std::nullopt);
datagen::Dataset build_dataset(const config::RunConfig& cfg, const geometry::MeshGraph& mesh);
/// Input width follows the dataset; binary targets span the dataset's theta values.
vae::VaeModel train_vae(const config::RunConfig& cfg, const datagen::Dataset& data);
/// kind: isotropic | post1 | postk.
latentprior::LatentPrior build_prior(const config::RunConfig& cfg, const vae::VaeModel& model,
                                     const datagen::Dataset& data, const std::string& kind);

struct Phantom {
  int index = 0;
  double size_fraction = 0.0;
  Eigen::VectorXd truth;
  epsim::EcgTrace measured;
};

/// Ground truth for sweep case `index` and its noisy surface signals.
Phantom make_phantom(const config::RunConfig& cfg, const geometry::MeshGraph& mesh,
                     const epsim::ForwardModel& forward, int index);

std::uint64_t bo_seed(const config::RunConfig& cfg, int case_index);

/// method: an acquisition name or "fs". Prior variants need `prior`; VAE
/// methods need `model`.
bayesopt::BoResult estimate(const config::RunConfig& cfg, const std::string& method, const epsim::EcgTrace& measured,
                            const epsim::ForwardModel& forward, const vae::VaeModel* model,
                            const latentprior::LatentPrior* prior, std::uint64_t seed,
                            const bayesopt::Observer& observer = {});

struct CaseRow {
  int case_index = 0;
  std::string method;
  double size_fraction = 0.0;
  double dice = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  int eval_count = 0;
  double best_value = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::string error;
};

struct ExperimentResult {
  std::vector<CaseRow> rows;  // case-major, methods in configured order
  std::map<std::string, double> median_dice;
  std::map<std::string, double> median_rmse;
};

struct ExperimentInputs {
  const vae::VaeModel* model = nullptr;
  std::map<std::string, latentprior::LatentPrior> priors;  // keyed by method
};

/// Runs every (case, method) pair, up to cfg.jobs cases at a time. When
/// out_dir is non-empty it receives results.csv, summary.json, per-run logs
/// and P2 images of truth and estimates. Per-case failures land in the row's
/// error column.
ExperimentResult run_experiment(const config::RunConfig& cfg, const ExperimentInputs& inputs,
                                const std::string& out_dir, std::ostream* log = nullptr);

std::string rows_to_csv(const std::vector<CaseRow>& rows);
double median(std::vector<double> v);

// Portable graymap (P2), values in [0, 1] scaled to 0..255.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major, in [0, 1]
};
std::string image_to_pgm(const Image& img);
Image image_from_pgm(const std::string& text);
/// Grid meshes map node y*w+x to pixel (x, y); other meshes become one row.
Image field_image(const geometry::MeshGraph& mesh, const Eigen::VectorXd& field);

}  // namespace vaebo::pipeline
