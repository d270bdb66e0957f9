#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vaebo/epsim.hpp"
#include "vaebo/gp.hpp"
#include "vaebo/latentprior.hpp"
#include "vaebo/vae.hpp"

namespace vaebo::bayesopt {

enum class Acquisition { ei, ei_isotropic, ei_post1, ei_postk };

std::string to_string(Acquisition a);
Acquisition acquisition_from_string(const std::string& s);
bool needs_prior(Acquisition a);

struct BoConfig {
  int budget = 105;
  int n_init = 10;
  double bound_low = -4.0;  // same box on every dimension
  double bound_high = 4.0;
  Acquisition acquisition = Acquisition::ei_post1;
  int candidate_count = 2048;
  int refine_steps = 20;
  int refit_every = 1;  // hyperparameters re-optimised every k-th iteration
  gp::HyperOptConfig hyper;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct BoRecord {
  int iteration = 0;  // 0-based evaluation index
  Eigen::VectorXd z;
  double value = 0.0;  // -inf marks a failed simulation
  double f_plus = 0.0;  // incumbent after this evaluation
  double amplitude = 0.0;  // kernel used to propose z; 0 for the initial design
  Eigen::VectorXd length_scales;
  double acquisition_value = 0.0;  // NaN for the initial design
};

struct BoResult {
  Eigen::VectorXd best_z;
  Eigen::VectorXd best_theta;
  double best_value = 0.0;
  std::vector<BoRecord> history;
  int eval_count = 0;
  std::string acquisition;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Observer = std::function<void(const BoRecord&)>;

/// -||measured - M(decode_mean(z))||_F^2; unstable simulations give -inf.
double latent_objective(const Eigen::VectorXd& z, const vae::VaeModel& model, const epsim::EcgTrace& measured,
                        const epsim::ForwardModel& forward);

double expected_improvement(double mean, double std, double f_plus);
/// log of expected_improvement, accurate where the latter underflows.
double log_expected_improvement(double mean, double std, double f_plus);

/// Threshold that replaces f_plus: f_plus itself for plain EI, otherwise
/// f_plus + epsilon_penalty(prior, z, f_plus).
double acquisition_threshold(const Eigen::VectorXd& z, const latentprior::LatentPrior* prior, double f_plus,
                             Acquisition variant);

/// EI of the GP posterior at z against acquisition_threshold.
double acquisition(const Eigen::VectorXd& z, const gp::GpState& gp, const latentprior::LatentPrior* prior,
                   double f_plus, Acquisition variant);

struct Proposal {
  Eigen::VectorXd z;
  double log_acquisition = 0.0;
};

/// GP targets are affine images y' = (y - shift) / scale of the objective;
/// f_plus and thresholds are given in objective units.
struct TargetScale {
  double shift = 0.0;
  double scale = 1.0;
  double to_gp(double y) const { return (y - shift) / scale; }
};

/// Candidate search plus coordinate pattern search. `observed` holds the
/// evaluated points as rows; proposals keep at least 1e-9 distance from them.
Proposal propose_next(const gp::GpState& gp, const TargetScale& target, const latentprior::LatentPrior* prior,
                      double f_plus, const BoConfig& config, const Eigen::MatrixXd& observed, std::mt19937_64& rng);

/// Generic loop over the box [bound_low, bound_high]^dim. For prior variants
/// the initial design and half of each candidate set are prior draws.
BoResult run_bo_generic(const Objective& objective, int dim, const latentprior::LatentPrior* prior,
                        const BoConfig& config, const Observer& observer = {});

BoResult run_bo(const epsim::EcgTrace& measured, const vae::VaeModel& model, const latentprior::LatentPrior* prior,
                const BoConfig& config, const epsim::ForwardModel& forward, const Observer& observer = {});

/// Plain-EI search over per-segment values in [0,1]^S of the forward model's
/// segmented mesh. Bounds and acquisition in `config` are overridden.
BoResult run_fs_baseline(const epsim::EcgTrace& measured, const epsim::ForwardModel& forward, BoConfig config,
                         const Observer& observer = {});

Eigen::VectorXd broadcast_segments(const geometry::MeshGraph& mesh, const Eigen::VectorXd& segment_values);

std::string record_to_json_line(const BoRecord& r, Acquisition variant);
std::string result_to_json(const BoResult& r);

}  // namespace vaebo::bayesopt
