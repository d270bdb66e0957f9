#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vaebo/geometry.hpp"

namespace vaebo::epsim {

/// Two-variable excitation model parameters and forward-Euler settings.
struct ApParams {
  double c = 8.0;
  double eps0 = 0.002;
  double mu1 = 0.2;
  double mu2 = 0.3;
  double dt = 0.05;
  int n_steps = 400;
  std::vector<int> stim_nodes{0};
  double stim_amplitude = 8.0;
  int stim_duration_steps = 5;
};

/// Throws std::invalid_argument unless dt, step counts, stimulus nodes and
/// the explicit stability bound dt * d * max_degree < 0.5 all hold.
void validate(const ApParams& params, const geometry::MeshGraph& mesh, const geometry::DiffusionOperator& diffusion);

struct PotentialTrace {
  Eigen::MatrixXd u;  // n_nodes x n_steps, column t is the state after step t + 1
  Eigen::VectorXd v;  // recovery variable after the last step
};

struct LeadField {
  Eigen::MatrixXd h;  // n_leads x n_nodes
};

struct EcgTrace {
  Eigen::MatrixXd y;  // n_leads x n_steps
};

/// Mesh, operator and parameters bundled after validation. Immutable.
class Simulator {
 public:
  Simulator(geometry::MeshGraph mesh, double diffusion_coefficient, ApParams params);

  const geometry::MeshGraph& mesh() const noexcept { return mesh_; }
  const geometry::DiffusionOperator& diffusion() const noexcept { return diffusion_; }
  const ApParams& params() const noexcept { return params_; }

  PotentialTrace simulate(std::span<const double> theta) const;

 private:
  geometry::MeshGraph mesh_;
  geometry::DiffusionOperator diffusion_;
  ApParams params_;
};

/// Integrates
///   du/dt = L u - c u (u - theta)(u - 1) - u v + stimulus
///   dv/dt = eps(u, v) (-v - c u (u - theta - 1)),  eps = eps0 + mu1 v / (u + mu2)
/// from u = v = 0 with forward Euler. Throws UnstableIntegration on blow-up.
PotentialTrace simulate_ap(const geometry::DiffusionOperator& diffusion, const ApParams& params,
                           std::span<const double> theta);

/// Electrode grid over the mesh bounding box at the given height above it.
std::vector<geometry::Position> default_electrodes(const geometry::MeshGraph& mesh, int n_leads, double height);

/// h[l][i] = 1 / (|e_l - x_i|^2 + 1), each row then mean-centered. `jitter`
/// displaces electrodes uniformly by up to that amount, drawn from `seed`.
LeadField synth_lead_field(const geometry::MeshGraph& mesh, const std::vector<geometry::Position>& electrodes,
                           std::uint64_t seed, double jitter = 0.0);

EcgTrace forward_ecg(const LeadField& lead, const PotentialTrace& trace);

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

/// Adds i.i.d. Gaussian noise of variance mean(y^2) / 10^(snr_db / 10).
/// snr_db = kNoNoise returns the input unchanged.
EcgTrace add_noise_snr(const EcgTrace& y, double snr_db, std::uint64_t seed);

/// Empirical SNR in dB of `noisy` against `clean`.
double measured_snr_db(const EcgTrace& clean, const EcgTrace& noisy);

/// Simulator plus lead field: theta -> surface signals.
class ForwardModel {
 public:
  ForwardModel(Simulator simulator, LeadField lead);

  const Simulator& simulator() const noexcept { return sim_; }
  const LeadField& lead() const noexcept { return lead_; }
  int n_nodes() const noexcept { return sim_.mesh().n_nodes(); }

  EcgTrace operator()(std::span<const double> theta) const;

 private:
  Simulator sim_;
  LeadField lead_;
};

/// -||measured - model(theta)||_F^2.
double objective_mismatch(const EcgTrace& measured, std::span<const double> theta, const ForwardModel& model);

// EcgTrace CSV: one row per time step, one column per lead.
std::string ecg_to_csv(const EcgTrace& y);
EcgTrace ecg_from_csv(const std::string& text);
void save_ecg_csv(const EcgTrace& y, const std::string& path);
EcgTrace load_ecg_csv(const std::string& path);

// LeadField binary: "LEAD", u32 n_leads, u32 n_nodes, row-major f64.
std::vector<std::uint8_t> lead_field_to_bytes(const LeadField& lead);
LeadField lead_field_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_lead_field(const LeadField& lead, const std::string& path);
LeadField load_lead_field(const std::string& path);

}  // namespace vaebo::epsim
