#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include "vaebo/vae.hpp"

namespace vaebo::latentprior {

inline constexpr double kEigenFloor = 1e-10;

struct GaussianComponent {
  double weight = 1.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

enum class PriorKind { isotropic, single, mixture_k };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& s);

/// Weighted Gaussian mixture over latent space. Construction symmetrises each
/// covariance, floors its eigenvalues at kEigenFloor, checks that weights are
/// positive and sum to 1 (within 1e-10), and caches the precision factors.
class LatentPrior {
 public:
  LatentPrior(PriorKind kind, std::vector<GaussianComponent> components);

  static LatentPrior isotropic(int dim);

  PriorKind kind() const noexcept { return kind_; }
  const std::vector<GaussianComponent>& components() const noexcept { return components_; }
  int size() const noexcept { return static_cast<int>(components_.size()); }
  int dim() const noexcept { return static_cast<int>(components_.front().mean.size()); }

  /// (z - mu_i)^T Sigma_i^-1 (z - mu_i).
  double mahalanobis_sq(int i, const Eigen::VectorXd& z) const;

  /// Draw from the mixture.
  template <class Rng>
  Eigen::VectorXd sample(Rng& rng) const;

 private:
  PriorKind kind_;
  std::vector<GaussianComponent> components_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
  std::vector<double> cumulative_;
  Eigen::VectorXd sample_impl(double u, const Eigen::VectorXd& normal) const;
};

/// Symmetrise and floor eigenvalues.
Eigen::MatrixXd regularize(const Eigen::MatrixXd& cov, double floor = kEigenFloor);

/// One component per field: weight 1/N, encoder mean, diagonal exp(log_var).
/// Returned with kind mixture_k.
LatentPrior aggregate_posterior(const vae::VaeModel& model, const Eigen::MatrixXd& fields /* N x n_nodes */);

/// Keeps `cap` components chosen without replacement (seeded) and renormalises
/// their weights; returns the prior unchanged when it is already small enough.
LatentPrior subsample(const LatentPrior& prior, int cap, std::uint64_t seed);

/// Weighted moment match of a set of components.
GaussianComponent moment_match(const std::vector<GaussianComponent>& components);

/// Single Gaussian with the mixture's mean and covariance.
LatentPrior moment_match_single(const LatentPrior& prior);

/// KL(a || b) between Gaussians in closed form; weights are ignored.
double kl_gaussians(const GaussianComponent& a, const GaussianComponent& b);

struct KMeansResult {
  LatentPrior prior;
  std::vector<int> assignment;
  std::vector<double> objective;  // sum_i w_i KL(comp_i || centroid) after each iteration
  int iterations = 0;
};

/// Hard k-means over mixture components under KL(component || centroid) with
/// moment-matched centroids. Weights of the reduced mixture are the summed
/// member weights.
KMeansResult reduce_kmeans(const LatentPrior& prior, int k, int max_iters, std::uint64_t seed);

/// -f_plus * sum_i w_i (z - mu_i)^T Sigma_i^-1 (z - mu_i). Requires f_plus <= 0.
double epsilon_penalty(const LatentPrior& prior, const Eigen::VectorXd& z, double f_plus);

// Prior file: {"kind": ..., "components": [{"weight", "mean", "cov"}]} with
// covariances flattened row-major.
std::string prior_to_json_text(const LatentPrior& prior);
LatentPrior prior_from_json_text(const std::string& text);
void save_prior(const LatentPrior& prior, const std::string& path);
LatentPrior load_prior(const std::string& path);

template <class Rng>
Eigen::VectorXd LatentPrior::sample(Rng& rng) const {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double u = uniform(rng);
  Eigen::VectorXd e(dim());
  for (int i = 0; i < dim(); ++i) e[i] = normal(rng);
  return sample_impl(u, e);
}

}  // namespace vaebo::latentprior
