#pragma once

#include <cstdint>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace vaebo::gp {

struct KernelParams {
  double amplitude = 1.0;
  Eigen::VectorXd length_scales;
  double jitter = 1e-8;

  void validate(int dim) const;
};

/// Anisotropic Matern 5/2.
double matern52(const KernelParams& params, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2);

/// Kernel matrix between the rows of a and the rows of b.
Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct Prediction {
  double mean = 0.0;
  double std = 0.0;
};

/// Zero-mean GP posterior. Immutable after fit.
class GpState {
 public:
  /// x is n x d (one observation per row). Throws ConditioningError if
  /// K + jitter*I is still not SPD after three tenfold jitter escalations.
  static GpState fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& kernel);

  Prediction predict(const Eigen::VectorXd& z) const;

  const Eigen::MatrixXd& x() const noexcept { return x_; }
  const Eigen::VectorXd& y() const noexcept { return y_; }
  const KernelParams& kernel() const noexcept { return kernel_; }
  /// Jitter actually used, after any escalation.
  double jitter() const noexcept { return jitter_; }
  Eigen::MatrixXd factor() const { return llt_.matrixL(); }
  const Eigen::VectorXd& alpha() const noexcept { return alpha_; }
  /// -1/2 y^T alpha - sum log diag(L) - n/2 log(2 pi).
  double log_marginal_likelihood() const;

 private:
  GpState() = default;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  KernelParams kernel_;
  double jitter_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

double log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& kernel);

struct HyperBounds {
  double length_low = 1e-2;
  double length_high = 1e2;
  double amplitude_low = 1e-3;
  double amplitude_high = 1e3;
};

struct HyperOptConfig {
  HyperBounds bounds;
  int n_restarts = 8;
  int max_evals = 400;  // per restart
  double jitter = 1e-8;
};

/// Multi-start Nelder-Mead over log amplitude and log length scales, starts
/// drawn log-uniformly inside the bounds. The result is the best start or
/// local optimum (ties by lowest restart index) and always lies inside the
/// bounds.
KernelParams optimize_hyperparams(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const HyperOptConfig& config,
                                  std::uint64_t rng_seed);

}  // namespace vaebo::gp
