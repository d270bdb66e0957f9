#include "vaebo/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "vaebo/error.hpp"

namespace vaebo::gp {

void KernelParams::validate(int dim) const {
  if (!(amplitude > 0.0) || !std::isfinite(amplitude)) throw std::invalid_argument("kernel amplitude must be positive");
  if (!(jitter > 0.0)) throw std::invalid_argument("kernel jitter must be positive");
  if (length_scales.size() != dim) throw std::invalid_argument("one length scale per latent dimension required");
  for (double l : length_scales)
    if (!(l > 0.0) || !std::isfinite(l)) throw std::invalid_argument("length scales must be positive");
}

namespace {

inline double matern_of_r(double amp2, double r) {
  const double s = std::sqrt(5.0) * r;
  return amp2 * (1.0 + s + s * s / 3.0) * std::exp(-s);
}

}  // namespace

double matern52(const KernelParams& params, const Eigen::VectorXd& z1, const Eigen::VectorXd& z2) {
  if (z1.size() != params.length_scales.size() || z2.size() != z1.size())
    throw std::invalid_argument("matern52: dimension mismatch");
  const double r = ((z1 - z2).array() / params.length_scales.array()).matrix().norm();
  return matern_of_r(params.amplitude * params.amplitude, r);
}

Eigen::MatrixXd kernel_matrix(const KernelParams& params, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto d = params.length_scales.size();
  if (a.cols() != d || b.cols() != d) throw std::invalid_argument("kernel_matrix: dimension mismatch");
  const Eigen::ArrayXd inv = params.length_scales.array().inverse();
  const Eigen::MatrixXd as = a * inv.matrix().asDiagonal();
  const Eigen::MatrixXd bs = b * inv.matrix().asDiagonal();
  const double amp2 = params.amplitude * params.amplitude;
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) k(i, j) = matern_of_r(amp2, (as.row(i) - bs.row(j)).norm());
  return k;
}

GpState GpState::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& kernel) {
  const auto n = x.rows();
  if (n < 1) throw std::invalid_argument("gp fit needs at least one observation");
  if (y.size() != n) throw std::invalid_argument("gp fit: x and y sizes differ");
  kernel.validate(static_cast<int>(x.cols()));
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("gp fit: non-finite training data");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (x.row(i) == x.row(j)) throw std::invalid_argument("gp fit: duplicate input rows");

  GpState s;
  s.x_ = x;
  s.y_ = y;
  s.kernel_ = kernel;
  const Eigen::MatrixXd k = kernel_matrix(kernel, x, x);
  double jitter = kernel.jitter;
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    s.llt_.compute(kj);
    if (s.llt_.info() == Eigen::Success && (s.llt_.matrixLLT().diagonal().array() > 0.0).all()) {
      s.jitter_ = jitter;
      s.alpha_ = s.llt_.solve(y);
      return s;
    }
  }
  throw ConditioningError("kernel matrix is not positive definite after jitter escalation");
}

Prediction GpState::predict(const Eigen::VectorXd& z) const {
  if (z.size() != x_.cols()) throw std::invalid_argument("gp predict: dimension mismatch");
  const Eigen::MatrixXd zr = z.transpose();
  const Eigen::VectorXd ks = kernel_matrix(kernel_, x_, zr).col(0);
  const double mean = ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  const double var = std::max(0.0, kernel_.amplitude * kernel_.amplitude - v.squaredNorm());
  return {mean, std::sqrt(var)};
}

double GpState::log_marginal_likelihood() const {
  const double n = static_cast<double>(y_.size());
  return -0.5 * y_.dot(alpha_) - llt_.matrixLLT().diagonal().array().log().sum() -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

double log_marginal_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const KernelParams& kernel) {
  return GpState::fit(x, y, kernel).log_marginal_likelihood();
}

namespace {

struct LmlProblem {
  const Eigen::MatrixXd* x;
  const Eigen::VectorXd* y;
  const HyperOptConfig* cfg;
  Eigen::VectorXd lo, hi;  // log bounds: [amplitude, lengths...]
  double best_value = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_point;

  KernelParams params_at(const Eigen::VectorXd& p) const {
    const Eigen::VectorXd c = p.cwiseMax(lo).cwiseMin(hi);
    KernelParams k;
    k.amplitude = std::exp(c[0]);
    k.length_scales = c.tail(c.size() - 1).array().exp();
    k.jitter = cfg->jitter;
    return k;
  }

  double eval(const Eigen::VectorXd& p) {
    double v;
    try {
      v = log_marginal_likelihood(*x, *y, params_at(p));
    } catch (const ConditioningError&) {
      v = -std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(v)) v = -std::numeric_limits<double>::infinity();
    if (v > best_value) {
      best_value = v;
      best_point = p.cwiseMax(lo).cwiseMin(hi);
    }
    return v;
  }
};

double gsl_objective(const gsl_vector* v, void* data) {
  auto* prob = static_cast<LmlProblem*>(data);
  Eigen::VectorXd p(v->size);
  for (std::size_t i = 0; i < v->size; ++i) p[i] = gsl_vector_get(v, i);
  const double lml = prob->eval(p);
  // Outside the box the clamped value is returned with a small pull back
  // toward the feasible region so the simplex does not drift.
  const double excess = (p - p.cwiseMax(prob->lo).cwiseMin(prob->hi)).squaredNorm();
  return std::isfinite(lml) ? -lml + excess : 1e300;
}

}  // namespace

KernelParams optimize_hyperparams(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const HyperOptConfig& config,
                                  std::uint64_t rng_seed) {
  if (x.rows() < 2) throw std::invalid_argument("hyperparameter optimisation needs at least two observations");
  if (config.n_restarts < 1) throw std::invalid_argument("n_restarts must be positive");
  const auto& b = config.bounds;
  if (!(b.length_low > 0 && b.length_low < b.length_high && b.amplitude_low > 0 && b.amplitude_low < b.amplitude_high))
    throw std::invalid_argument("invalid hyperparameter bounds");
  const int d = static_cast<int>(x.cols());
  const int dim = d + 1;

  LmlProblem prob{&x, &y, &config, Eigen::VectorXd(dim), Eigen::VectorXd(dim), -std::numeric_limits<double>::infinity(), {}};
  prob.lo[0] = std::log(b.amplitude_low);
  prob.hi[0] = std::log(b.amplitude_high);
  prob.lo.tail(d).setConstant(std::log(b.length_low));
  prob.hi.tail(d).setConstant(std::log(b.length_high));

  gsl_set_error_handler_off();
  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  gsl_multimin_function fn{&gsl_objective, static_cast<std::size_t>(dim), &prob};
  gsl_vector* start = gsl_vector_alloc(dim);
  gsl_vector* step = gsl_vector_alloc(dim);
  gsl_multimin_fminimizer* nm = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
  for (int r = 0; r < config.n_restarts; ++r) {
    for (int i = 0; i < dim; ++i) {
      gsl_vector_set(start, i, prob.lo[i] + unit(rng) * (prob.hi[i] - prob.lo[i]));
      gsl_vector_set(step, i, 0.1 * (prob.hi[i] - prob.lo[i]));
    }
    if (gsl_multimin_fminimizer_set(nm, &fn, start, step) != GSL_SUCCESS) continue;
    for (int it = 0; it < config.max_evals; ++it) {
      if (gsl_multimin_fminimizer_iterate(nm) != GSL_SUCCESS) break;
      if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(nm), 1e-4) == GSL_SUCCESS) break;
    }
  }
  gsl_multimin_fminimizer_free(nm);
  gsl_vector_free(step);
  gsl_vector_free(start);

  if (!std::isfinite(prob.best_value)) throw ConditioningError("every hyperparameter start failed to factorise");
  return prob.params_at(prob.best_point);
}

}  // namespace vaebo::gp
