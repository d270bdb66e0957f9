#include "vaebo/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vaebo/error.hpp"
#include "vaebo/seed.hpp"
#include "vaebo/span.hpp"

namespace vaebo::bayesopt {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinSeparation = 1e-9;
}  // namespace

std::string to_string(Acquisition a) {
  switch (a) {
    case Acquisition::ei: return "ei";
    case Acquisition::ei_isotropic: return "ei_isotropic";
    case Acquisition::ei_post1: return "ei_post1";
    case Acquisition::ei_postk: return "ei_postk";
  }
  return "unknown";
}

Acquisition acquisition_from_string(const std::string& s) {
  if (s == "ei") return Acquisition::ei;
  if (s == "ei_isotropic") return Acquisition::ei_isotropic;
  if (s == "ei_post1") return Acquisition::ei_post1;
  if (s == "ei_postk") return Acquisition::ei_postk;
  throw std::invalid_argument("unknown acquisition '" + s + "'");
}

bool needs_prior(Acquisition a) { return a == Acquisition::ei_post1 || a == Acquisition::ei_postk; }

void BoConfig::validate() const {
  if (n_init < 1) throw std::invalid_argument("bo.n_init must be at least 1");
  if (budget < n_init) throw std::invalid_argument("bo.budget must be at least bo.n_init");
  if (!std::isfinite(bound_low) || !std::isfinite(bound_high) || !(bound_low < bound_high))
    throw std::invalid_argument("bo bounds must be finite with low < high");
  if (candidate_count < 2) throw std::invalid_argument("bo.candidate_count must be at least 2");
  if (refine_steps < 0) throw std::invalid_argument("bo.refine_steps must be non-negative");
  if (refit_every < 1) throw std::invalid_argument("bo.refit_every must be positive");
  if (hyper.n_restarts < 1) throw std::invalid_argument("gp restarts must be positive");
}

double latent_objective(const Eigen::VectorXd& z, const vae::VaeModel& model, const epsim::EcgTrace& measured,
                        const epsim::ForwardModel& forward) {
  const Eigen::VectorXd theta = model.decode_mean(z);
  try {
    return epsim::objective_mismatch(measured, as_span(theta), forward);
  } catch (const UnstableIntegration&) {
    return kNegInf;
  }
}

namespace {

double std_normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }
double std_normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

double expected_improvement(double mean, double std, double f_plus) {
  if (std < 0.0) throw std::invalid_argument("expected_improvement: negative std");
  if (std == 0.0) return std::max(mean - f_plus, 0.0);
  const double u = (mean - f_plus) / std;
  return std::max(0.0, (mean - f_plus) * std_normal_cdf(u) + std * std_normal_pdf(u));
}

double log_expected_improvement(double mean, double std, double f_plus) {
  if (std < 0.0) throw std::invalid_argument("log_expected_improvement: negative std");
  if (std == 0.0) return mean > f_plus ? std::log(mean - f_plus) : kNegInf;
  const double u = (mean - f_plus) / std;
  if (u > -5.0) return std::log(std) + std::log(u * std_normal_cdf(u) + std_normal_pdf(u));
  // Deep tail: u Phi(u) + phi(u) = phi(u) (1 - x R(x)) with x = -u and the
  // Mills ratio R from its continued fraction.
  const double x = -u;
  double frac = x;
  for (int k = 60; k >= 1; --k) frac = x + k / frac;
  const double r = 1.0 / frac;
  return std::log(std) - 0.5 * x * x - 0.5 * std::log(2.0 * std::numbers::pi) + std::log1p(-x * r);
}

double acquisition_threshold(const Eigen::VectorXd& z, const latentprior::LatentPrior* prior, double f_plus,
                             Acquisition variant) {
  if (variant == Acquisition::ei) return f_plus;
  if (!prior) throw std::invalid_argument("acquisition " + to_string(variant) + " requires a prior");
  return f_plus + latentprior::epsilon_penalty(*prior, z, f_plus);
}

double acquisition(const Eigen::VectorXd& z, const gp::GpState& gp, const latentprior::LatentPrior* prior,
                   double f_plus, Acquisition variant) {
  const auto p = gp.predict(z);
  return expected_improvement(p.mean, p.std, acquisition_threshold(z, prior, f_plus, variant));
}

namespace {

double min_distance(const Eigen::VectorXd& z, const Eigen::MatrixXd& observed) {
  if (observed.rows() == 0) return std::numeric_limits<double>::infinity();
  return (observed.rowwise() - z.transpose()).rowwise().norm().minCoeff();
}

Eigen::VectorXd uniform_point(int dim, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd z(dim);
  for (int i = 0; i < dim; ++i) z[i] = u(rng);
  return z;
}

// Rejection sampling from the prior restricted to the box; falls back to
// clipping after 100 misses.
Eigen::VectorXd prior_point(const latentprior::LatentPrior& prior, double lo, double hi, std::mt19937_64& rng) {
  Eigen::VectorXd z;
  for (int attempt = 0; attempt < 100; ++attempt) {
    z = prior.sample(rng);
    if ((z.array() >= lo).all() && (z.array() <= hi).all()) return z;
  }
  return z.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace

Proposal propose_next(const gp::GpState& gp, const TargetScale& target, const latentprior::LatentPrior* prior,
                      double f_plus, const BoConfig& config, const Eigen::MatrixXd& observed, std::mt19937_64& rng) {
  const int dim = static_cast<int>(gp.x().cols());
  const Acquisition variant = config.acquisition;
  if (variant != Acquisition::ei && !prior)
    throw std::invalid_argument("acquisition " + to_string(variant) + " requires a prior");
  const double lo = config.bound_low, hi = config.bound_high;

  auto score = [&](const Eigen::VectorXd& z) {
    const auto p = gp.predict(z);
    const double t = target.to_gp(acquisition_threshold(z, prior, f_plus, variant));
    return log_expected_improvement(p.mean, p.std, t);
  };

  const int n_cand = config.candidate_count;
  const int n_prior = variant == Acquisition::ei ? 0 : n_cand / 2;
  std::vector<Eigen::VectorXd> cand;
  cand.reserve(n_cand);
  for (int i = 0; i < n_prior; ++i) cand.push_back(prior_point(*prior, lo, hi, rng));
  for (int i = n_prior; i < n_cand; ++i) cand.push_back(uniform_point(dim, lo, hi, rng));

  std::vector<double> scores(n_cand);
  for (int i = 0; i < n_cand; ++i) scores[i] = score(cand[i]);
  std::vector<int> order(n_cand);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });

  int start = -1;
  for (int i : order)
    if (min_distance(cand[i], observed) >= kMinSeparation) {
      start = i;
      break;
    }
  if (start < 0) throw Error("every acquisition candidate duplicates an observed point");

  Eigen::VectorXd best = cand[start];
  double best_score = scores[start];
  Eigen::VectorXd step = Eigen::VectorXd::Constant(dim, 0.1 * (hi - lo));
  for (int s = 0; s < config.refine_steps; ++s) {
    Eigen::VectorXd next = best;
    double next_score = best_score;
    for (int j = 0; j < dim; ++j) {
      for (double sign : {1.0, -1.0}) {
        Eigen::VectorXd trial = best;
        trial[j] = std::clamp(trial[j] + sign * step[j], lo, hi);
        if (trial == best || min_distance(trial, observed) < kMinSeparation) continue;
        const double v = score(trial);
        if (v > next_score) {
          next_score = v;
          next = trial;
        }
      }
    }
    if (next_score > best_score) {
      best = next;
      best_score = next_score;
    } else {
      step *= 0.5;
    }
  }
  return {best, best_score};
}

BoResult run_bo_generic(const Objective& objective, int dim, const latentprior::LatentPrior* prior,
                        const BoConfig& config, const Observer& observer) {
  config.validate();
  if (dim < 1) throw std::invalid_argument("search dimension must be positive");
  std::optional<latentprior::LatentPrior> iso;
  const latentprior::LatentPrior* use_prior = nullptr;
  switch (config.acquisition) {
    case Acquisition::ei: break;
    case Acquisition::ei_isotropic:
      iso = latentprior::LatentPrior::isotropic(dim);
      use_prior = &*iso;
      break;
    case Acquisition::ei_post1:
    case Acquisition::ei_postk:
      if (!prior) throw std::invalid_argument("acquisition " + to_string(config.acquisition) + " requires a prior");
      use_prior = prior;
      break;
  }
  if (use_prior && use_prior->dim() != dim) throw std::invalid_argument("prior dimension does not match the search space");

  const double lo = config.bound_low, hi = config.bound_high;
  std::mt19937_64 rng(derive_seed(config.rng_seed, "bo"));
  BoResult res;
  res.acquisition = to_string(config.acquisition);
  Eigen::MatrixXd observed(0, dim);
  double f_plus = kNegInf;

  auto record = [&](const Eigen::VectorXd& z, double value, const gp::KernelParams* k, double acq) {
    if (value > f_plus) f_plus = value;
    BoRecord r;
    r.iteration = res.eval_count;
    r.z = z;
    r.value = value;
    r.f_plus = f_plus;
    r.amplitude = k ? k->amplitude : 0.0;
    r.length_scales = k ? k->length_scales : Eigen::VectorXd();
    r.acquisition_value = acq;
    observed.conservativeResize(observed.rows() + 1, Eigen::NoChange);
    observed.row(observed.rows() - 1) = z.transpose();
    res.history.push_back(r);
    ++res.eval_count;
    if (observer) observer(res.history.back());
  };

  auto fresh_point = [&](bool from_prior) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      Eigen::VectorXd z = from_prior ? prior_point(*use_prior, lo, hi, rng) : uniform_point(dim, lo, hi, rng);
      if (min_distance(z, observed) >= kMinSeparation) return z;
    }
    throw Error("could not draw a point distinct from the observed set");
  };

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < config.n_init; ++i) {
    const Eigen::VectorXd z = fresh_point(use_prior != nullptr);
    record(z, objective(z), nullptr, nan);
  }

  std::optional<gp::KernelParams> kernel;
  int iteration = 0;
  while (res.eval_count < config.budget) {
    std::vector<int> finite;
    for (int i = 0; i < res.eval_count; ++i)
      if (std::isfinite(res.history[i].value)) finite.push_back(i);
    if (finite.empty()) {
      const Eigen::VectorXd z = fresh_point(false);
      record(z, objective(z), nullptr, nan);
      ++iteration;
      continue;
    }
    const auto m = static_cast<Eigen::Index>(finite.size());
    Eigen::MatrixXd x(m, dim);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      x.row(i) = res.history[finite[i]].z.transpose();
      y[i] = res.history[finite[i]].value;
    }
    TargetScale target;
    target.shift = y.mean();
    const double sd = m > 1 ? std::sqrt((y.array() - target.shift).square().sum() / static_cast<double>(m - 1)) : 0.0;
    target.scale = sd > 0.0 ? sd : 1.0;
    const Eigen::VectorXd ys = (y.array() - target.shift) / target.scale;

    if (m >= 2 && (!kernel || iteration % config.refit_every == 0)) {
      kernel = gp::optimize_hyperparams(x, ys, config.hyper, derive_seed(config.rng_seed, iteration));
    } else if (!kernel) {
      kernel = gp::KernelParams{1.0, Eigen::VectorXd::Constant(dim, 0.25 * (hi - lo)), config.hyper.jitter};
    }
    const auto state = gp::GpState::fit(x, ys, *kernel);
    const Proposal p = propose_next(state, target, use_prior, f_plus, config, observed, rng);
    record(p.z, objective(p.z), &*kernel, std::exp(p.log_acquisition));
    ++iteration;
  }

  int best = 0;
  for (int i = 1; i < res.eval_count; ++i)
    if (res.history[i].value > res.history[best].value) best = i;
  res.best_z = res.history[best].z;
  res.best_value = res.history[best].value;
  return res;
}

BoResult run_bo(const epsim::EcgTrace& measured, const vae::VaeModel& model, const latentprior::LatentPrior* prior,
                const BoConfig& config, const epsim::ForwardModel& forward, const Observer& observer) {
  if (model.arch().input_dim != forward.n_nodes())
    throw std::invalid_argument("VAE input dimension does not match the mesh");
  auto objective = [&](const Eigen::VectorXd& z) { return latent_objective(z, model, measured, forward); };
  BoResult res = run_bo_generic(objective, model.arch().latent_dim, prior, config, observer);
  res.best_theta = model.decode_mean(res.best_z);
  return res;
}

Eigen::VectorXd broadcast_segments(const geometry::MeshGraph& mesh, const Eigen::VectorXd& segment_values) {
  if (segment_values.size() != mesh.n_segments())
    throw std::invalid_argument("one value per segment required");
  Eigen::VectorXd theta(mesh.n_nodes());
  for (int i = 0; i < mesh.n_nodes(); ++i) theta[i] = segment_values[mesh.segment_of()[i]];
  return theta;
}

BoResult run_fs_baseline(const epsim::EcgTrace& measured, const epsim::ForwardModel& forward, BoConfig config,
                         const Observer& observer) {
  const auto& mesh = forward.simulator().mesh();
  const int s = mesh.n_segments();
  if (s > 32) throw std::invalid_argument("fixed-segment baseline supports at most 32 segments");
  config.bound_low = 0.0;
  config.bound_high = 1.0;
  config.acquisition = Acquisition::ei;
  auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd theta = broadcast_segments(mesh, v);
    try {
      return epsim::objective_mismatch(measured, as_span(theta), forward);
    } catch (const UnstableIntegration&) {
      return kNegInf;
    }
  };
  BoResult res = run_bo_generic(objective, s, nullptr, config, observer);
  res.acquisition = "fs";
  res.best_theta = broadcast_segments(mesh, res.best_z);
  return res;
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string record_to_json_line(const BoRecord& r, Acquisition variant) {
  nlohmann::json j{{"iteration", r.iteration},
                   {"z", vec_json(r.z)},
                   {"value", finite_or_null(r.value)},
                   {"failed", !std::isfinite(r.value)},
                   {"f_plus", finite_or_null(r.f_plus)},
                   {"amplitude", r.amplitude},
                   {"length_scales", vec_json(r.length_scales)},
                   {"acquisition_value", finite_or_null(r.acquisition_value)},
                   {"acquisition", to_string(variant)}};
  return j.dump();
}

std::string result_to_json(const BoResult& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : r.history)
    hist.push_back({{"iteration", h.iteration}, {"z", vec_json(h.z)}, {"value", finite_or_null(h.value)}});
  nlohmann::json j{{"acquisition", r.acquisition},
                   {"eval_count", r.eval_count},
                   {"best_value", finite_or_null(r.best_value)},
                   {"best_z", vec_json(r.best_z)},
                   {"history", hist}};
  return j.dump(1) + "\n";
}

}  // namespace vaebo::bayesopt
