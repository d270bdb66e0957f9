#include "vaebo/latentprior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"

namespace vaebo::latentprior {

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::isotropic: return "isotropic";
    case PriorKind::single: return "single";
    case PriorKind::mixture_k: return "mixture_k";
  }
  return "unknown";
}

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "isotropic") return PriorKind::isotropic;
  if (s == "single") return PriorKind::single;
  if (s == "mixture_k") return PriorKind::mixture_k;
  throw std::invalid_argument("unknown prior kind '" + s + "'");
}

Eigen::MatrixXd regularize(const Eigen::MatrixXd& cov, double floor) {
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= floor) return sym;
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  Eigen::MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

LatentPrior::LatentPrior(PriorKind kind, std::vector<GaussianComponent> components)
    : kind_(kind), components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("prior needs at least one component");
  const auto d = components_.front().mean.size();
  if (d < 1) throw std::invalid_argument("prior dimension must be positive");
  double total = 0.0;
  for (auto& c : components_) {
    if (c.mean.size() != d || c.cov.rows() != d || c.cov.cols() != d)
      throw std::invalid_argument("prior components have inconsistent dimensions");
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) throw std::invalid_argument("component weights must be positive");
    if (!c.mean.allFinite() || !c.cov.allFinite()) throw std::invalid_argument("component parameters must be finite");
    c.cov = regularize(c.cov);
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-10) throw std::invalid_argument("component weights must sum to 1");
  if ((kind_ == PriorKind::single || kind_ == PriorKind::isotropic) && components_.size() != 1)
    throw std::invalid_argument("single and isotropic priors have exactly one component");
  if (kind_ == PriorKind::isotropic) {
    const auto& c = components_.front();
    if (!c.mean.isZero(0.0) || !c.cov.isIdentity(0.0))
      throw std::invalid_argument("isotropic prior must be N(0, I)");
  }
  double run = 0.0;
  for (const auto& c : components_) {
    factors_.emplace_back(c.cov);
    if (factors_.back().info() != Eigen::Success) throw ConditioningError("component covariance is not SPD");
    run += c.weight;
    cumulative_.push_back(run);
  }
}

LatentPrior LatentPrior::isotropic(int dim) {
  return LatentPrior(PriorKind::isotropic,
                     {GaussianComponent{1.0, Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Identity(dim, dim)}});
}

double LatentPrior::mahalanobis_sq(int i, const Eigen::VectorXd& z) const {
  const Eigen::VectorXd diff = z - components_.at(i).mean;
  return factors_[i].matrixL().solve(diff).squaredNorm();
}

Eigen::VectorXd LatentPrior::sample_impl(double u, const Eigen::VectorXd& normal) const {
  const double target = u * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
  const int i = std::min<int>(static_cast<int>(it - cumulative_.begin()), size() - 1);
  return components_[i].mean + factors_[i].matrixL() * normal;
}

LatentPrior aggregate_posterior(const vae::VaeModel& model, const Eigen::MatrixXd& fields) {
  if (fields.rows() == 0) throw std::invalid_argument("cannot aggregate over an empty dataset");
  const auto [means, log_vars] = model.encode_batch(fields.transpose());
  const double w = 1.0 / static_cast<double>(fields.rows());
  std::vector<GaussianComponent> comps;
  comps.reserve(fields.rows());
  for (Eigen::Index i = 0; i < fields.rows(); ++i)
    comps.push_back({w, means.col(i), log_vars.col(i).array().exp().matrix().asDiagonal()});
  return LatentPrior(PriorKind::mixture_k, std::move(comps));
}

LatentPrior subsample(const LatentPrior& prior, int cap, std::uint64_t seed) {
  if (cap < 1) throw std::invalid_argument("subsample cap must be positive");
  if (prior.size() <= cap) return prior;
  std::vector<int> idx(prior.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<GaussianComponent> comps;
  double total = 0.0;
  for (int i : idx) {
    comps.push_back(prior.components()[i]);
    total += comps.back().weight;
  }
  for (auto& c : comps) c.weight /= total;
  return LatentPrior(prior.kind(), std::move(comps));
}

GaussianComponent moment_match(const std::vector<GaussianComponent>& comps) {
  if (comps.empty()) throw std::invalid_argument("moment match of an empty set");
  const auto d = comps.front().mean.size();
  double total = 0.0;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& c : comps) {
    total += c.weight;
    mean += c.weight * c.mean;
  }
  mean /= total;
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
  for (const auto& c : comps) second += c.weight * (c.cov + c.mean * c.mean.transpose());
  second /= total;
  return {total, mean, regularize(second - mean * mean.transpose())};
}

LatentPrior moment_match_single(const LatentPrior& prior) {
  if (prior.size() == 1) {
    auto c = prior.components().front();
    return LatentPrior(prior.kind() == PriorKind::isotropic ? PriorKind::isotropic : PriorKind::single, {c});
  }
  GaussianComponent c = moment_match(prior.components());
  c.weight = 1.0;
  return LatentPrior(PriorKind::single, {c});
}

double kl_gaussians(const GaussianComponent& a, const GaussianComponent& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || b.cov.rows() != d)
    throw std::invalid_argument("kl_gaussians: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> lb(b.cov), la(a.cov);
  if (lb.info() != Eigen::Success || la.info() != Eigen::Success)
    throw ConditioningError("kl_gaussians: covariance is not positive definite");
  const Eigen::MatrixXd lb_inv_la = lb.matrixL().solve(Eigen::MatrixXd(la.matrixL()));
  const double trace = lb_inv_la.squaredNorm();
  const double maha = lb.matrixL().solve(b.mean - a.mean).squaredNorm();
  const double logdet_b = 2.0 * Eigen::MatrixXd(lb.matrixL()).diagonal().array().log().sum();
  const double logdet_a = 2.0 * Eigen::MatrixXd(la.matrixL()).diagonal().array().log().sum();
  return std::max(0.0, 0.5 * (trace + maha - static_cast<double>(d) + logdet_b - logdet_a));
}

namespace {

std::vector<int> weighted_distinct(const std::vector<GaussianComponent>& comps, int k, std::mt19937_64& rng) {
  std::vector<double> w(comps.size());
  for (std::size_t i = 0; i < comps.size(); ++i) w[i] = comps[i].weight;
  std::vector<int> picked;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int j = 0; j < k; ++j) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double r = u(rng) * total;
    int chosen = -1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      chosen = static_cast<int>(i);
      r -= w[i];
      if (r < 0.0) break;
    }
    picked.push_back(chosen);
    w[chosen] = 0.0;
  }
  return picked;
}

}  // namespace

KMeansResult reduce_kmeans(const LatentPrior& prior, int k, int max_iters, std::uint64_t seed) {
  const int n = prior.size();
  if (k <= 0) throw std::invalid_argument("k must be positive");
  if (k > n) throw std::invalid_argument("k exceeds the number of components");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be positive");
  const auto& comps = prior.components();

  std::mt19937_64 rng(seed);
  std::vector<GaussianComponent> centroids;
  for (int i : weighted_distinct(comps, k, rng)) centroids.push_back(comps[i]);

  KMeansResult res{prior, std::vector<int>(n, -1), {}, 0};
  std::vector<double> div(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<int> assign(n);
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = kl_gaussians(comps[i], centroids[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
      div[i] = best;
    }
    // Re-seed empty clusters with the worst-fitting component of a cluster
    // that can spare one.
    std::vector<int> counts(k, 0);
    for (int a : assign) ++counts[a];
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int worst = -1;
      for (int i = 0; i < n; ++i)
        if (counts[assign[i]] > 1 && (worst < 0 || div[i] > div[worst])) worst = i;
      if (worst < 0) break;
      --counts[assign[worst]];
      assign[worst] = c;
      ++counts[c];
      div[worst] = 0.0;
    }

    std::vector<std::vector<GaussianComponent>> members(k);
    for (int i = 0; i < n; ++i) members[assign[i]].push_back(comps[i]);
    for (int c = 0; c < k; ++c)
      if (!members[c].empty()) centroids[c] = moment_match(members[c]);

    double obj = 0.0;
    for (int i = 0; i < n; ++i) obj += comps[i].weight * kl_gaussians(comps[i], centroids[assign[i]]);
    res.objective.push_back(obj);
    res.iterations = iter + 1;
    const bool unchanged = assign == res.assignment;
    res.assignment = std::move(assign);
    if (unchanged) break;
  }

  double total = 0.0;
  for (const auto& c : centroids) total += c.weight;
  std::vector<GaussianComponent> out;
  for (auto& c : centroids) out.push_back({c.weight / total, c.mean, c.cov});
  res.prior = LatentPrior(PriorKind::mixture_k, std::move(out));
  return res;
}

double epsilon_penalty(const LatentPrior& prior, const Eigen::VectorXd& z, double f_plus) {
  if (f_plus > 0.0) throw std::invalid_argument("epsilon_penalty requires f_plus <= 0");
  if (z.size() != prior.dim()) throw std::invalid_argument("latent vector dimension does not match prior");
  double q = 0.0;
  for (int i = 0; i < prior.size(); ++i) q += prior.components()[i].weight * prior.mahalanobis_sq(i, z);
  return -f_plus * q;
}

std::string prior_to_json_text(const LatentPrior& prior) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : prior.components()) {
    std::vector<double> cov;
    for (Eigen::Index i = 0; i < c.cov.rows(); ++i)
      for (Eigen::Index j = 0; j < c.cov.cols(); ++j) cov.push_back(c.cov(i, j));
    comps.push_back({{"weight", c.weight},
                     {"mean", std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size())},
                     {"cov", cov}});
  }
  nlohmann::json doc{{"kind", to_string(prior.kind())}, {"dim", prior.dim()}, {"components", comps}};
  return doc.dump(1) + "\n";
}

LatentPrior prior_from_json_text(const std::string& text) {
  try {
    const auto doc = nlohmann::json::parse(text);
    const auto kind = prior_kind_from_string(doc.at("kind").get<std::string>());
    std::vector<GaussianComponent> comps;
    for (const auto& c : doc.at("components")) {
      const auto mean = c.at("mean").get<std::vector<double>>();
      const auto cov = c.at("cov").get<std::vector<double>>();
      const auto d = static_cast<Eigen::Index>(mean.size());
      if (static_cast<Eigen::Index>(cov.size()) != d * d) throw CorruptFile("prior file: covariance size mismatch");
      GaussianComponent g{c.at("weight").get<double>(), Eigen::Map<const Eigen::VectorXd>(mean.data(), d),
                          Eigen::MatrixXd(d, d)};
      for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j) g.cov(i, j) = cov[i * d + j];
      comps.push_back(std::move(g));
    }
    return LatentPrior(kind, std::move(comps));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("prior file: ") + e.what());
  }
}

void save_prior(const LatentPrior& prior, const std::string& path) { io::write_atomic(path, prior_to_json_text(prior)); }

LatentPrior load_prior(const std::string& path) { return prior_from_json_text(io::read_text(path)); }

}  // namespace vaebo::latentprior
