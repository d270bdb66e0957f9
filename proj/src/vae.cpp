#include "vaebo/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "vaebo/error.hpp"
#include "vaebo/fileutil.hpp"

namespace vaebo::vae {

namespace {

void check_arch(const VaeArch& a) {
  if (a.input_dim < 1 || a.latent_dim < 1) throw std::invalid_argument("VAE dimensions must be positive");
  if (a.hidden_dims.empty()) throw std::invalid_argument("VAE needs at least one hidden layer");
  for (int h : a.hidden_dims)
    if (h < 1) throw std::invalid_argument("VAE hidden dimensions must be positive");
}

// (in, out) for every layer in storage order.
std::vector<std::pair<int, int>> layer_shapes(const VaeArch& a) {
  std::vector<std::pair<int, int>> s;
  int in = a.input_dim;
  for (int h : a.hidden_dims) {
    s.emplace_back(in, h);
    in = h;
  }
  s.emplace_back(in, a.latent_dim);
  s.emplace_back(in, a.latent_dim);
  in = a.latent_dim;
  for (auto it = a.hidden_dims.rbegin(); it != a.hidden_dims.rend(); ++it) {
    s.emplace_back(in, *it);
    in = *it;
  }
  s.emplace_back(in, a.input_dim);
  return s;
}

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

Eigen::MatrixXd affine(const DenseLayer& l, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd y = l.weight * x;
  y.colwise() += l.bias;
  return y;
}

// Activations kept for the backward pass.
struct Forward {
  std::vector<Eigen::MatrixXd> enc;  // enc[0] = input, enc[k] = k-th hidden output
  Eigen::MatrixXd mean, log_var_raw, log_var, z;
  std::vector<Eigen::MatrixXd> dec;  // dec[0] = z, last = output probabilities
};

Forward forward(const VaeModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& noise) {
  const auto& L = m.layers();
  Forward f;
  f.enc.push_back(x);
  for (int k = 0; k < m.n_encoder_hidden(); ++k) f.enc.push_back(sigmoid(affine(L[k], f.enc.back())));
  f.mean = affine(L[m.mean_head()], f.enc.back());
  f.log_var_raw = affine(L[m.log_var_head()], f.enc.back());
  f.log_var = f.log_var_raw.array().max(-kLogVarClamp).min(kLogVarClamp).matrix();
  f.z = f.mean + ((0.5 * f.log_var.array()).exp() * noise.array()).matrix();
  f.dec.push_back(f.z);
  for (std::size_t k = m.first_decoder_layer(); k < L.size(); ++k) f.dec.push_back(sigmoid(affine(L[k], f.dec.back())));
  return f;
}

void check_batch(const VaeModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& noise) {
  if (x.cols() == 0) throw std::invalid_argument("batch is empty");
  if (x.rows() != m.arch().input_dim) throw std::invalid_argument("batch rows do not match input_dim");
  if (noise.rows() != m.arch().latent_dim || noise.cols() != x.cols())
    throw std::invalid_argument("noise batch shape does not match latent_dim x batch");
  if (!(x.array() >= 0.0).all() || !(x.array() <= 1.0).all())
    throw std::invalid_argument("field values must lie in [0, 1]");
}

double batch_loss(const Forward& f, const Eigen::MatrixXd& x) {
  const auto& p = f.dec.back();
  const Eigen::ArrayXXd pc = p.array().max(kProbClamp).min(1.0 - kProbClamp);
  const double log_lik = (x.array() * pc.log() + (1.0 - x.array()) * (1.0 - pc).log()).sum();
  const double kl =
      -0.5 * (1.0 + f.log_var.array() - f.mean.array().square() - f.log_var.array().exp()).sum();
  return (kl - log_lik) / static_cast<double>(x.cols());
}

}  // namespace

VaeModel::VaeModel(VaeArch arch) : arch_(std::move(arch)) {
  check_arch(arch_);
  for (auto [in, out] : layer_shapes(arch_))
    layers_.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
}

VaeModel VaeModel::initialized(VaeArch arch, std::uint64_t seed) {
  VaeModel m(std::move(arch));
  std::mt19937_64 rng(seed);
  for (auto& l : m.layers_) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j)
      for (Eigen::Index i = 0; i < l.weight.rows(); ++i) l.weight(i, j) = u(rng);
  }
  m.info.seed = seed;
  return m;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> VaeModel::encode_batch(const Eigen::MatrixXd& fields) const {
  if (fields.rows() != arch_.input_dim) throw std::invalid_argument("field length does not match input_dim");
  Eigen::MatrixXd h = scale.is_identity() ? fields : scale.to_unit(fields);
  for (int k = 0; k < n_encoder_hidden(); ++k) h = sigmoid(affine(layers_[k], h));
  Eigen::MatrixXd lv = affine(layers_[log_var_head()], h).array().max(-kLogVarClamp).min(kLogVarClamp).matrix();
  return {affine(layers_[mean_head()], h), std::move(lv)};
}

LatentPosterior VaeModel::encode(const Eigen::VectorXd& field) const {
  auto [m, lv] = encode_batch(field);
  return {m.col(0), lv.col(0)};
}

Eigen::MatrixXd VaeModel::decode_batch(const Eigen::MatrixXd& z) const {
  if (z.rows() != arch_.latent_dim) throw std::invalid_argument("latent vector length does not match latent_dim");
  if (!z.allFinite()) throw std::invalid_argument("latent vector is not finite");
  Eigen::MatrixXd g = z;
  for (std::size_t k = first_decoder_layer(); k < layers_.size(); ++k) g = sigmoid(affine(layers_[k], g));
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon();
  g = g.array().max(lo).min(hi).matrix();
  return scale.is_identity() ? g : scale.from_unit(g);
}

Eigen::VectorXd VaeModel::decode_mean(const Eigen::VectorXd& z) const { return decode_batch(z).col(0); }

bool VaeModel::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

Eigen::VectorXd reparameterize(const LatentPosterior& post, const Eigen::VectorXd& noise) {
  if (noise.size() != post.mean.size() || post.log_var.size() != post.mean.size())
    throw std::invalid_argument("noise length does not match latent_dim");
  return post.mean + ((0.5 * post.log_var.array()).exp() * noise.array()).matrix();
}

double kl_divergence(const LatentPosterior& post) {
  return -0.5 * (1.0 + post.log_var.array() - post.mean.array().square() - post.log_var.array().exp()).sum();
}

double elbo_value(const VaeModel& model, const Eigen::MatrixXd& fields, const Eigen::MatrixXd& noise) {
  check_batch(model, fields, noise);
  return batch_loss(forward(model, fields, noise), fields);
}

LossGrad elbo_loss(const VaeModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& noise) {
  check_batch(model, x, noise);
  const Forward f = forward(model, x, noise);
  const auto& L = model.layers();
  const double inv_b = 1.0 / static_cast<double>(x.cols());

  LossGrad out;
  out.loss = batch_loss(f, x);
  out.grad.resize(L.size());

  // Output logits: d/da of -[x log p + (1-x) log(1-p)] is p - x, zero where p is clamped.
  const auto& p = f.dec.back();
  Eigen::MatrixXd delta =
      ((p.array() - x.array()) * (p.array() >= kProbClamp && p.array() <= 1.0 - kProbClamp).cast<double>() * inv_b)
          .matrix();

  for (int k = static_cast<int>(L.size()) - 1; k >= model.first_decoder_layer(); --k) {
    const auto& input = f.dec[k - model.first_decoder_layer()];
    out.grad[k] = {delta * input.transpose(), delta.rowwise().sum()};
    Eigen::MatrixXd back = L[k].weight.transpose() * delta;
    if (k > model.first_decoder_layer())
      delta = (back.array() * input.array() * (1.0 - input.array())).matrix();
    else
      delta = std::move(back);  // gradient w.r.t. z
  }

  const Eigen::ArrayXXd sd = (0.5 * f.log_var.array()).exp();
  Eigen::MatrixXd d_mean = delta + f.mean * inv_b;
  const Eigen::ArrayXXd in_range =
      (f.log_var_raw.array() >= -kLogVarClamp && f.log_var_raw.array() <= kLogVarClamp).cast<double>();
  Eigen::MatrixXd d_logvar =
      ((delta.array() * noise.array() * 0.5 * sd + 0.5 * (f.log_var.array().exp() - 1.0) * inv_b) * in_range).matrix();

  const auto& h = f.enc.back();
  out.grad[model.mean_head()] = {d_mean * h.transpose(), d_mean.rowwise().sum()};
  out.grad[model.log_var_head()] = {d_logvar * h.transpose(), d_logvar.rowwise().sum()};
  Eigen::MatrixXd dh = L[model.mean_head()].weight.transpose() * d_mean +
                       L[model.log_var_head()].weight.transpose() * d_logvar;

  for (int k = model.n_encoder_hidden() - 1; k >= 0; --k) {
    const auto& act = f.enc[k + 1];
    Eigen::MatrixXd d = (dh.array() * act.array() * (1.0 - act.array())).matrix();
    out.grad[k] = {d * f.enc[k].transpose(), d.rowwise().sum()};
    if (k > 0) dh = L[k].weight.transpose() * d;
  }
  return out;
}

VaeModel train(VaeModel model, const Eigen::MatrixXd& data, const TrainConfig& cfg) {
  if (data.cols() != model.arch().input_dim) throw std::invalid_argument("dataset width does not match input_dim");
  if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (cfg.epochs == 0) return model;
  if (data.rows() == 0) throw std::invalid_argument("dataset is empty");

  const auto& a = cfg.adam;
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<DenseLayer> m1, m2;
  for (const auto& l : model.layers()) {
    m1.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    m2.push_back(m1.back());
  }
  constexpr double kUnitSlack = 1e-6;  // f32 storage round trip
  Eigen::MatrixXd data_t = model.scale.to_unit(data.transpose());
  if ((data_t.array() < -kUnitSlack).any() || (data_t.array() > 1.0 + kUnitSlack).any())
    throw std::invalid_argument("training data falls outside the model's field scale");
  data_t = data_t.array().max(0.0).min(1.0).matrix();
  std::vector<int> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), 0);
  const int latent = model.arch().latent_dim;
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      Eigen::MatrixXd x(data_t.rows(), static_cast<Eigen::Index>(bsz));
      for (std::size_t b = 0; b < bsz; ++b) x.col(b) = data_t.col(order[start + b]);
      Eigen::MatrixXd noise(latent, static_cast<Eigen::Index>(bsz));
      for (Eigen::Index j = 0; j < noise.cols(); ++j)
        for (int i = 0; i < latent; ++i) noise(i, j) = normal(rng);

      LossGrad lg = elbo_loss(model, x, noise);
      if (!std::isfinite(lg.loss)) throw NonFiniteLoss(epoch, batch_index);
      epoch_loss += lg.loss * static_cast<double>(bsz);

      ++step;
      const double c1 = 1.0 - std::pow(a.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(a.beta2, static_cast<double>(step));
      auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& g) {
        mom1 = a.beta1 * mom1 + (1.0 - a.beta1) * g;
        mom2 = (a.beta2 * mom2.array() + (1.0 - a.beta2) * g.array().square()).matrix();
        param.array() -= a.learning_rate * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + a.epsilon);
      };
      for (std::size_t k = 0; k < model.layers().size(); ++k) {
        update(model.layers()[k].weight, m1[k].weight, m2[k].weight, lg.grad[k].weight);
        update(model.layers()[k].bias, m1[k].bias, m2[k].bias, lg.grad[k].bias);
      }
    }
    model.info.loss_history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  model.info.epochs += cfg.epochs;
  model.info.final_loss = model.info.loss_history.back();
  model.info.seed = cfg.rng_seed;
  return model;
}

std::vector<std::uint8_t> to_bytes(const VaeModel& model) {
  const auto& a = model.arch();
  io::ByteWriter w;
  w.raw("VAE1");
  w.u8(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(a.input_dim));
  w.u32(static_cast<std::uint32_t>(a.hidden_dims.size()));
  for (int h : a.hidden_dims) w.u32(static_cast<std::uint32_t>(h));
  w.u32(static_cast<std::uint32_t>(a.latent_dim));
  for (const auto& l : model.layers()) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.f64(l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias[i]);
  }
  return w.bytes();
}

VaeModel from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "VAE weights");
  if (r.raw(4) != "VAE1") throw CorruptFile("VAE weights: bad magic");
  const auto version = r.u8();
  if (version != kWeightsVersion)
    throw VersionMismatch("VAE weights: version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kWeightsVersion) + ")");
  VaeArch a;
  a.input_dim = static_cast<int>(r.u32());
  const auto n_hidden = r.u32();
  if (n_hidden == 0 || n_hidden > 64) throw CorruptFile("VAE weights: implausible hidden layer count");
  a.hidden_dims.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) a.hidden_dims.push_back(static_cast<int>(r.u32()));
  a.latent_dim = static_cast<int>(r.u32());
  std::uint64_t expected = 0;
  for (auto [in, out] : layer_shapes(a)) expected += (static_cast<std::uint64_t>(in) + 1) * out * 8;
  if (expected != r.remaining()) {
    if (expected > r.remaining()) throw CorruptFile("VAE weights: truncated file");
    throw CorruptFile("VAE weights: payload size does not match header");
  }
  VaeModel m(a);
  for (auto& l : m.layers()) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = r.f64();
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = r.f64();
  }
  if (!m.all_finite()) throw CorruptFile("VAE weights: non-finite values");
  return m;
}

void save(const VaeModel& model, const std::string& path) { io::write_atomic(path, to_bytes(model)); }

VaeModel load(const std::string& path) { return from_bytes(io::read_bytes(path)); }

}  // namespace vaebo::vae
