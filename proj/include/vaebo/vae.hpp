#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vaebo::vae {

struct VaeArch {
  int input_dim = 256;
  std::vector<int> hidden_dims{512, 512};
  int latent_dim = 2;
};

/// Dense affine map; weight is out x in.
struct DenseLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct LatentPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_var;
};

inline constexpr double kLogVarClamp = 20.0;
inline constexpr double kProbClamp = 1e-7;

/// Affine map between parameter units and the unit interval the Bernoulli
/// likelihood works in: low -> 0, high -> 1. The identity by default.
struct FieldScale {
  double low = 0.0;
  double high = 1.0;

  Eigen::MatrixXd to_unit(const Eigen::MatrixXd& theta) const { return ((theta.array() - low) / (high - low)).matrix(); }
  Eigen::MatrixXd from_unit(const Eigen::MatrixXd& p) const { return (low + (high - low) * p.array()).matrix(); }
  bool is_identity() const noexcept { return low == 0.0 && high == 1.0; }
};

struct TrainingInfo {
  int epochs = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;  // mean loss per epoch
};

/// Sigmoid MLP encoder with (mean, log-variance) heads and a mirrored sigmoid
/// decoder emitting Bernoulli means.
///
/// Layers are stored in file order: encoder hidden layers, mean head,
/// log-variance head, decoder hidden layers (hidden_dims reversed), decoder
/// output layer.
class VaeModel {
 public:
  /// All weights and biases zero.
  explicit VaeModel(VaeArch arch);

  /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static VaeModel initialized(VaeArch arch, std::uint64_t seed);

  const VaeArch& arch() const noexcept { return arch_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  int n_encoder_hidden() const noexcept { return static_cast<int>(arch_.hidden_dims.size()); }
  int mean_head() const noexcept { return n_encoder_hidden(); }
  int log_var_head() const noexcept { return n_encoder_hidden() + 1; }
  int first_decoder_layer() const noexcept { return n_encoder_hidden() + 2; }

  /// Fields are in parameter units and pass through `scale` first.
  LatentPosterior encode(const Eigen::VectorXd& field) const;
  /// Column-wise: fields is input_dim x B; returns (means, log_vars), each latent_dim x B.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> encode_batch(const Eigen::MatrixXd& fields) const;

  /// Decoder expectation mapped back through `scale`; with the identity scale
  /// every entry is strictly inside (0, 1).
  Eigen::VectorXd decode_mean(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& z) const;

  bool all_finite() const;

  FieldScale scale;
  TrainingInfo info;

 private:
  VaeArch arch_;
  std::vector<DenseLayer> layers_;
};

/// mean + exp(log_var / 2) * noise.
Eigen::VectorXd reparameterize(const LatentPosterior& post, const Eigen::VectorXd& noise);

/// KL(N(mean, diag(exp(log_var))) || N(0, I)) in closed form.
double kl_divergence(const LatentPosterior& post);

using Gradients = std::vector<DenseLayer>;

struct LossGrad {
  double loss = 0.0;
  Gradients grad;
};

/// Negative ELBO averaged over the batch, with its gradient. fields is
/// input_dim x B of Bernoulli targets in [0, 1] (unit space, `scale` is not
/// applied); noise is latent_dim x B.
LossGrad elbo_loss(const VaeModel& model, const Eigen::MatrixXd& fields, const Eigen::MatrixXd& noise);

/// Loss only, same definition as elbo_loss.
double elbo_value(const VaeModel& model, const Eigen::MatrixXd& fields, const Eigen::MatrixXd& noise);

struct AdamParams {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 100;
  AdamParams adam;
  std::uint64_t rng_seed = 0;
};

/// Minibatch Adam over rows of `data` (N x input_dim, parameter units mapped
/// through model.scale), reshuffled every epoch.
/// Throws NonFiniteLoss naming the epoch and batch on divergence.
VaeModel train(VaeModel model, const Eigen::MatrixXd& data, const TrainConfig& config);

// Weights file: "VAE1", version byte, u32 input_dim, u32 n_hidden, u32 hidden
// dims..., u32 latent_dim, then each layer's row-major f64 weight followed by
// its f64 bias, in layer order.
inline constexpr std::uint8_t kWeightsVersion = 1;
std::vector<std::uint8_t> to_bytes(const VaeModel& model);
VaeModel from_bytes(const std::vector<std::uint8_t>& bytes);
void save(const VaeModel& model, const std::string& path);
VaeModel load(const std::string& path);

}  // namespace vaebo::vae
