// SPDX-License-Identifier: Apache-2.0
#pragma once

// Mean-field Gaussian Bayesian classifier built from fully connected layers.
// Every weight w has a posterior N(mu, exp(s)^2); each forward pass draws a
// fresh set of weights. Deterministic layers hold point weights and form the
// "twin" network used to compare against an ordinary DNN.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bater/dataset.hpp"
#include "bater/graph.hpp"
#include "bater/rng.hpp"
#include "bater/tensor.hpp"

namespace bater {

/// Posterior means and log standard deviations of one weight or bias block.
struct VariationalLayerParams {
  Tensor mu;
  Tensor log_std;
};

enum class LayerKind { variational, deterministic };
enum class Activation { relu, identity };

/// Affine layer `x * W + b` followed by an activation. For deterministic
/// layers `log_std` is kept at the right shape but never read.
struct DenseLayer {
  LayerKind kind = LayerKind::variational;
  Activation activation = Activation::relu;
  VariationalLayerParams weight;  // [inputs, outputs]
  VariationalLayerParams bias;    // [outputs]

  std::size_t inputs() const noexcept { return weight.mu.rows(); }
  std::size_t outputs() const noexcept { return weight.mu.cols(); }
};

struct ModelSpec {
  std::size_t input_dim = 784;
  std::vector<std::size_t> hidden{256, 128};
  int class_count = 10;
  LayerKind kind = LayerKind::variational;
  double prior_std = 1.0;
  double init_log_std = -3.0;
};

class BnnModel {
 public:
  /// Validates that layer widths chain and the last layer emits `class_count` logits.
  BnnModel(std::vector<DenseLayer> layers, int class_count, double prior_std);

  /// mu ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), s = spec.init_log_std, biases mu = 0.
  static BnnModel initialize(const ModelSpec& spec, Rng& rng);

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  int class_count() const noexcept { return class_count_; }
  double prior_std() const noexcept { return prior_std_; }
  std::size_t input_dim() const noexcept { return layers_.front().inputs(); }
  bool stochastic() const noexcept;

  /// Tap points from the input side: each layer's affine output, then its
  /// ReLU output when it has one, then the softmax of the logits.
  std::size_t tap_count() const noexcept { return taps_.size(); }
  std::size_t tap_width(std::size_t tap) const;
  const std::string& tap_name(std::size_t tap) const;
  /// Index of the logit tap.
  std::size_t logit_tap() const noexcept { return taps_.size() - 2; }

  /// exp(log_std), cached at construction.
  const Tensor& weight_std(std::size_t layer) const { return weight_std_.at(layer); }
  const Tensor& bias_std(std::size_t layer) const { return bias_std_.at(layer); }

  /// Same means with every layer made deterministic (posterior variance 0).
  BnnModel deterministic_twin() const;

  std::size_t parameter_count() const noexcept;

 private:
  std::vector<DenseLayer> layers_;
  int class_count_;
  double prior_std_;
  struct Tap {
    std::string name;
    std::size_t width;
  };
  std::vector<Tap> taps_;
  std::vector<Tensor> weight_std_;
  std::vector<Tensor> bias_std_;
};

/// w = mu + exp(s) * eps with eps ~ N(0, 1) i.i.d.
Tensor sample_weights(const VariationalLayerParams& params, Rng& rng);

/// One concrete set of weights for every layer.
struct NetworkDraw {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
};

/// Deterministic layers copy their means and consume no randomness.
NetworkDraw sample_network(const BnnModel& model, Rng& rng);
NetworkDraw mean_network(const BnnModel& model);

/// Activations at every tap for the rows of x under one draw.
std::vector<Tensor> forward_taps(const BnnModel& model, const NetworkDraw& draw, const Tensor& x);
Tensor forward_logits(const BnnModel& model, const NetworkDraw& draw, const Tensor& x);
/// Appends the forward pass to `graph`, with the drawn weights as constants.
NodeRef record_logits(Graph& graph, NodeRef x, const BnnModel& model, const NetworkDraw& draw);

/// Closed-form KL( N(mu, exp(s)^2) || N(0, prior_std^2) ), summed over coordinates.
double kl_to_prior(const VariationalLayerParams& params, double prior_std);
/// Sum over the variational blocks of a model.
double model_kl(const BnnModel& model);

/// Standard-normal noise for one draw of every variational block.
struct NetworkNoise {
  std::vector<Tensor> weight_eps;
  std::vector<Tensor> bias_eps;
};
NetworkNoise draw_noise(const BnnModel& model, Rng& rng);

/// Gradient blocks in layer order; log-std blocks of deterministic layers stay zero.
struct ParameterGradients {
  std::vector<Tensor> weight_mu, weight_log_std, bias_mu, bias_log_std;
};

struct ElboResult {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double kl = 0.0;
  ParameterGradients grad;
};

/// Mean cross-entropy averaged over the given noise draws plus kl_scale * KL,
/// with reparameterized gradients for every mu and s.
ElboResult elbo_with_noise(const Tensor& x, std::span<const int> labels, const BnnModel& model,
                           std::span<const NetworkNoise> noise, double kl_scale);
/// Draws `mc_samples` noise sets from `rng` and calls elbo_with_noise.
ElboResult elbo_loss(const Tensor& x, std::span<const int> labels, const BnnModel& model, Rng& rng,
                     double kl_scale, int mc_samples = 1);

/// How the KL term is weighted against the mean minibatch cross-entropy.
enum class KlScaleMode {
  per_minibatch,  // 1 / number_of_minibatches
  per_example,    // 1 / training_set_size
  none,
};

struct TrainConfig {
  int epochs = 20;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// Final learning rate as a fraction of the initial one under cosine decay; 1 disables decay.
  double final_lr_fraction = 1.0;
  KlScaleMode kl_scale_mode = KlScaleMode::per_minibatch;
  /// Multiplies the mode's KL weight.
  double kl_weight = 1.0;
  int mc_samples_per_step = 1;
  std::uint64_t seed = 1;
};

struct TrainResult {
  BnnModel model;
  std::vector<double> epoch_loss;
};

/// Minibatch SGD with momentum on the negated ELBO. Bitwise reproducible for
/// a fixed seed; throws NumericError naming the epoch and step when the loss
/// stops being finite.
TrainResult train(const LabeledSet& data, const ModelSpec& spec, const TrainConfig& config);

/// How a class label is read off the stochastic model: softmax averaged over
/// `passes` draws. Draws are shared by the rows of one chunk and come from the
/// stream (seed, chunk index), so results do not depend on the worker count.
struct PredictionRule {
  int passes = 4;
  std::uint64_t seed = 0;
  std::size_t chunk = 128;
};

struct Prediction {
  int label = 0;
  std::vector<double> probabilities;
};

/// Softmax averaged over `passes` draws; ties go to the lowest class index.
Prediction predict(const BnnModel& model, std::span<const double> x, int passes, Rng& rng);

struct BatchPrediction {
  std::vector<int> labels;
  Tensor probabilities;
};
BatchPrediction predict_batch(const BnnModel& model, const Tensor& x, const PredictionRule& rule);
double accuracy(const BnnModel& model, const LabeledSet& data, const PredictionRule& rule);

/// Activation at `tap` for one draw; throws IndexError for an invalid tap.
Tensor hidden_activations(const BnnModel& model, const Tensor& x, std::size_t tap, Rng& rng);

/// `passes` draws over the rows of x: result[pass][tap] has shape [rows, width].
std::vector<std::vector<Tensor>> sample_taps(const BnnModel& model, const Tensor& x, int passes, Rng& rng);

inline constexpr int kModelFormatVersion = 1;

/// Writes `<stem>.manifest` and `<stem>.bin` (per layer: mu of weight and bias,
/// then s of weight and bias for variational layers).
void save_model(const BnnModel& model, const std::filesystem::path& stem,
                const std::vector<std::pair<std::string, std::string>>& extra = {});
BnnModel load_model(const std::filesystem::path& stem);

}  // namespace bater
