// SPDX-License-Identifier: Apache-2.0
#include "bater/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/kernels.hpp"
#include "bater/parallel.hpp"

namespace bater {
namespace {

Tensor exp_of(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = std::exp(v);
  return out;
}

const char* kind_name(LayerKind kind) { return kind == LayerKind::variational ? "variational" : "deterministic"; }
const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

}  // namespace

BnnModel::BnnModel(std::vector<DenseLayer> layers, int class_count, double prior_std)
    : layers_(std::move(layers)), class_count_(class_count), prior_std_(prior_std) {
  if (layers_.empty()) throw ContractError("a model needs at least one layer");
  if (class_count_ < 2) throw ContractError("class_count must be at least 2");
  if (!(prior_std_ > 0.0)) throw ContractError("prior_std must be positive");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weight.mu.rank() != 2 || !layer.weight.mu.same_shape(layer.weight.log_std))
      throw DimensionError("layer " + std::to_string(l) + ": weight mu/log_std shapes differ");
    if (layer.bias.mu.rank() != 1 || layer.bias.mu.size() != layer.outputs() ||
        !layer.bias.mu.same_shape(layer.bias.log_std))
      throw DimensionError("layer " + std::to_string(l) + ": bias shape does not match weight");
    if (l > 0 && layers_[l - 1].outputs() != layer.inputs())
      throw DimensionError("layer " + std::to_string(l) + " expects " + std::to_string(layer.inputs()) +
                           " inputs but previous layer emits " + std::to_string(layers_[l - 1].outputs()));
    if (!layer.weight.mu.all_finite() || !layer.weight.log_std.all_finite() || !layer.bias.mu.all_finite() ||
        !layer.bias.log_std.all_finite())
      throw NumericError("layer " + std::to_string(l) + " holds non-finite parameters");
    const std::string suffix = std::to_string(l + 1);
    const bool last = l + 1 == layers_.size();
    taps_.push_back({last ? std::string("logits") : "dense" + suffix, layer.outputs()});
    if (layer.activation == Activation::relu) taps_.push_back({"relu" + suffix, layer.outputs()});
    weight_std_.push_back(exp_of(layer.weight.log_std));
    bias_std_.push_back(exp_of(layer.bias.log_std));
  }
  if (layers_.back().outputs() != static_cast<std::size_t>(class_count_))
    throw DimensionError("final layer width " + std::to_string(layers_.back().outputs()) + " != class_count " +
                         std::to_string(class_count_));
  if (layers_.back().activation != Activation::identity) throw ContractError("the final layer must emit raw logits");
  taps_.push_back({"softmax", layers_.back().outputs()});
}

BnnModel BnnModel::initialize(const ModelSpec& spec, Rng& rng) {
  std::vector<std::size_t> widths{spec.input_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(static_cast<std::size_t>(spec.class_count));
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> init(-bound, bound);
    DenseLayer layer;
    layer.kind = spec.kind;
    layer.activation = l + 2 == widths.size() ? Activation::identity : Activation::relu;
    layer.weight.mu = Tensor(Shape{in, out});
    for (double& v : layer.weight.mu.data()) v = init(rng);
    layer.weight.log_std = Tensor(Shape{in, out}, spec.init_log_std);
    layer.bias.mu = Tensor(Shape{out}, 0.0);
    layer.bias.log_std = Tensor(Shape{out}, spec.init_log_std);
    layers.push_back(std::move(layer));
  }
  return BnnModel(std::move(layers), spec.class_count, spec.prior_std);
}

bool BnnModel::stochastic() const noexcept {
  return std::any_of(layers_.begin(), layers_.end(),
                     [](const DenseLayer& l) { return l.kind == LayerKind::variational; });
}

std::size_t BnnModel::tap_width(std::size_t tap) const {
  if (tap >= taps_.size())
    throw IndexError("tap " + std::to_string(tap) + " outside [0, " + std::to_string(taps_.size()) + ")");
  return taps_[tap].width;
}

const std::string& BnnModel::tap_name(std::size_t tap) const {
  if (tap >= taps_.size())
    throw IndexError("tap " + std::to_string(tap) + " outside [0, " + std::to_string(taps_.size()) + ")");
  return taps_[tap].name;
}

BnnModel BnnModel::deterministic_twin() const {
  auto layers = layers_;
  for (auto& layer : layers) layer.kind = LayerKind::deterministic;
  return BnnModel(std::move(layers), class_count_, prior_std_);
}

std::size_t BnnModel::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.weight.mu.size() + l.bias.mu.size();
  return total;
}

Tensor sample_weights(const VariationalLayerParams& params, Rng& rng) {
  if (!params.mu.same_shape(params.log_std)) throw DimensionError("mu and log_std shapes differ");
  Tensor eps(params.mu.shape());
  fill_normal(rng, eps.data());
  const Tensor sigma = exp_of(params.log_std);
  Tensor out(params.mu.shape());
  kernels::reparameterize(params.mu.raw(), sigma.raw(), eps.raw(), out.raw(), out.size());
  return out;
}

NetworkDraw sample_network(const BnnModel& model, Rng& rng) {
  NetworkDraw draw;
  const auto& layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.kind == LayerKind::deterministic) {
      draw.weights.push_back(layer.weight.mu);
      draw.biases.push_back(layer.bias.mu);
      continue;
    }
    Tensor w(layer.weight.mu.shape());
    fill_normal(rng, w.data());
    kernels::reparameterize(layer.weight.mu.raw(), model.weight_std(l).raw(), w.raw(), w.raw(), w.size());
    Tensor b(layer.bias.mu.shape());
    fill_normal(rng, b.data());
    kernels::reparameterize(layer.bias.mu.raw(), model.bias_std(l).raw(), b.raw(), b.raw(), b.size());
    draw.weights.push_back(std::move(w));
    draw.biases.push_back(std::move(b));
  }
  return draw;
}

NetworkDraw mean_network(const BnnModel& model) {
  NetworkDraw draw;
  for (const auto& layer : model.layers()) {
    draw.weights.push_back(layer.weight.mu);
    draw.biases.push_back(layer.bias.mu);
  }
  return draw;
}

namespace {

void check_input(const BnnModel& model, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != model.input_dim())
    throw DimensionError("model expects [n," + std::to_string(model.input_dim()) + "] input, got " +
                         shape_string(x.shape()));
}

void relu_inplace(Tensor& t) {
  for (double& v : t.data()) v = v > 0.0 ? v : 0.0;
}

}  // namespace

std::vector<Tensor> forward_taps(const BnnModel& model, const NetworkDraw& draw, const Tensor& x) {
  check_input(model, x);
  std::vector<Tensor> taps;
  taps.reserve(model.tap_count());
  Tensor h = x;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    h = affine_forward(h, draw.weights[l], draw.biases[l]);
    taps.push_back(h);
    if (model.layers()[l].activation == Activation::relu) {
      relu_inplace(h);
      taps.push_back(h);
    }
  }
  taps.push_back(softmax_rows(h));
  return taps;
}

Tensor forward_logits(const BnnModel& model, const NetworkDraw& draw, const Tensor& x) {
  check_input(model, x);
  Tensor h = x;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    h = affine_forward(h, draw.weights[l], draw.biases[l]);
    if (model.layers()[l].activation == Activation::relu) relu_inplace(h);
  }
  return h;
}

NodeRef record_logits(Graph& graph, NodeRef x, const BnnModel& model, const NetworkDraw& draw) {
  NodeRef h = x;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    h = graph.affine(h, graph.constant(draw.weights[l]), graph.constant(draw.biases[l]));
    if (model.layers()[l].activation == Activation::relu) h = graph.relu(h);
  }
  return h;
}

double kl_to_prior(const VariationalLayerParams& params, double prior_std) {
  if (!(prior_std > 0.0)) throw ContractError("prior_std must be positive");
  if (!params.mu.same_shape(params.log_std)) throw DimensionError("mu and log_std shapes differ");
  const double prior_var = prior_std * prior_std;
  const double log_prior = std::log(prior_std);
  double total = 0.0;
  for (std::size_t i = 0; i < params.mu.size(); ++i) {
    const double s = params.log_std[i];
    const double mu = params.mu[i];
    total += log_prior - s + (std::exp(2.0 * s) + mu * mu) / (2.0 * prior_var) - 0.5;
  }
  return total;
}

double model_kl(const BnnModel& model) {
  double total = 0.0;
  for (const auto& layer : model.layers()) {
    if (layer.kind != LayerKind::variational) continue;
    total += kl_to_prior(layer.weight, model.prior_std()) + kl_to_prior(layer.bias, model.prior_std());
  }
  return total;
}

NetworkNoise draw_noise(const BnnModel& model, Rng& rng) {
  NetworkNoise noise;
  for (const auto& layer : model.layers()) {
    if (layer.kind != LayerKind::variational) {
      noise.weight_eps.emplace_back();
      noise.bias_eps.emplace_back();
      continue;
    }
    Tensor w(layer.weight.mu.shape());
    fill_normal(rng, w.data());
    Tensor b(layer.bias.mu.shape());
    fill_normal(rng, b.data());
    noise.weight_eps.push_back(std::move(w));
    noise.bias_eps.push_back(std::move(b));
  }
  return noise;
}

namespace {

// Graph form of kl_to_prior so the KL gradient comes from the same tape.
NodeRef record_kl(Graph& graph, NodeRef mu, NodeRef log_std, std::size_t count, double prior_std) {
  const double prior_var = prior_std * prior_std;
  NodeRef var = graph.exp(graph.scale(log_std, 2.0));
  NodeRef quad = graph.scale(graph.add(var, graph.mul(mu, mu)), 1.0 / (2.0 * prior_var));
  NodeRef per_coord = graph.sub(quad, log_std);
  return graph.shift(graph.reduce_sum(per_coord), static_cast<double>(count) * (std::log(prior_std) - 0.5));
}

}  // namespace

ElboResult elbo_with_noise(const Tensor& x, std::span<const int> labels, const BnnModel& model,
                           std::span<const NetworkNoise> noise, double kl_scale) {
  if (labels.empty()) throw ContractError("elbo_loss needs a nonempty batch");
  if (noise.empty()) throw ContractError("elbo_loss needs at least one noise draw");
  const auto& layers = model.layers();
  const std::size_t depth = layers.size();

  Graph graph;
  struct Block {
    NodeRef w_mu, w_s, b_mu, b_s;
  };
  std::vector<Block> blocks(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    blocks[l].w_mu = graph.variable(layers[l].weight.mu);
    blocks[l].b_mu = graph.variable(layers[l].bias.mu);
    if (layers[l].kind == LayerKind::variational) {
      blocks[l].w_s = graph.variable(layers[l].weight.log_std);
      blocks[l].b_s = graph.variable(layers[l].bias.log_std);
    }
  }
  // exp(s) is shared by all noise draws.
  std::vector<NodeRef> w_sigma(depth), b_sigma(depth);
  for (std::size_t l = 0; l < depth; ++l)
    if (layers[l].kind == LayerKind::variational) {
      w_sigma[l] = graph.exp(blocks[l].w_s);
      b_sigma[l] = graph.exp(blocks[l].b_s);
    }

  const NodeRef input = graph.constant(x);
  std::vector<NodeRef> sample_losses;
  for (const auto& eps : noise) {
    NodeRef h = input;
    for (std::size_t l = 0; l < depth; ++l) {
      NodeRef w = blocks[l].w_mu;
      NodeRef b = blocks[l].b_mu;
      if (layers[l].kind == LayerKind::variational) {
        w = graph.add(w, graph.mul(w_sigma[l], graph.constant(eps.weight_eps[l])));
        b = graph.add(b, graph.mul(b_sigma[l], graph.constant(eps.bias_eps[l])));
      }
      h = graph.affine(h, w, b);
      if (layers[l].activation == Activation::relu) h = graph.relu(h);
    }
    sample_losses.push_back(graph.softmax_cross_entropy(h, labels));
  }
  NodeRef data_term = sample_losses.front();
  for (std::size_t k = 1; k < sample_losses.size(); ++k) data_term = graph.add(data_term, sample_losses[k]);
  data_term = graph.scale(data_term, 1.0 / static_cast<double>(sample_losses.size()));

  NodeRef root = data_term;
  std::optional<NodeRef> kl_node;
  for (std::size_t l = 0; l < depth; ++l) {
    if (layers[l].kind != LayerKind::variational) continue;
    NodeRef w_kl = record_kl(graph, blocks[l].w_mu, blocks[l].w_s, layers[l].weight.mu.size(), model.prior_std());
    NodeRef b_kl = record_kl(graph, blocks[l].b_mu, blocks[l].b_s, layers[l].bias.mu.size(), model.prior_std());
    NodeRef layer_kl = graph.add(w_kl, b_kl);
    kl_node = kl_node ? graph.add(*kl_node, layer_kl) : layer_kl;
  }
  if (kl_node && kl_scale != 0.0) root = graph.add(root, graph.scale(*kl_node, kl_scale));

  const Gradients grads = graph.backprop(root);
  ElboResult result;
  result.loss = graph.value(root).item();
  result.cross_entropy = graph.value(data_term).item();
  result.kl = kl_node ? graph.value(*kl_node).item() : 0.0;
  for (std::size_t l = 0; l < depth; ++l) {
    result.grad.weight_mu.push_back(grads.wrt(blocks[l].w_mu));
    result.grad.bias_mu.push_back(grads.wrt(blocks[l].b_mu));
    if (layers[l].kind == LayerKind::variational) {
      result.grad.weight_log_std.push_back(grads.wrt(blocks[l].w_s));
      result.grad.bias_log_std.push_back(grads.wrt(blocks[l].b_s));
    } else {
      result.grad.weight_log_std.emplace_back(layers[l].weight.mu.shape(), 0.0);
      result.grad.bias_log_std.emplace_back(layers[l].bias.mu.shape(), 0.0);
    }
  }
  return result;
}

ElboResult elbo_loss(const Tensor& x, std::span<const int> labels, const BnnModel& model, Rng& rng,
                     double kl_scale, int mc_samples) {
  if (mc_samples < 1) throw ContractError("mc_samples must be at least 1");
  std::vector<NetworkNoise> noise;
  for (int k = 0; k < mc_samples; ++k) noise.push_back(draw_noise(model, rng));
  return elbo_with_noise(x, labels, model, noise, kl_scale);
}

TrainResult train(const LabeledSet& data, const ModelSpec& spec, const TrainConfig& config) {
  if (data.size() == 0) throw ContractError("training set is empty");
  if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate > 0.0) || config.mc_samples_per_step < 1)
    throw ContractError("train config values must be positive");
  if (data.dim() != spec.input_dim)
    throw DimensionError("training inputs have width " + std::to_string(data.dim()) + ", model expects " +
                         std::to_string(spec.input_dim));
  for (int y : data.y)
    if (y < 0 || y >= spec.class_count) throw IndexError("training label " + std::to_string(y) + " out of range");

  auto init_rng = make_stream(config.seed, "init");
  BnnModel model = BnnModel::initialize(spec, init_rng);
  std::vector<DenseLayer> layers = model.layers();

  const std::size_t n = data.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  double kl_scale = 0.0;
  switch (config.kl_scale_mode) {
    case KlScaleMode::per_minibatch:
      kl_scale = 1.0 / static_cast<double>(batches);
      break;
    case KlScaleMode::per_example:
      kl_scale = 1.0 / static_cast<double>(n);
      break;
    case KlScaleMode::none:
      kl_scale = 0.0;
      break;
  }
  kl_scale *= config.kl_weight;

  // Momentum buffers mirror the parameter blocks.
  ParameterGradients velocity;
  for (const auto& layer : layers) {
    velocity.weight_mu.emplace_back(layer.weight.mu.shape(), 0.0);
    velocity.weight_log_std.emplace_back(layer.weight.mu.shape(), 0.0);
    velocity.bias_mu.emplace_back(layer.bias.mu.shape(), 0.0);
    velocity.bias_log_std.emplace_back(layer.bias.mu.shape(), 0.0);
  }
  auto step = [&](Tensor& param, Tensor& vel, const Tensor& grad, double lr) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      vel[i] = config.momentum * vel[i] + grad[i];
      param[i] -= lr * vel[i];
    }
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;
  const double total_steps = static_cast<double>(config.epochs) * static_cast<double>(batches);
  std::size_t global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto shuffle_rng = make_stream(config.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto noise_rng = make_stream(config.seed, "train-noise", static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++global_step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const LabeledSet batch = data.subset(idx);

      const BnnModel current(layers, spec.class_count, spec.prior_std);
      ElboResult result;
      try {
        result = elbo_loss(batch.x, batch.y, current, noise_rng, kl_scale, config.mc_samples_per_step);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " + std::to_string(b) +
                           ": " + e.what());
      }
      if (!std::isfinite(result.loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(b) +
                           " (cross-entropy " + format_double(result.cross_entropy) + ", kl " +
                           format_double(result.kl) + ")");
      loss_sum += result.loss;

      const double progress = static_cast<double>(global_step) / total_steps;
      const double decay = config.final_lr_fraction +
                           (1.0 - config.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      const double lr = config.learning_rate * decay;
      for (std::size_t l = 0; l < layers.size(); ++l) {
        step(layers[l].weight.mu, velocity.weight_mu[l], result.grad.weight_mu[l], lr);
        step(layers[l].bias.mu, velocity.bias_mu[l], result.grad.bias_mu[l], lr);
        if (layers[l].kind == LayerKind::variational) {
          step(layers[l].weight.log_std, velocity.weight_log_std[l], result.grad.weight_log_std[l], lr);
          step(layers[l].bias.log_std, velocity.bias_log_std[l], result.grad.bias_log_std[l], lr);
        }
      }
    }
    epoch_loss.push_back(loss_sum / static_cast<double>(batches));
  }
  return TrainResult{BnnModel(std::move(layers), spec.class_count, spec.prior_std), std::move(epoch_loss)};
}

Prediction predict(const BnnModel& model, std::span<const double> x, int passes, Rng& rng) {
  if (passes < 1) throw ContractError("prediction needs at least one pass");
  const Tensor input(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
  std::vector<double> mean(static_cast<std::size_t>(model.class_count()), 0.0);
  for (int p = 0; p < passes; ++p) {
    const Tensor probs = softmax_rows(forward_logits(model, sample_network(model, rng), input));
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += probs[c];
  }
  for (double& v : mean) v /= passes;
  const auto label = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
  return Prediction{label, std::move(mean)};
}

BatchPrediction predict_batch(const BnnModel& model, const Tensor& x, const PredictionRule& rule) {
  if (rule.passes < 1) throw ContractError("prediction needs at least one pass");
  const std::size_t n = x.rows();
  const auto classes = static_cast<std::size_t>(model.class_count());
  BatchPrediction out{std::vector<int>(n), Tensor(Shape{n, classes}, 0.0)};
  for_each_chunk(n, rule.chunk, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto rng = make_stream(rule.seed, "predict", chunk);
    const Tensor rows = x.slice_rows(begin, end);
    for (int p = 0; p < rule.passes; ++p) {
      const Tensor probs = softmax_rows(forward_logits(model, sample_network(model, rng), rows));
      for (std::size_t i = 0; i < probs.size(); ++i) out.probabilities[begin * classes + i] += probs[i];
    }
    for (std::size_t r = begin; r < end; ++r) {
      auto row = out.probabilities.row(r);
      for (double& v : row) v /= rule.passes;
      out.labels[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  });
  return out;
}

double accuracy(const BnnModel& model, const LabeledSet& data, const PredictionRule& rule) {
  const auto predicted = predict_batch(model, data.x, rule);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predicted.labels[i] == data.y[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Tensor hidden_activations(const BnnModel& model, const Tensor& x, std::size_t tap, Rng& rng) {
  if (tap >= model.tap_count())
    throw IndexError("tap " + std::to_string(tap) + " outside [0, " + std::to_string(model.tap_count()) + ")");
  return std::move(forward_taps(model, sample_network(model, rng), x)[tap]);
}

std::vector<std::vector<Tensor>> sample_taps(const BnnModel& model, const Tensor& x, int passes, Rng& rng) {
  if (passes < 1) throw ContractError("need at least one pass");
  std::vector<std::vector<Tensor>> out;
  out.reserve(static_cast<std::size_t>(passes));
  for (int p = 0; p < passes; ++p) out.push_back(forward_taps(model, sample_network(model, rng), x));
  return out;
}

void save_model(const BnnModel& model, const std::filesystem::path& stem,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  Manifest manifest("bater-model", kModelFormatVersion);
  manifest.set("class_count", model.class_count());
  manifest.set("prior_std", model.prior_std());
  manifest.set("input_dim", model.input_dim());
  manifest.set("layers", static_cast<std::uint64_t>(model.layers().size()));
  BlobWriter blob;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& layer = model.layers()[l];
    std::ostringstream desc;
    desc << kind_name(layer.kind) << ' ' << activation_name(layer.activation) << ' ' << layer.inputs() << ' '
         << layer.outputs();
    manifest.set("layer." + std::to_string(l), desc.str());
    blob.put_doubles(layer.weight.mu.data());
    blob.put_doubles(layer.bias.mu.data());
    if (layer.kind == LayerKind::variational) {
      blob.put_doubles(layer.weight.log_std.data());
      blob.put_doubles(layer.bias.log_std.data());
    }
  }
  for (const auto& [k, v] : extra) manifest.set(k, v);
  write_artifact(stem, std::move(manifest), blob);
}

BnnModel load_model(const std::filesystem::path& stem) {
  auto [manifest, blob] = read_artifact(stem, "bater-model", kModelFormatVersion);
  const auto count = manifest.get_uint("layers");
  std::vector<DenseLayer> layers;
  for (std::uint64_t l = 0; l < count; ++l) {
    std::istringstream desc(manifest.get("layer." + std::to_string(l)));
    std::string kind, activation;
    std::size_t in = 0, out = 0;
    if (!(desc >> kind >> activation >> in >> out) || in == 0 || out == 0)
      throw FormatError("bad layer description for layer " + std::to_string(l), 0);
    DenseLayer layer;
    if (kind == "variational")
      layer.kind = LayerKind::variational;
    else if (kind == "deterministic")
      layer.kind = LayerKind::deterministic;
    else
      throw FormatError("unknown layer kind '" + kind + "'", 0);
    if (activation == "relu")
      layer.activation = Activation::relu;
    else if (activation == "identity")
      layer.activation = Activation::identity;
    else
      throw FormatError("unknown activation '" + activation + "'", 0);
    layer.weight.mu = Tensor(Shape{in, out}, blob.get_doubles(in * out));
    layer.bias.mu = Tensor(Shape{out}, blob.get_doubles(out));
    if (layer.kind == LayerKind::variational) {
      layer.weight.log_std = Tensor(Shape{in, out}, blob.get_doubles(in * out));
      layer.bias.log_std = Tensor(Shape{out}, blob.get_doubles(out));
    } else {
      layer.weight.log_std = Tensor(Shape{in, out}, 0.0);
      layer.bias.log_std = Tensor(Shape{out}, 0.0);
    }
    layers.push_back(std::move(layer));
  }
  if (!blob.at_end()) throw FormatError("trailing bytes after model parameters", blob.offset());
  return BnnModel(std::move(layers), static_cast<int>(manifest.get_int("class_count")), manifest.get_double("prior_std"));
}

}  // namespace bater
