// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bater/bnn.hpp"
#include "bater/graph.hpp"
#include "bater/tensor.hpp"

namespace bater {

enum class AttackKind { fgsm, pgd, cw, restricted_pgd };

std::string attack_kind_name(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 0.3;
  int steps = 40;
  double step_size = 0.1;
  double confidence = 0.0;
  double lambda = 0.1;
  int grad_passes = 4;
  int binary_search_steps = 5;
  double initial_c = 1e-2;
  double cw_learning_rate = 0.1;
  bool random_start = true;
  std::size_t chunk = 250;
  std::uint64_t seed = 0;

  /// Throws ContractError on out-of-range fields.
  void validate() const;
};

struct AdvBatch {
  Tensor originals;
  Tensor perturbed;
  std::vector<int> true_labels;
  std::vector<int> predicted;
  std::vector<std::uint8_t> adversarial;
  std::vector<double> linf;
  // Root-mean-square per-pixel distortion.
  std::vector<double> l2;

  std::size_t size() const noexcept { return true_labels.size(); }
  double success_rate() const;
};

/// Per-row loss summed over the batch; built on logits recorded in the graph.
using LossFn = std::function<NodeRef(Graph&, NodeRef logits, std::span<const int> labels)>;

LossFn cross_entropy_loss();
/// Cross-entropy minus lambda times the ordered-pair logit spread.
LossFn restricted_loss(double lambda);

/// Mean over `passes` weight draws of the input gradient of `loss`. Rows share each draw.
Tensor expected_gradient(const BnnModel& model, const Tensor& x, std::span<const int> labels, const LossFn& loss,
                         int passes, Rng& rng);

AdvBatch fgsm(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
              const PredictionRule& rule);
AdvBatch pgd(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
             const PredictionRule& rule);
AdvBatch cw_l2(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
               const PredictionRule& rule);
AdvBatch restricted_pgd(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                        const PredictionRule& rule);
/// Dispatches on spec.kind.
AdvBatch run_attack(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                    const PredictionRule& rule);

/// Fills flags, predictions and norms from originals/perturbed.
void finalize_batch(AdvBatch& batch, const BnnModel& model, const PredictionRule& rule);

/// C&W objective for a batch: sum ||x'-x||^2 + c_i * max(Z_y - max_{j!=y} Z_j + kappa, 0), x' = (tanh(w)+1)/2.
/// Returns the value and its gradient w.r.t. w for one fixed weight draw.
struct CwObjective {
  double value = 0.0;
  Tensor grad;
  Tensor logits;
};
CwObjective cw_objective(const BnnModel& model, const NetworkDraw& draw, const Tensor& w, const Tensor& x,
                         std::span<const int> y, std::span<const double> c, double kappa);

struct LambdaSweepRow {
  double lambda = 0.0;
  double success_rate = 0.0;
  double mean_final_std = 0.0;
};
/// Runs restricted_pgd for each lambda and reports success and mean final-layer score std.
std::vector<LambdaSweepRow> sweep_lambda(const BnnModel& model, const Tensor& x, std::span<const int> y,
                                         AttackSpec spec, const PredictionRule& rule,
                                         std::span<const double> lambdas);

/// Standard deviation of each row's final-layer scores, averaged over `passes` draws.
std::vector<double> final_layer_std(const BnnModel& model, const Tensor& x, int passes, std::uint64_t seed);

inline constexpr int kAdvFormatVersion = 1;
void save_adv_batch(const AdvBatch& batch, const AttackSpec& spec, const std::filesystem::path& stem,
                    const std::vector<std::pair<std::string, std::string>>& extra = {});
AdvBatch load_adv_batch(const std::filesystem::path& stem);
/// index,success,linf,l2
std::string adv_summary_csv(const AdvBatch& batch);

}  // namespace bater
