// SPDX-License-Identifier: Apache-2.0
#include "bater/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/parallel.hpp"

namespace bater {
namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_inputs(const BnnModel& model, const Tensor& x, std::span<const int> y) {
  if (x.rank() != 2 || x.cols() != model.input_dim())
    throw DimensionError("attack input must be [n," + std::to_string(model.input_dim()) + "], got " +
                         shape_string(x.shape()));
  if (y.size() != x.rows())
    throw DimensionError("attack has " + std::to_string(x.rows()) + " inputs but " + std::to_string(y.size()) +
                         " labels");
  for (double v : x.data())
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("attack inputs must lie in [0,1]");
}

AdvBatch empty_batch(const Tensor& x, std::span<const int> y) {
  AdvBatch batch;
  batch.originals = x;
  batch.perturbed = x;
  batch.true_labels.assign(y.begin(), y.end());
  return batch;
}

// Runs `body` over fixed row chunks and writes each chunk's result rows into batch.perturbed.
template <typename Body>
void attack_chunks(AdvBatch& batch, const AttackSpec& spec, Body body) {
  const std::size_t width = batch.originals.cols();
  for_each_chunk(batch.size(), spec.chunk, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    const Tensor rows = batch.originals.slice_rows(begin, end);
    const std::span<const int> labels(batch.true_labels.data() + begin, end - begin);
    const Tensor out = body(chunk, rows, labels);
    std::copy(out.data().begin(), out.data().end(), batch.perturbed.raw() + begin * width);
  });
}

// One projected signed-gradient run; shared by pgd and restricted_pgd.
AdvBatch projected_ascent(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                          const PredictionRule& rule, const LossFn& loss) {
  check_inputs(model, x, y);
  spec.validate();
  AdvBatch batch = empty_batch(x, y);
  attack_chunks(batch, spec, [&](std::size_t chunk, const Tensor& rows, std::span<const int> labels) {
    auto grad_rng = make_stream(spec.seed, "attack-grad", chunk);
    Tensor adv = rows;
    if (spec.random_start && spec.epsilon > 0.0) {
      auto start_rng = make_stream(spec.seed, "pgd-start", chunk);
      std::uniform_real_distribution<double> jitter(-spec.epsilon, spec.epsilon);
      for (double& v : adv.data()) v = std::clamp(v + jitter(start_rng), 0.0, 1.0);
    }
    for (int t = 0; t < spec.steps; ++t) {
      const Tensor g = expected_gradient(model, adv, labels, loss, spec.grad_passes, grad_rng);
      for (std::size_t i = 0; i < adv.size(); ++i) {
        const double moved = adv[i] + spec.step_size * sign_of(g[i]);
        const double boxed = std::min(std::max(moved, rows[i] - spec.epsilon), rows[i] + spec.epsilon);
        adv[i] = std::clamp(boxed, 0.0, 1.0);
      }
    }
    return adv;
  });
  finalize_batch(batch, model, rule);
  return batch;
}

}  // namespace

std::string attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::pgd:
      return "pgd";
    case AttackKind::cw:
      return "cw";
    case AttackKind::restricted_pgd:
      return "restricted_pgd";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "cw") return AttackKind::cw;
  if (name == "restricted_pgd") return AttackKind::restricted_pgd;
  throw ConfigError("unknown attack kind '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("epsilon must lie in [0,1]");
  if (grad_passes < 1) throw ContractError("grad_passes must be at least 1");
  if (confidence < 0.0) throw ContractError("confidence must be nonnegative");
  if (lambda < 0.0) throw ContractError("lambda must be nonnegative");
  if (chunk == 0) throw ContractError("attack chunk must be positive");
  const bool iterative = kind != AttackKind::fgsm;
  if (iterative && steps < 1) throw ContractError("iterative attacks need steps >= 1");
  if ((kind == AttackKind::pgd || kind == AttackKind::restricted_pgd) && !(step_size > 0.0))
    throw ContractError("step_size must be positive");
  if (kind == AttackKind::cw && (binary_search_steps < 1 || !(initial_c > 0.0) || !(cw_learning_rate > 0.0)))
    throw ContractError("C&W needs binary_search_steps >= 1 and positive initial_c and learning rate");
}

double AdvBatch::success_rate() const {
  if (adversarial.empty()) return 0.0;
  return static_cast<double>(std::count(adversarial.begin(), adversarial.end(), std::uint8_t{1})) /
         static_cast<double>(adversarial.size());
}

LossFn cross_entropy_loss() {
  return [](Graph& g, NodeRef logits, std::span<const int> labels) {
    return g.scale(g.softmax_cross_entropy(logits, labels), static_cast<double>(labels.size()));
  };
}

LossFn restricted_loss(double lambda) {
  if (lambda < 0.0) throw ContractError("lambda must be nonnegative");
  if (lambda == 0.0) return cross_entropy_loss();
  return [lambda](Graph& g, NodeRef logits, std::span<const int> labels) {
    NodeRef ce = g.scale(g.softmax_cross_entropy(logits, labels), static_cast<double>(labels.size()));
    return g.sub(ce, g.scale(g.reduce_sum(g.pairwise_spread(logits)), lambda));
  };
}

Tensor expected_gradient(const BnnModel& model, const Tensor& x, std::span<const int> labels, const LossFn& loss,
                         int passes, Rng& rng) {
  if (passes < 1) throw ContractError("expected_gradient needs at least one pass");
  // A deterministic model gives the same gradient every pass.
  const int effective = model.stochastic() ? passes : 1;
  Tensor total(x.shape(), 0.0);
  for (int p = 0; p < effective; ++p) {
    const NetworkDraw draw = sample_network(model, rng);
    Graph graph;
    const NodeRef input = graph.variable(x);
    const NodeRef root = loss(graph, record_logits(graph, input, model, draw), labels);
    const Tensor g = graph.backprop(root).wrt(input);
    if (effective == 1) return g;
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += g[i];
  }
  for (double& v : total.data()) v /= effective;
  return total;
}

void finalize_batch(AdvBatch& batch, const BnnModel& model, const PredictionRule& rule) {
  const std::size_t n = batch.size();
  batch.predicted = predict_batch(model, batch.perturbed, rule).labels;
  batch.adversarial.assign(n, 0);
  batch.linf.assign(n, 0.0);
  batch.l2.assign(n, 0.0);
  const std::size_t width = batch.originals.cols();
  for (std::size_t r = 0; r < n; ++r) {
    batch.adversarial[r] = batch.predicted[r] != batch.true_labels[r];
    double worst = 0.0, squares = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double d = batch.perturbed[r * width + c] - batch.originals[r * width + c];
      worst = std::max(worst, std::abs(d));
      squares += d * d;
    }
    batch.linf[r] = worst;
    batch.l2[r] = std::sqrt(squares / static_cast<double>(width));
  }
}

AdvBatch fgsm(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
              const PredictionRule& rule) {
  check_inputs(model, x, y);
  spec.validate();
  AdvBatch batch = empty_batch(x, y);
  const LossFn loss = cross_entropy_loss();
  attack_chunks(batch, spec, [&](std::size_t chunk, const Tensor& rows, std::span<const int> labels) {
    auto grad_rng = make_stream(spec.seed, "attack-grad", chunk);
    const Tensor g = expected_gradient(model, rows, labels, loss, spec.grad_passes, grad_rng);
    Tensor adv = rows;
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = std::clamp(rows[i] + spec.epsilon * sign_of(g[i]), 0.0, 1.0);
    return adv;
  });
  finalize_batch(batch, model, rule);
  return batch;
}

AdvBatch pgd(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
             const PredictionRule& rule) {
  return projected_ascent(model, x, y, spec, rule, cross_entropy_loss());
}

AdvBatch restricted_pgd(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                        const PredictionRule& rule) {
  return projected_ascent(model, x, y, spec, rule, restricted_loss(spec.lambda));
}

CwObjective cw_objective(const BnnModel& model, const NetworkDraw& draw, const Tensor& w, const Tensor& x,
                         std::span<const int> y, std::span<const double> c, double kappa) {
  if (!w.same_shape(x)) throw DimensionError("C&W variable and input shapes differ");
  if (c.size() != x.rows()) throw DimensionError("C&W needs one constant per row");
  Graph graph;
  const NodeRef wv = graph.variable(w);
  const NodeRef adv = graph.scale(graph.shift(graph.tanh(wv), 1.0), 0.5);
  const NodeRef diff = graph.sub(adv, graph.constant(x));
  const NodeRef distance = graph.reduce_sum(graph.mul(diff, diff));
  const NodeRef logits = record_logits(graph, adv, model, draw);
  const NodeRef hinge = graph.hinge_margin(logits, y, kappa);
  const NodeRef weighted = graph.reduce_sum(graph.mul(hinge, graph.constant(Tensor(Shape{c.size()},
                                                                                   {c.begin(), c.end()}))));
  const NodeRef root = graph.add(distance, weighted);
  CwObjective out;
  out.value = graph.value(root).item();
  out.grad = graph.backprop(root).wrt(wv);
  out.logits = graph.value(logits);
  return out;
}

namespace {

// Per-draw margins of the best other class over the true class, from a committee
// of draws fixed for the whole attack. A row counts as past the margin when the
// mean margin less three standard errors clears kappa; with one draw this is
// the plain margin test. Fresh gradient draws would otherwise let the
// minimum-distance search pick iterates where the committee happened to be lucky.
class CwCheck {
 public:
  CwCheck(const BnnModel& model, int draws, Rng& rng) : model_(model) {
    for (int p = 0; p < draws; ++p) draws_.push_back(sample_network(model, rng));
  }

  std::vector<bool> passed(const Tensor& x, std::span<const int> y, double kappa) const {
    const std::size_t n = x.rows(), p = draws_.size();
    std::vector<double> sum(n, 0.0), squares(n, 0.0);
    for (const auto& draw : draws_) {
      const Tensor z = forward_logits(model_, draw, x);
      for (std::size_t r = 0; r < n; ++r) {
        const auto row = z.row(r);
        const auto label = static_cast<std::size_t>(y[r]);
        double other = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < row.size(); ++j)
          if (j != label) other = std::max(other, row[j]);
        const double margin = other - row[label];
        sum[r] += margin;
        squares[r] += margin * margin;
      }
    }
    std::vector<bool> out(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double mean = sum[r] / p;
      double bound = mean;
      if (p > 1) {
        const double var = std::max(0.0, (squares[r] - p * mean * mean) / (p - 1));
        bound -= 3.0 * std::sqrt(var / p);
      }
      out[r] = bound >= kappa;
    }
    return out;
  }

 private:
  const BnnModel& model_;
  std::vector<NetworkDraw> draws_;
};

}  // namespace

AdvBatch cw_l2(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
               const PredictionRule& rule) {
  check_inputs(model, x, y);
  spec.validate();
  AdvBatch batch = empty_batch(x, y);
  const int effective = model.stochastic() ? spec.grad_passes : 1;
  attack_chunks(batch, spec, [&](std::size_t chunk, const Tensor& rows, std::span<const int> labels) {
    auto rng = make_stream(spec.seed, "attack-grad", chunk);
    const std::size_t n = rows.rows(), width = rows.cols();
    Tensor best = rows;
    std::vector<double> best_dist(n, std::numeric_limits<double>::infinity());
    std::vector<bool> done(n, false);

    auto check_rng = make_stream(spec.seed, "cw-check", chunk);
    const CwCheck check(model, model.stochastic() ? std::max(8, spec.grad_passes) : 1, check_rng);

    // Rows already past the margin keep delta = 0.
    {
      const auto passed = check.passed(rows, labels, spec.confidence);
      for (std::size_t r = 0; r < n; ++r)
        if (passed[r]) {
          done[r] = true;
          best_dist[r] = 0.0;
        }
    }

    std::vector<double> c(n, spec.initial_c), lo(n, 0.0), hi(n, 1e10);
    Tensor w0(rows.shape());
    for (std::size_t i = 0; i < w0.size(); ++i) w0[i] = std::atanh((2.0 * rows[i] - 1.0) * 0.999999);

    for (int round = 0; round < spec.binary_search_steps; ++round) {
      Tensor w = w0;
      Tensor m(rows.shape(), 0.0), v(rows.shape(), 0.0);
      std::vector<bool> round_success(n, false);
      std::vector<double> active_c(n);
      for (std::size_t r = 0; r < n; ++r) active_c[r] = done[r] ? 0.0 : c[r];
      constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
      for (int it = 0; it < spec.steps; ++it) {
        Tensor grad(rows.shape(), 0.0);
        for (int p = 0; p < effective; ++p) {
          const CwObjective obj = cw_objective(model, sample_network(model, rng), w, rows, labels, active_c,
                                               spec.confidence);
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += obj.grad[i] / effective;
        }
        // Record the current iterate before stepping.
        Tensor candidate(rows.shape());
        for (std::size_t i = 0; i < w.size(); ++i) candidate[i] = 0.5 * (std::tanh(w[i]) + 1.0);
        const auto passed = check.passed(candidate, labels, spec.confidence);
        for (std::size_t r = 0; r < n; ++r) {
          if (done[r] || !passed[r]) continue;
          round_success[r] = true;
          double dist = 0.0;
          for (std::size_t k = 0; k < width; ++k) {
            const double d = candidate[r * width + k] - rows[r * width + k];
            dist += d * d;
          }
          if (dist < best_dist[r]) {
            best_dist[r] = dist;
            for (std::size_t k = 0; k < width; ++k) best[r * width + k] = candidate[r * width + k];
          }
        }
        const double t = it + 1.0;
        const double corr1 = 1.0 - std::pow(beta1, t), corr2 = 1.0 - std::pow(beta2, t);
        for (std::size_t i = 0; i < w.size(); ++i) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
          w[i] -= spec.cw_learning_rate * (m[i] / corr1) / (std::sqrt(v[i] / corr2) + adam_eps);
        }
      }
      for (std::size_t r = 0; r < n; ++r) {
        if (done[r]) continue;
        if (round_success[r]) {
          hi[r] = std::min(hi[r], c[r]);
          c[r] = 0.5 * (lo[r] + hi[r]);
        } else {
          lo[r] = std::max(lo[r], c[r]);
          c[r] = hi[r] < 1e9 ? 0.5 * (lo[r] + hi[r]) : c[r] * 10.0;
        }
      }
    }
    for (double& v : best.data()) v = std::clamp(v, 0.0, 1.0);
    return best;
  });
  finalize_batch(batch, model, rule);
  return batch;
}

AdvBatch run_attack(const BnnModel& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                    const PredictionRule& rule) {
  switch (spec.kind) {
    case AttackKind::fgsm:
      return fgsm(model, x, y, spec, rule);
    case AttackKind::pgd:
      return pgd(model, x, y, spec, rule);
    case AttackKind::cw:
      return cw_l2(model, x, y, spec, rule);
    case AttackKind::restricted_pgd:
      return restricted_pgd(model, x, y, spec, rule);
  }
  throw ContractError("unknown attack kind");
}

std::vector<double> final_layer_std(const BnnModel& model, const Tensor& x, int passes, std::uint64_t seed) {
  if (passes < 1) throw ContractError("final_layer_std needs at least one pass");
  std::vector<double> out(x.rows(), 0.0);
  for_each_chunk(x.rows(), 128, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto rng = make_stream(seed, "score-std", chunk);
    const Tensor rows = x.slice_rows(begin, end);
    for (int p = 0; p < passes; ++p) {
      const Tensor z = forward_logits(model, sample_network(model, rng), rows);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto row = z.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        out[begin + r] += std::sqrt(var / static_cast<double>(row.size())) / passes;
      }
    }
  });
  return out;
}

std::vector<LambdaSweepRow> sweep_lambda(const BnnModel& model, const Tensor& x, std::span<const int> y,
                                         AttackSpec spec, const PredictionRule& rule,
                                         std::span<const double> lambdas) {
  spec.kind = AttackKind::restricted_pgd;
  std::vector<LambdaSweepRow> rows;
  for (double lambda : lambdas) {
    spec.lambda = lambda;
    const AdvBatch batch = restricted_pgd(model, x, y, spec, rule);
    const std::vector<double> stds = final_layer_std(model, batch.perturbed, rule.passes, spec.seed);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (batch.adversarial[i]) {
        total += stds[i];
        ++count;
      }
    rows.push_back({lambda, batch.success_rate(), count ? total / static_cast<double>(count) : 0.0});
  }
  return rows;
}

void save_adv_batch(const AdvBatch& batch, const AttackSpec& spec, const std::filesystem::path& stem,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
  Manifest manifest("bater-adv", kAdvFormatVersion);
  manifest.set("attack", attack_kind_name(spec.kind));
  manifest.set("epsilon", spec.epsilon);
  manifest.set("steps", spec.steps);
  manifest.set("step_size", spec.step_size);
  manifest.set("confidence", spec.confidence);
  manifest.set("lambda", spec.lambda);
  manifest.set("grad_passes", spec.grad_passes);
  manifest.set("binary_search_steps", spec.binary_search_steps);
  manifest.set("initial_c", spec.initial_c);
  manifest.set("cw_learning_rate", spec.cw_learning_rate);
  manifest.set("random_start", spec.random_start ? "true" : "false");
  manifest.set("chunk", static_cast<std::uint64_t>(spec.chunk));
  manifest.set("seed", spec.seed);
  manifest.set("count", static_cast<std::uint64_t>(batch.size()));
  manifest.set("success_rate", batch.success_rate());
  for (const auto& [k, v] : extra) manifest.set(k, v);
  BlobWriter blob;
  blob.put_tensor(batch.originals);
  blob.put_tensor(batch.perturbed);
  blob.put_ints(batch.true_labels);
  blob.put_ints(batch.predicted);
  std::vector<int> flags(batch.adversarial.begin(), batch.adversarial.end());
  blob.put_ints(flags);
  blob.put_doubles(batch.linf);
  blob.put_doubles(batch.l2);
  write_artifact(stem, std::move(manifest), blob);
}

AdvBatch load_adv_batch(const std::filesystem::path& stem) {
  auto [manifest, blob] = read_artifact(stem, "bater-adv", kAdvFormatVersion);
  const std::size_t n = manifest.get_uint("count");
  AdvBatch batch;
  batch.originals = blob.get_tensor();
  batch.perturbed = blob.get_tensor();
  batch.true_labels = blob.get_ints(n);
  batch.predicted = blob.get_ints(n);
  for (int f : blob.get_ints(n)) batch.adversarial.push_back(static_cast<std::uint8_t>(f != 0));
  batch.linf = blob.get_doubles(n);
  batch.l2 = blob.get_doubles(n);
  if (!blob.at_end()) throw FormatError("trailing bytes in adversarial batch", blob.offset());
  if (batch.originals.rows() != n || !batch.originals.same_shape(batch.perturbed))
    throw FormatError("adversarial batch tensors disagree with count", 0);
  return batch;
}

std::string adv_summary_csv(const AdvBatch& batch) {
  std::ostringstream out;
  out << "index,success,linf,l2\n";
  for (std::size_t i = 0; i < batch.size(); ++i)
    out << i << ',' << int(batch.adversarial[i]) << ',' << format_double(batch.linf[i]) << ','
        << format_double(batch.l2[i]) << '\n';
  return out.str();
}

}  // namespace bater
