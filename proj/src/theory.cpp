// SPDX-License-Identifier: Apache-2.0
#include "bater/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/parallel.hpp"
#include "bater/wasserstein.hpp"

namespace bater {
namespace {

// Zero-mean draw with the requested standard deviation.
double draw_offset(WeightLaw law, double std_dev, Rng& rng) {
  switch (law) {
    case WeightLaw::gaussian:
      return std::normal_distribution<double>(0.0, std_dev)(rng);
    case WeightLaw::uniform: {
      const double half = std_dev * std::sqrt(3.0);
      return std::uniform_real_distribution<double>(-half, half)(rng);
    }
    case WeightLaw::laplace: {
      const double b = std_dev / std::numbers::sqrt2;
      const double e = std::exponential_distribution<double>(1.0 / b)(rng);
      return std::bernoulli_distribution(0.5)(rng) ? e : -e;
    }
    case WeightLaw::exponential:
      break;
  }
  throw ContractError("asymmetric weight law");
}

struct Instance {
  std::vector<double> w0;  // linear: dim; one_hidden: hidden*dim first layer then hidden readout
  std::vector<double> x;
  std::vector<double> xd;
};

double evaluate(const FamilySpec& f, std::span<const double> w, std::span<const double> x) {
  if (f.family == ModelFamily::linear) {
    double s = 0.0;
    for (std::size_t i = 0; i < f.dim; ++i) s += w[i] * x[i];
    return s;
  }
  double out = 0.0;
  for (std::size_t h = 0; h < f.hidden; ++h) {
    double a = 0.0;
    for (std::size_t i = 0; i < f.dim; ++i) a += w[h * f.dim + i] * x[i];
    out += w[f.hidden * f.dim + h] * std::max(a, 0.0);
  }
  return out;
}

std::size_t weight_count(const FamilySpec& f) {
  return f.family == ModelFamily::linear ? f.dim : f.hidden * f.dim + f.hidden;
}

std::vector<double> sample_outputs(const FamilySpec& f, const Instance& inst, std::span<const double> x,
                                   std::size_t count, Rng& rng) {
  std::vector<double> out(count);
  std::vector<double> w(inst.w0.size());
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = inst.w0[i] + (f.weight_std > 0.0 ? draw_offset(f.law, f.weight_std, rng) : 0.0);
    out[s] = evaluate(f, w, x);
  }
  return out;
}

}  // namespace

bool symmetric(WeightLaw law) noexcept { return law != WeightLaw::exponential; }

ModelFamily parse_family(std::string_view name) {
  if (name == "linear") return ModelFamily::linear;
  if (name == "one_hidden") return ModelFamily::one_hidden;
  throw ConfigError("unknown model family '" + std::string(name) + "' (linear or one_hidden)");
}

WeightLaw parse_law(std::string_view name) {
  if (name == "gaussian") return WeightLaw::gaussian;
  if (name == "uniform") return WeightLaw::uniform;
  if (name == "laplace") return WeightLaw::laplace;
  if (name == "exponential") return WeightLaw::exponential;
  throw ConfigError("unknown weight law '" + std::string(name) + "'");
}

PropositionReport verify_proposition(const FamilySpec& family, std::size_t trials, std::size_t mc_samples,
                                     std::uint64_t seed) {
  if (!symmetric(family.law))
    throw ContractError("the weight law must be symmetric about its centre; exponential is not");
  if (family.dim == 0 || (family.family == ModelFamily::one_hidden && family.hidden == 0))
    throw ContractError("model family dimensions must be positive");
  if (family.weight_std < 0.0) throw ContractError("weight_std must be nonnegative");
  if (mc_samples < 2) throw ContractError("mc_samples must be at least 2");
  if (trials == 0) throw ContractError("at least one trial is required");

  PropositionReport report;
  report.trials.resize(trials);
  for_each_chunk(trials, 1, [&](std::size_t t, std::size_t, std::size_t) {
    auto rng = make_stream(seed, "proposition", t);
    Instance inst;
    std::normal_distribution<double> unit;
    inst.w0.resize(weight_count(family));
    for (double& v : inst.w0) v = unit(rng);
    inst.x.resize(family.dim);
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    for (double& v : inst.x) v = pixel(rng);
    double xnorm = 0.0;
    for (double v : inst.x) xnorm += v * v;
    xnorm = std::sqrt(xnorm);
    std::vector<double> dir(family.dim);
    double dnorm = 0.0;
    for (double& v : dir) {
      v = unit(rng);
      dnorm += v * v;
    }
    dnorm = std::sqrt(dnorm);
    const double delta_norm = family.delta_fraction * xnorm;
    inst.xd = inst.x;
    for (std::size_t i = 0; i < family.dim; ++i) inst.xd[i] += delta_norm * dir[i] / dnorm;

    const auto shifted = sample_outputs(family, inst, inst.xd, mc_samples, rng);
    const auto base = sample_outputs(family, inst, inst.x, mc_samples, rng);
    PropositionTrial& trial = report.trials[t];
    trial.delta_norm = delta_norm;
    trial.lhs = wasserstein1(shifted, base);
    trial.rhs = std::abs(evaluate(family, inst.w0, inst.xd) - evaluate(family, inst.w0, inst.x));
    trial.margin = trial.lhs - trial.rhs;

    // Bootstrap standard error of the lhs estimate.
    if (family.bootstrap > 1 && family.weight_std > 0.0) {
      std::uniform_int_distribution<std::size_t> pick(0, mc_samples - 1);
      std::vector<double> reps;
      std::vector<double> a(mc_samples), b(mc_samples);
      for (std::size_t r = 0; r < family.bootstrap; ++r) {
        for (std::size_t i = 0; i < mc_samples; ++i) {
          a[i] = shifted[pick(rng)];
          b[i] = base[pick(rng)];
        }
        reps.push_back(wasserstein1(a, b));
      }
      double mean = 0.0;
      for (double v : reps) mean += v;
      mean /= static_cast<double>(reps.size());
      double var = 0.0;
      for (double v : reps) var += (v - mean) * (v - mean);
      trial.tolerance = 3.0 * std::sqrt(var / static_cast<double>(reps.size() - 1));
    }
    // Rounding slack so the degenerate case (both sides the same number) holds.
    trial.tolerance += 1e-12 * std::max(1.0, trial.rhs);
    trial.hold = trial.lhs >= trial.rhs - trial.tolerance;
  });

  std::vector<double> margins;
  std::size_t holds = 0;
  for (const auto& t : report.trials) {
    holds += t.hold;
    margins.push_back(t.margin);
  }
  report.hold_rate = static_cast<double>(holds) / static_cast<double>(trials);
  report.min_margin = *std::min_element(margins.begin(), margins.end());
  report.median_margin = median(margins);
  return report;
}

std::string proposition_csv(const PropositionReport& report) {
  std::ostringstream out;
  out << "lhs,rhs,margin,hold\n";
  for (const auto& t : report.trials)
    out << format_double(t.lhs) << ',' << format_double(t.rhs) << ',' << format_double(t.margin) << ','
        << (t.hold ? 1 : 0) << '\n';
  return out.str();
}

std::string proposition_summary(const PropositionReport& report) {
  std::ostringstream out;
  out << "trials " << report.trials.size() << ", hold rate " << format_double(report.hold_rate)
      << ", median margin " << format_double(report.median_margin) << ", min margin "
      << format_double(report.min_margin) << '\n';
  return out.str();
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2) return upper;
  return 0.5 * (upper + *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid)));
}

std::vector<std::vector<double>> activation_std_profile(const BnnModel& model, const Tensor& inputs,
                                                        std::span<const std::size_t> taps, int passes,
                                                        std::uint64_t seed) {
  if (passes < 1) throw ContractError("activation_std_profile needs at least one pass");
  if (model.stochastic() && passes < 2) throw ContractError("a stochastic model needs at least two passes");
  for (std::size_t t : taps) model.tap_width(t);
  std::vector<std::vector<double>> out(taps.size(), std::vector<double>(inputs.rows(), 0.0));
  for_each_chunk(inputs.rows(), 128, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    auto rng = make_stream(seed, "std-profile", chunk);
    const Tensor rows = inputs.slice_rows(begin, end);
    for (int p = 0; p < passes; ++p) {
      const auto acts = forward_taps(model, sample_network(model, rng), rows);
      for (std::size_t i = 0; i < taps.size(); ++i) {
        const Tensor& a = acts[taps[i]];
        for (std::size_t r = 0; r < a.rows(); ++r) {
          const auto row = a.row(r);
          double mean = 0.0;
          for (double v : row) mean += v;
          mean /= static_cast<double>(row.size());
          double var = 0.0;
          for (double v : row) var += (v - mean) * (v - mean);
          out[i][begin + r] += std::sqrt(var / static_cast<double>(row.size())) / passes;
        }
      }
    }
  });
  return out;
}

}  // namespace bater
