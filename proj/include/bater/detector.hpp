// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bater/bnn.hpp"
#include "bater/dataset.hpp"
#include "bater/logistic.hpp"
#include "bater/pca.hpp"
#include "bater/wasserstein.hpp"

namespace bater {

enum class Statistic { min, mean };
std::string statistic_name(Statistic s);
Statistic parse_statistic(std::string_view name);

struct DetectorConfig {
  std::size_t components = 10;
  int passes = 4;
  std::size_t n_ref = 200;
  std::size_t subsets = 5;
  std::size_t select = 3;
  std::size_t folds = 5;
  Statistic statistic = Statistic::min;
  // Empty means every tap of the model.
  std::vector<std::size_t> candidate_taps;
  std::size_t pca_rows = 2000;
  double threshold = 0.5;
  LogisticConfig logistic;
  std::uint64_t seed = 0;
};

/// Class-conditional reference pools: sample(c, t, m) for class c, tap position t, subset m.
struct ReferenceStore {
  int class_count = 0;
  std::size_t subsets = 0;
  std::size_t n_ref = 0;
  std::vector<std::size_t> taps;
  std::vector<EmpiricalSample> samples;

  const EmpiricalSample& sample(int c, std::size_t tap_pos, std::size_t subset) const;
  /// Position of `tap` in `taps`; throws IndexError when absent.
  std::size_t position(std::size_t tap) const;
  /// Store restricted to the given tap positions, in that order.
  ReferenceStore restrict_to(std::span<const std::size_t> positions) const;
};

/// PCA fitted on `rows` activations of each tap, one draw per chunk of rows.
std::vector<PcaProjection> fit_tap_pcas(const BnnModel& model, const Tensor& rows, std::span<const std::size_t> taps,
                                        std::size_t k, std::uint64_t seed);

/// B passes of one input [1, dim] at one tap, projected and pooled: k*B values.
EmpiricalSample simulate_distribution(const BnnModel& model, const Tensor& x, std::size_t tap, int passes,
                                      const PcaProjection& pca, Rng& rng);

/// Pools for many rows at once: result[row][i] for taps[i]. Rows in a chunk share draws;
/// chunk c uses stream (seed, stage, c).
std::vector<std::vector<EmpiricalSample>> simulate_pools(const BnnModel& model, const Tensor& x,
                                                         std::span<const std::size_t> taps,
                                                         std::span<const PcaProjection> pcas, int passes,
                                                         std::uint64_t seed, std::string_view stage);

/// Draws n_ref points per class (seeded), splits them into M disjoint subsets and pools
/// their projected activations. Throws ContractError when a class has fewer than n_ref points.
ReferenceStore build_reference(const BnnModel& model, const LabeledSet& train, std::span<const std::size_t> taps,
                               std::span<const PcaProjection> pcas, std::size_t n_ref, std::size_t subsets,
                               int passes, std::uint64_t seed);

/// W1 from `sample` to each subset of class c at tap position t, aggregated.
double dispersion_score(const EmpiricalSample& sample, int c, std::size_t tap_pos, const ReferenceStore& store,
                        Statistic statistic);
double aggregate(std::span<const double> distances, Statistic statistic);

struct LayerSelection {
  // Feature columns, best first.
  std::vector<std::size_t> order;
  std::vector<double> cv_auc;
};
/// Cross-validated single-feature AUC per column (labels 0 natural, 1 adversarial); keeps the top m.
/// Ties go to the lower column index.
LayerSelection select_layers(const Tensor& features, std::span<const int> labels, std::size_t m, std::size_t folds,
                             std::uint64_t seed, const LogisticConfig& logistic = {});

/// PCA plus references over the candidate taps; shared by detectors fitted for different attacks.
struct DetectorBasis {
  std::vector<std::size_t> taps;
  std::vector<PcaProjection> pcas;
  ReferenceStore references;
};
DetectorBasis build_basis(const BnnModel& model, const LabeledSet& train, const DetectorConfig& config);

/// Raw dispersion features [n, basis taps] for rows with the given classes.
Tensor basis_features(const BnnModel& model, const DetectorBasis& basis, const Tensor& x, std::span<const int> classes,
                      const DetectorConfig& config, std::string_view stage);

struct DetectorModel {
  std::vector<std::size_t> taps;
  std::vector<std::string> tap_names;
  Statistic statistic = Statistic::min;
  std::vector<PcaProjection> pcas;
  ReferenceStore references;
  LogisticModel logistic;
  int passes = 4;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::vector<double> candidate_auc;
};

/// Selects layers on the stacked natural/adversarial features and fits the logistic fuser.
DetectorModel assemble_detector(const BnnModel& model, const DetectorBasis& basis, const Tensor& natural_features,
                                const Tensor& adversarial_features, const DetectorConfig& config);

/// End-to-end fit from raw inputs; predicted classes come from the model's prediction rule.
DetectorModel fit_detector(const BnnModel& model, const LabeledSet& train, const Tensor& naturals,
                           const Tensor& adversarials, const DetectorConfig& config);

struct Verdict {
  int predicted_class = 0;
  std::vector<double> distances;
  double score = 0.0;
  int z = 0;
};

PredictionRule detector_rule(const DetectorModel& detector);
std::vector<Verdict> detect_batch(const BnnModel& model, const DetectorModel& detector, const Tensor& x,
                                  std::string_view stage = "detect");
Verdict detect(const Tensor& x, const DetectorModel& detector, const BnnModel& model);

inline constexpr int kDetectorFormatVersion = 1;
void save_detector(const DetectorModel& detector, const std::filesystem::path& stem,
                   const std::vector<std::pair<std::string, std::string>>& extra = {});
DetectorModel load_detector(const std::filesystem::path& stem);

/// index,predicted_class,d_<tap>...,score,z
std::string verdict_csv(const DetectorModel& detector, std::span<const Verdict> verdicts);

}  // namespace bater
