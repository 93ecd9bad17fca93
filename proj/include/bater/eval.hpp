// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bater/attacks.hpp"
#include "bater/bnn.hpp"
#include "bater/config.hpp"
#include "bater/dataset.hpp"
#include "bater/detector.hpp"
#include "bater/roc.hpp"

namespace bater {

/// Loads the dataset named by data.source and applies the test limit and fold split.
Dataset prepare_dataset(const RunConfig& cfg);

/// Correctly classified test points that attacks start from, with their fold tags.
struct AttackPool {
  LabeledSet points;
  std::vector<Split> split;
  std::vector<std::size_t> test_index;
  double clean_accuracy = 0.0;
};
AttackPool build_attack_pool(const Dataset& data, const BnnModel& model, const PredictionRule& rule);

struct FilterResult {
  std::vector<std::size_t> naturals;
  std::vector<std::size_t> adversarials;
  std::size_t dropped_naturals = 0;
  std::size_t dropped_adversarials = 0;
  std::string log;
};
/// Drops naturals the model misclassifies and adversarials it still gets right.
/// Row i of the batch must be the attack on natural i. Throws ContractError when either side ends up empty.
FilterResult filter_eval_set(const LabeledSet& naturals, const AdvBatch& adv, const BnnModel& model,
                             const PredictionRule& rule);

struct FoldRows {
  Tensor naturals;
  Tensor adversarials;
  std::vector<int> natural_labels;
  std::vector<int> adversarial_labels;
};
/// Kept rows of one fold.
FoldRows fold_rows(const AttackPool& pool, const AdvBatch& adv, const FilterResult& kept, Split split);

/// Taps considered during selection: all, or only the last `count` when count > 0.
std::vector<std::size_t> candidate_taps(const BnnModel& model, std::size_t count);

/// Fits a detector on the detector-train fold.
DetectorModel fit_attack_detector(const BnnModel& model, const DetectorBasis& basis, const FoldRows& train,
                                  const DetectorConfig& config);

struct ReportRow {
  std::string dataset;
  std::string attack;
  std::string variant;
  double auc = 0.0;
  double tpr01 = 0.0;
  double tpr05 = 0.0;
  double tpr10 = 0.0;
  std::size_t n_nat = 0;
  std::size_t n_adv = 0;
  std::uint64_t seed = 0;
};

struct CellResult {
  ReportRow row;
  RocCurve roc;
  std::vector<Verdict> natural_verdicts;
  std::vector<Verdict> adversarial_verdicts;
};
/// Scores the eval fold with `detector` (natural = 0, adversarial = 1).
CellResult evaluate_detector(const BnnModel& model, const DetectorModel& detector, const FoldRows& eval,
                             const ReportRow& identity);

struct EvalReport {
  std::vector<ReportRow> rows;
  std::string digest;
  std::vector<std::string> notes;
};

/// Per-class AUC for the BNN (B passes) and its deterministic twin (one pass) under one attack.
struct AblationRow {
  int cls = 0;
  double auc_bnn = 0.0;
  double auc_dnn = 0.0;
  std::size_t n_bnn = 0;
  std::size_t n_dnn = 0;
};
struct AblationResult {
  std::vector<AblationRow> rows;
  double mean_bnn = 0.0;
  double mean_dnn = 0.0;
  ReportRow bnn;
  ReportRow dnn;
};
/// Grouped by the true class of the source image; classes lacking either side are skipped.
std::vector<double> per_class_auc(const CellResult& cell, const FoldRows& eval, int class_count,
                                  std::vector<std::size_t>* counts = nullptr);

struct BenchmarkOptions {
  std::vector<std::string> attacks;
  bool white_box = true;
  bool ablation = true;
  /// Optional pre-trained models; trained from the config when absent.
  std::optional<BnnModel> model;
  std::optional<BnnModel> twin;
  std::filesystem::path out_dir;
};

struct BenchmarkResult {
  EvalReport report;
  std::optional<AblationResult> ablation;
  std::vector<std::pair<std::string, AdvBatch>> batches;
  std::vector<std::pair<std::string, DetectorModel>> detectors;
  double test_accuracy = 0.0;
};
/// Full pipeline: train (unless given), attack, fit per-attack detectors, evaluate; optional white-box and ablation cells.
BenchmarkResult run_benchmark(const RunConfig& cfg, BenchmarkOptions options);

AblationResult ablation_bnn_vs_dnn(const RunConfig& cfg, const Dataset& data, const BnnModel& bnn,
                                   const BnnModel& dnn);

/// Trains the stochastic model, or its separately trained deterministic twin.
BnnModel train_model(const RunConfig& cfg, const Dataset& data, LayerKind kind);

std::string roc_csv(const RocCurve& curve);
std::string report_csv_header();
std::string report_csv_row(const ReportRow& row);
std::string report_csv(std::span<const ReportRow> rows);
std::vector<ReportRow> parse_report_csv(std::string_view text);
std::string report_table(std::span<const ReportRow> rows);
std::string ablation_csv(const AblationResult& result);

}  // namespace bater
