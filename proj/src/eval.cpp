// SPDX-License-Identifier: Apache-2.0
#include "bater/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"

namespace bater {

Dataset prepare_dataset(const RunConfig& cfg) {
  const std::string source = cfg.get("data.source");
  Dataset data;
  if (source == "mnist") {
    data.name = "mnist";
    data.class_count = 10;
    for (const char* key : {"data.train_images", "data.train_labels", "data.test_images", "data.test_labels"})
      if (!std::filesystem::exists(cfg.get(key)))
        throw DependencyError("missing dataset file " + cfg.get(key) + " (" + key + ")");
    data.train = parse_mnist_idx(cfg.get("data.train_images"), cfg.get("data.train_labels"));
    data.test = parse_mnist_idx(cfg.get("data.test_images"), cfg.get("data.test_labels"));
  } else if (source == "synthetic") {
    data = synth_dataset(static_cast<int>(cfg.get_uint("data.synth_classes")), cfg.get_uint("data.synth_n"),
                         cfg.get_uint("data.synth_dim"), cfg.get_double("data.synth_separation"),
                         derive_seed(cfg.seed(), "synth"));
  } else {
    throw ConfigError("data.source must be mnist or synthetic, got '" + source + "'");
  }
  const double fraction = cfg.get_double("data.detector_train_fraction");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("data.detector_train_fraction must lie in (0,1)");
  return limit_test_portion(std::move(data), cfg.get_uint("data.test_limit"), fraction,
                            derive_seed(cfg.seed(), "folds"));
}

AttackPool build_attack_pool(const Dataset& data, const BnnModel& model, const PredictionRule& rule) {
  const auto predicted = predict_batch(model, data.test.x, rule).labels;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == data.test.y[i]) keep.push_back(i);
  if (keep.empty()) throw ContractError("the model classifies no test point correctly; nothing to attack");
  AttackPool pool;
  pool.points = data.test.subset(keep);
  pool.test_index = keep;
  for (std::size_t i : keep) pool.split.push_back(data.test_split[i]);
  pool.clean_accuracy = static_cast<double>(keep.size()) / static_cast<double>(predicted.size());
  return pool;
}

FilterResult filter_eval_set(const LabeledSet& naturals, const AdvBatch& adv, const BnnModel& model,
                             const PredictionRule& rule) {
  if (adv.size() != naturals.size()) throw DimensionError("adversarial batch and naturals differ in size");
  const auto predicted = predict_batch(model, naturals.x, rule).labels;
  FilterResult out;
  for (std::size_t i = 0; i < naturals.size(); ++i) {
    if (predicted[i] == naturals.y[i])
      out.naturals.push_back(i);
    else
      ++out.dropped_naturals;
    if (adv.adversarial[i])
      out.adversarials.push_back(i);
    else
      ++out.dropped_adversarials;
  }
  std::ostringstream log;
  log << "kept " << out.naturals.size() << " naturals (dropped " << out.dropped_naturals << " misclassified), kept "
      << out.adversarials.size() << " adversarials (dropped " << out.dropped_adversarials << " failed attacks)";
  out.log = log.str();
  if (out.naturals.empty() || out.adversarials.empty()) throw ContractError("evaluation set is empty: " + out.log);
  return out;
}

FoldRows fold_rows(const AttackPool& pool, const AdvBatch& adv, const FilterResult& kept, Split split) {
  if (adv.size() != pool.points.size()) throw DimensionError("adversarial batch does not match the attack pool");
  std::vector<std::size_t> nat, att;
  for (std::size_t i : kept.naturals)
    if (pool.split[i] == split) nat.push_back(i);
  for (std::size_t i : kept.adversarials)
    if (pool.split[i] == split) att.push_back(i);
  if (nat.empty() || att.empty())
    throw ContractError(std::string("the ") + (split == Split::detector_train ? "detector-train" : "detector-eval") +
                        " fold has no " + (nat.empty() ? "naturals" : "adversarials") + " after filtering");
  FoldRows rows;
  rows.naturals = pool.points.x.gather_rows(nat);
  rows.adversarials = adv.perturbed.gather_rows(att);
  for (std::size_t i : nat) rows.natural_labels.push_back(pool.points.y[i]);
  for (std::size_t i : att) rows.adversarial_labels.push_back(adv.true_labels[i]);
  return rows;
}

std::vector<std::size_t> candidate_taps(const BnnModel& model, std::size_t count) {
  const std::size_t total = model.tap_count();
  const std::size_t first = count == 0 || count >= total ? 0 : total - count;
  std::vector<std::size_t> taps;
  for (std::size_t t = first; t < total; ++t) taps.push_back(t);
  return taps;
}

DetectorModel fit_attack_detector(const BnnModel& model, const DetectorBasis& basis, const FoldRows& train,
                                  const DetectorConfig& config) {
  DetectorBasis sub;
  std::vector<std::size_t> positions;
  if (config.candidate_taps.empty()) {
    positions.resize(basis.taps.size());
    std::iota(positions.begin(), positions.end(), 0);
  } else {
    for (std::size_t t : config.candidate_taps) positions.push_back(basis.references.position(t));
  }
  for (std::size_t p : positions) {
    sub.taps.push_back(basis.taps[p]);
    sub.pcas.push_back(basis.pcas[p]);
  }
  sub.references = basis.references.restrict_to(positions);

  const PredictionRule rule{config.passes, config.seed, 128};
  const auto nat_classes = predict_batch(model, train.naturals, rule).labels;
  const auto adv_classes = predict_batch(model, train.adversarials, rule).labels;
  const Tensor nat = basis_features(model, sub, train.naturals, nat_classes, config, "fit-natural");
  const Tensor adv = basis_features(model, sub, train.adversarials, adv_classes, config, "fit-adversarial");
  return assemble_detector(model, sub, nat, adv, config);
}

CellResult evaluate_detector(const BnnModel& model, const DetectorModel& detector, const FoldRows& eval,
                             const ReportRow& identity) {
  CellResult cell;
  cell.natural_verdicts = detect_batch(model, detector, eval.naturals, "eval-natural");
  cell.adversarial_verdicts = detect_batch(model, detector, eval.adversarials, "eval-adversarial");
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& v : cell.natural_verdicts) {
    scores.push_back(v.score);
    labels.push_back(0);
  }
  for (const auto& v : cell.adversarial_verdicts) {
    scores.push_back(v.score);
    labels.push_back(1);
  }
  cell.roc = roc_auc(scores, labels);
  cell.row = identity;
  cell.row.auc = cell.roc.auc;
  cell.row.tpr01 = tpr_at_fpr(cell.roc, 0.01);
  cell.row.tpr05 = tpr_at_fpr(cell.roc, 0.05);
  cell.row.tpr10 = tpr_at_fpr(cell.roc, 0.10);
  cell.row.n_nat = cell.natural_verdicts.size();
  cell.row.n_adv = cell.adversarial_verdicts.size();
  return cell;
}

std::vector<double> per_class_auc(const CellResult& cell, const FoldRows& eval, int class_count,
                                  std::vector<std::size_t>* counts) {
  std::vector<double> out(static_cast<std::size_t>(class_count), std::numeric_limits<double>::quiet_NaN());
  if (counts) counts->assign(static_cast<std::size_t>(class_count), 0);
  for (int c = 0; c < class_count; ++c) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i = 0; i < cell.natural_verdicts.size(); ++i)
      if (eval.natural_labels[i] == c) {
        scores.push_back(cell.natural_verdicts[i].score);
        labels.push_back(0);
      }
    const std::size_t n0 = scores.size();
    for (std::size_t i = 0; i < cell.adversarial_verdicts.size(); ++i)
      if (eval.adversarial_labels[i] == c) {
        scores.push_back(cell.adversarial_verdicts[i].score);
        labels.push_back(1);
      }
    if (counts) (*counts)[static_cast<std::size_t>(c)] = scores.size();
    if (n0 == 0 || n0 == scores.size()) continue;
    out[static_cast<std::size_t>(c)] = roc_auc(scores, labels).auc;
  }
  return out;
}

BnnModel train_model(const RunConfig& cfg, const Dataset& data, LayerKind kind) {
  const ModelSpec spec = model_spec(cfg, data.train.dim(), data.class_count, kind);
  return train(data.train, spec, train_config(cfg)).model;
}

namespace {

struct AttackCell {
  AdvBatch batch;
  FilterResult kept;
  FoldRows train;
  FoldRows eval;
};

AttackCell run_cell(const RunConfig& cfg, const BnnModel& model, const AttackPool& pool, const PredictionRule& rule,
                    const std::string& name) {
  AttackCell cell;
  cell.batch = run_attack(model, pool.points.x, pool.points.y, attack_spec(cfg, name, model), rule);
  cell.kept = filter_eval_set(pool.points, cell.batch, model, rule);
  cell.train = fold_rows(pool, cell.batch, cell.kept, Split::detector_train);
  cell.eval = fold_rows(pool, cell.batch, cell.kept, Split::detector_eval);
  return cell;
}

double nan_mean(std::span<const double> values) {
  double total = 0.0;
  std::size_t count = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      total += v;
      ++count;
    }
  return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

AblationResult ablation_bnn_vs_dnn(const RunConfig& cfg, const Dataset& data, const BnnModel& bnn,
                                   const BnnModel& dnn) {
  if (dnn.stochastic()) throw ContractError("the ablation twin must be deterministic");
  const std::string attack = cfg.get("eval.ablation_attack");
  AblationResult result;
  std::vector<double> aucs[2];
  std::vector<std::size_t> counts[2];
  const BnnModel* models[2] = {&bnn, &dnn};
  for (int v = 0; v < 2; ++v) {
    const BnnModel& model = *models[v];
    const PredictionRule rule = prediction_rule(cfg, model);
    const AttackPool pool = build_attack_pool(data, model, rule);
    const AttackCell cell = run_cell(cfg, model, pool, rule, attack);
    const DetectorConfig dcfg = detector_config(cfg, model);
    const DetectorBasis basis = build_basis(model, data.train, dcfg);
    const DetectorModel detector = fit_attack_detector(model, basis, cell.train, dcfg);
    ReportRow id{data.name, attack, v == 0 ? "ablation_bnn" : "ablation_dnn"};
    id.seed = cfg.seed();
    const CellResult scored = evaluate_detector(model, detector, cell.eval, id);
    aucs[v] = per_class_auc(scored, cell.eval, data.class_count, &counts[v]);
    (v == 0 ? result.bnn : result.dnn) = scored.row;
  }
  for (int c = 0; c < data.class_count; ++c) {
    const auto i = static_cast<std::size_t>(c);
    result.rows.push_back({c, aucs[0][i], aucs[1][i], counts[0][i], counts[1][i]});
  }
  result.mean_bnn = nan_mean(aucs[0]);
  result.mean_dnn = nan_mean(aucs[1]);
  return result;
}

BenchmarkResult run_benchmark(const RunConfig& cfg, BenchmarkOptions options) {
  BenchmarkResult result;
  const Dataset data = prepare_dataset(cfg);
  const BnnModel model = options.model ? *options.model : train_model(cfg, data, LayerKind::variational);
  const PredictionRule rule = prediction_rule(cfg, model);
  const AttackPool pool = build_attack_pool(data, model, rule);
  result.test_accuracy = pool.clean_accuracy;
  const DetectorConfig dcfg = detector_config(cfg, model);
  const DetectorBasis basis = build_basis(model, data.train, dcfg);
  if (options.attacks.empty()) options.attacks = cfg.get_list("attack.names");

  result.report.digest = cfg.digest();
  result.report.notes.push_back(
      "filtering: failed adversarials and misclassified naturals are removed before scoring");
  std::vector<std::pair<std::string, AttackCell>> cells;
  for (const auto& name : options.attacks) {
    AttackCell cell = run_cell(cfg, model, pool, rule, name);
    const DetectorModel detector = fit_attack_detector(model, basis, cell.train, dcfg);
    ReportRow id{data.name, name, "bnn"};
    id.seed = cfg.seed();
    const CellResult scored = evaluate_detector(model, detector, cell.eval, id);
    result.report.rows.push_back(scored.row);
    result.report.notes.push_back(name + ": " + cell.kept.log);
    if (!options.out_dir.empty()) write_text_file(options.out_dir / ("roc_" + name + "_bnn.csv"), roc_csv(scored.roc));
    result.detectors.emplace_back(name, detector);
    result.batches.emplace_back(name, cell.batch);
    cells.emplace_back(name, std::move(cell));
  }

  auto find_cell = [&](const std::string& name) -> const AttackCell* {
    for (const auto& [n, c] : cells)
      if (n == name) return &c;
    return nullptr;
  };
  const AttackCell* pgd_cell = find_cell("pgd");
  const AttackCell* rpgd_cell = find_cell("rpgd");
  if (options.white_box && pgd_cell && rpgd_cell) {
    DetectorConfig wb = dcfg;
    wb.candidate_taps = candidate_taps(model, cfg.get_uint("eval.white_box_taps"));
    const DetectorModel detector = fit_attack_detector(model, basis, pgd_cell->train, wb);
    for (const auto& [name, cell] : {std::pair{"pgd", pgd_cell}, std::pair{"rpgd", rpgd_cell}}) {
      ReportRow id{data.name, name, "last3"};
      id.seed = cfg.seed();
      const CellResult scored = evaluate_detector(model, detector, cell->eval, id);
      result.report.rows.push_back(scored.row);
      if (!options.out_dir.empty())
        write_text_file(options.out_dir / ("roc_" + std::string(name) + "_last3.csv"), roc_csv(scored.roc));
    }
    result.detectors.emplace_back("pgd_last3", detector);
  }

  if (options.ablation) {
    const BnnModel twin = options.twin ? *options.twin : train_model(cfg, data, LayerKind::deterministic);
    result.ablation = ablation_bnn_vs_dnn(cfg, data, model, twin);
    result.report.rows.push_back(result.ablation->bnn);
    result.report.rows.push_back(result.ablation->dnn);
    if (!options.out_dir.empty()) write_text_file(options.out_dir / "ablation.csv", ablation_csv(*result.ablation));
  }
  if (!options.out_dir.empty()) {
    write_text_file(options.out_dir / "report.csv", report_csv(result.report.rows));
    write_text_file(options.out_dir / "report.txt", report_table(result.report.rows));
  }
  return result;
}

std::string roc_csv(const RocCurve& curve) {
  std::ostringstream out;
  out << "threshold,fpr,tpr\n";
  for (const auto& p : curve.points)
    out << (std::isinf(p.threshold) ? std::string("inf") : format_double(p.threshold)) << ','
        << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  return out.str();
}

std::string report_csv_header() { return "dataset,attack,variant,auc,tpr01,tpr05,tpr10,n_nat,n_adv,seed"; }

std::string report_csv_row(const ReportRow& r) {
  std::ostringstream out;
  out << r.dataset << ',' << r.attack << ',' << r.variant << ',' << format_double(r.auc) << ','
      << format_double(r.tpr01) << ',' << format_double(r.tpr05) << ',' << format_double(r.tpr10) << ',' << r.n_nat
      << ',' << r.n_adv << ',' << r.seed;
  return out.str();
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::string out = report_csv_header() + "\n";
  for (const auto& r : rows) out += report_csv_row(r) + "\n";
  return out;
}

std::vector<ReportRow> parse_report_csv(std::string_view text) {
  std::vector<ReportRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != report_csv_header())
    throw FormatError("report CSV header mismatch, expected '" + report_csv_header() + "'", 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string item; std::getline(ls, item, ',');) f.push_back(item);
    if (f.size() != 10) throw FormatError("report CSV row has " + std::to_string(f.size()) + " fields", 0);
    ReportRow r;
    r.dataset = f[0];
    r.attack = f[1];
    r.variant = f[2];
    try {
      r.auc = std::stod(f[3]);
      r.tpr01 = std::stod(f[4]);
      r.tpr05 = std::stod(f[5]);
      r.tpr10 = std::stod(f[6]);
      r.n_nat = std::stoull(f[7]);
      r.n_adv = std::stoull(f[8]);
      r.seed = std::stoull(f[9]);
    } catch (const std::exception&) {
      throw FormatError("report CSV row has a malformed number: " + line, 0);
    }
    rows.push_back(r);
  }
  return rows;
}

std::string report_table(std::span<const ReportRow> rows) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "dataset" << std::setw(8) << "attack" << std::setw(14) << "variant"
      << std::right << std::setw(8) << "AUC" << std::setw(10) << "TPR@0.01" << std::setw(10) << "TPR@0.05"
      << std::setw(10) << "TPR@0.10" << std::setw(7) << "n_nat" << std::setw(7) << "n_adv" << '\n';
  out << std::fixed << std::setprecision(3);
  for (const auto& r : rows)
    out << std::left << std::setw(10) << r.dataset << std::setw(8) << r.attack << std::setw(14) << r.variant
        << std::right << std::setw(8) << r.auc << std::setw(10) << r.tpr01 << std::setw(10) << r.tpr05
        << std::setw(10) << r.tpr10 << std::setw(7) << r.n_nat << std::setw(7) << r.n_adv << '\n';
  return out.str();
}

std::string ablation_csv(const AblationResult& result) {
  std::ostringstream out;
  out << "class,auc_bnn,auc_dnn,n_bnn,n_dnn\n";
  auto fmt = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  for (const auto& r : result.rows)
    out << r.cls << ',' << fmt(r.auc_bnn) << ',' << fmt(r.auc_dnn) << ',' << r.n_bnn << ',' << r.n_dnn << '\n';
  out << "mean," << fmt(result.mean_bnn) << ',' << fmt(result.mean_dnn) << ",,\n";
  return out.str();
}

}  // namespace bater
