// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, attack, detect-fit, detect-eval, ablation, theory-check, report.
#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/eval.hpp"
#include "bater/kernels.hpp"
#include "bater/parallel.hpp"
#include "bater/theory.hpp"

namespace fs = std::filesystem;
using namespace bater;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned jobs = 0;
};

RunConfig load_config(const Common& c) {
  std::string path = c.config_path;
  if (path.empty())
    if (const char* env = std::getenv("BATER_CONFIG")) path = env;
  RunConfig cfg = path.empty() ? RunConfig() : RunConfig::from_file(path);
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.seed) cfg.set("run.seed", std::to_string(*c.seed));
  if (!c.out_dir.empty()) cfg.set("run.out_dir", c.out_dir);
  if (c.jobs) cfg.set("run.jobs", std::to_string(c.jobs));
  set_max_jobs(static_cast<unsigned>(cfg.get_uint("run.jobs")));
  return cfg;
}

fs::path model_stem(const RunConfig& cfg, bool twin = false) { return cfg.out_dir() / (twin ? "model_dnn" : "model"); }
fs::path adv_stem(const RunConfig& cfg, const std::string& name) { return cfg.out_dir() / ("adv_" + name); }
fs::path detector_stem(const RunConfig& cfg, const std::string& name) { return cfg.out_dir() / ("detector_" + name); }

BnnModel require_model(const RunConfig& cfg, bool twin = false) {
  const fs::path stem = model_stem(cfg, twin);
  if (!artifact_exists(stem))
    throw DependencyError("missing model artifact " + manifest_path(stem).string() + " (run `bater train" +
                          (twin ? " --twin" : "") + "` first)");
  return load_model(stem);
}

void write_with_digest(const fs::path& path, std::string_view text, const RunConfig& cfg) {
  write_text_file(path, text);
  write_text_file(path.string() + ".meta", "config_digest = " + cfg.digest() + "\n");
}

std::vector<std::pair<std::string, std::string>> provenance(const RunConfig& cfg) {
  return {{"config_digest", cfg.digest()}, {"root_seed", std::to_string(cfg.seed())}};
}

std::vector<std::string> expand_attacks(const RunConfig& cfg, const std::vector<std::string>& names) {
  if (names.empty() || (names.size() == 1 && names[0] == "all")) return cfg.get_list("attack.names");
  return names;
}

int cmd_train(const RunConfig& cfg, bool twin) {
  const Dataset data = prepare_dataset(cfg);
  const LayerKind kind = twin ? LayerKind::deterministic : LayerKind::variational;
  const ModelSpec spec = model_spec(cfg, data.train.dim(), data.class_count, kind);
  const TrainResult result = train(data.train, spec, train_config(cfg));
  RunConfig full = cfg;
  full.set("data.test_limit", "0");
  const Dataset all = prepare_dataset(full);
  const double acc = accuracy(result.model, all.test, prediction_rule(cfg, result.model));
  auto extra = provenance(cfg);
  extra.emplace_back("test_accuracy", format_double(acc));
  const fs::path stem = model_stem(cfg, twin);
  save_model(result.model, stem, extra);
  std::string curve = "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    curve += std::to_string(e + 1) + "," + format_double(result.epoch_loss[e]) + "\n";
  write_with_digest(cfg.out_dir() / (twin ? "train_curve_dnn.csv" : "train_curve.csv"), curve, cfg);
  std::cout << "train: " << (twin ? "deterministic twin" : "bnn") << " test accuracy " << format_double(acc) << " on "
            << all.test.size() << " points -> " << manifest_path(stem).string() << "\n";
  return 0;
}

int cmd_attack(const RunConfig& cfg, const std::vector<std::string>& names, bool sweep) {
  const BnnModel model = require_model(cfg);
  const Dataset data = prepare_dataset(cfg);
  const PredictionRule rule = prediction_rule(cfg, model);
  const AttackPool pool = build_attack_pool(data, model, rule);
  for (const auto& name : expand_attacks(cfg, names)) {
    const AttackSpec spec = attack_spec(cfg, name, model);
    const AdvBatch batch = run_attack(model, pool.points.x, pool.points.y, spec, rule);
    auto extra = provenance(cfg);
    extra.emplace_back("attack_name", name);
    save_adv_batch(batch, spec, adv_stem(cfg, name), extra);
    write_with_digest(cfg.out_dir() / ("adv_" + name + ".csv"), adv_summary_csv(batch), cfg);
    double l2 = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (batch.adversarial[i]) {
        l2 += batch.l2[i];
        ++hits;
      }
    std::cout << "attack " << name << ": success " << format_double(batch.success_rate()) << " on " << batch.size()
              << " correctly classified points, mean rms l2 " << format_double(hits ? l2 / hits : 0.0) << "\n";
  }
  if (sweep) {
    AttackSpec spec = attack_spec(cfg, "rpgd", model);
    const double grid[] = {0.01, 0.1, 1.0};
    const auto rows = sweep_lambda(model, pool.points.x, pool.points.y, spec, rule, grid);
    std::string csv = "lambda,success_rate,mean_final_std\n";
    for (const auto& r : rows)
      csv += format_double(r.lambda) + "," + format_double(r.success_rate) + "," + format_double(r.mean_final_std) +
             "\n";
    write_with_digest(cfg.out_dir() / "lambda_sweep.csv", csv, cfg);
    std::cout << "attack: lambda sweep over {0.01, 0.1, 1} -> lambda_sweep.csv\n";
  }
  return 0;
}

struct Prepared {
  Dataset data;
  AttackPool pool;
  AdvBatch batch;
  FilterResult kept;
};

Prepared prepare_attack(const RunConfig& cfg, const BnnModel& model, const std::string& name) {
  const fs::path stem = adv_stem(cfg, name);
  if (!artifact_exists(stem))
    throw DependencyError("missing attack artifact " + manifest_path(stem).string() + " (run `bater attack --name " +
                          name + "` first)");
  Prepared p{prepare_dataset(cfg), {}, load_adv_batch(stem), {}};
  const PredictionRule rule = prediction_rule(cfg, model);
  p.pool = build_attack_pool(p.data, model, rule);
  if (p.pool.points.x != p.batch.originals)
    throw FormatError("attack artifact " + stem.string() + " was built from a different model or dataset", 0);
  p.kept = filter_eval_set(p.pool.points, p.batch, model, rule);
  return p;
}

int cmd_detect_fit(const RunConfig& cfg, const std::string& name, bool white_box) {
  const BnnModel model = require_model(cfg);
  const Prepared p = prepare_attack(cfg, model, name);
  DetectorConfig dcfg = detector_config(cfg, model);
  if (white_box) dcfg.candidate_taps = candidate_taps(model, cfg.get_uint("eval.white_box_taps"));
  const DetectorBasis basis = build_basis(model, p.data.train, dcfg);
  const FoldRows train_rows = fold_rows(p.pool, p.batch, p.kept, Split::detector_train);
  const DetectorModel detector = fit_attack_detector(model, basis, train_rows, dcfg);
  const std::string det_name = white_box ? name + "_last3" : name;
  auto extra = provenance(cfg);
  extra.emplace_back("fitted_on", name);
  save_detector(detector, detector_stem(cfg, det_name), extra);
  for (const auto& w : detector.logistic.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "detect-fit " << det_name << ": layers";
  for (const auto& n : detector.tap_names) std::cout << ' ' << n;
  std::cout << " (" << statistic_name(detector.statistic) << "), " << train_rows.naturals.rows() << " naturals / "
            << train_rows.adversarials.rows() << " adversarials -> " << manifest_path(detector_stem(cfg, det_name)).string()
            << "\n";
  return 0;
}

int cmd_detect_eval(const RunConfig& cfg, const std::string& name, std::string det_name) {
  if (det_name.empty()) det_name = name;
  const BnnModel model = require_model(cfg);
  const fs::path dstem = detector_stem(cfg, det_name);
  if (!artifact_exists(dstem))
    throw DependencyError("missing detector artifact " + manifest_path(dstem).string() +
                          " (run `bater detect-fit` first)");
  const DetectorModel detector = load_detector(dstem);
  const Prepared p = prepare_attack(cfg, model, name);
  const FoldRows eval_rows = fold_rows(p.pool, p.batch, p.kept, Split::detector_eval);
  const std::string variant =
      det_name == name ? "bnn" : (det_name.ends_with("_last3") ? "last3" : "det_" + det_name);
  ReportRow id{p.data.name, name, variant};
  id.seed = cfg.seed();
  const CellResult cell = evaluate_detector(model, detector, eval_rows, id);
  const std::string tag = name + "_" + variant;
  std::vector<Verdict> all = cell.natural_verdicts;
  all.insert(all.end(), cell.adversarial_verdicts.begin(), cell.adversarial_verdicts.end());
  write_with_digest(cfg.out_dir() / ("verdicts_" + tag + ".csv"), verdict_csv(detector, all), cfg);
  write_with_digest(cfg.out_dir() / ("roc_" + tag + ".csv"), roc_csv(cell.roc), cfg);
  const ReportRow rows[] = {cell.row};
  write_with_digest(cfg.out_dir() / ("eval_" + tag + ".csv"), report_csv(rows), cfg);
  std::cout << "detect-eval " << tag << ": AUC " << format_double(cell.row.auc) << ", TPR@0.05 "
            << format_double(cell.row.tpr05) << " (" << cell.row.n_nat << " naturals, " << cell.row.n_adv
            << " adversarials; " << p.kept.log << ")\n";
  return 0;
}

int cmd_ablation(const RunConfig& cfg) {
  const BnnModel bnn = require_model(cfg);
  const Dataset data = prepare_dataset(cfg);
  BnnModel dnn = artifact_exists(model_stem(cfg, true)) ? load_model(model_stem(cfg, true))
                                                        : train_model(cfg, data, LayerKind::deterministic);
  if (!artifact_exists(model_stem(cfg, true))) save_model(dnn, model_stem(cfg, true), provenance(cfg));
  const AblationResult result = ablation_bnn_vs_dnn(cfg, data, bnn, dnn);
  write_with_digest(cfg.out_dir() / "ablation.csv", ablation_csv(result), cfg);
  const ReportRow rows[] = {result.bnn, result.dnn};
  write_with_digest(cfg.out_dir() / "eval_ablation.csv", report_csv(rows), cfg);
  std::cout << "ablation: mean per-class AUC bnn " << format_double(result.mean_bnn) << " vs deterministic twin "
            << format_double(result.mean_dnn) << " -> ablation.csv\n";
  return 0;
}

int cmd_theory(const RunConfig& cfg) {
  FamilySpec family;
  family.family = parse_family(cfg.get("theory.family"));
  family.law = parse_law(cfg.get("theory.law"));
  family.dim = cfg.get_uint("theory.dim");
  family.hidden = cfg.get_uint("theory.hidden");
  family.weight_std = cfg.get_double("theory.weight_std");
  family.delta_fraction = cfg.get_double("theory.delta_fraction");
  family.bootstrap = cfg.get_uint("theory.bootstrap");
  const PropositionReport report = verify_proposition(family, cfg.get_uint("theory.trials"),
                                                      cfg.get_uint("theory.mc_samples"),
                                                      derive_seed(cfg.seed(), "theory"));
  write_with_digest(cfg.out_dir() / "theory.csv", proposition_csv(report), cfg);
  write_with_digest(cfg.out_dir() / "theory.txt", proposition_summary(report), cfg);
  std::cout << "theory-check: " << proposition_summary(report);
  return 0;
}

int cmd_report(const RunConfig& cfg, bool force) {
  std::vector<fs::path> inputs;
  if (fs::exists(cfg.out_dir()))
    for (const auto& entry : fs::directory_iterator(cfg.out_dir())) {
      const std::string file = entry.path().filename().string();
      if (file.starts_with("eval_") && file.ends_with(".csv")) inputs.push_back(entry.path());
    }
  if (inputs.empty())
    throw DependencyError("no eval_*.csv files under " + cfg.out_dir().string() + " (run `bater detect-eval` first)");
  std::sort(inputs.begin(), inputs.end());
  std::vector<ReportRow> rows;
  const std::string digest = cfg.digest();
  for (const auto& path : inputs) {
    const fs::path meta = path.string() + ".meta";
    const std::string stamp = fs::exists(meta) ? Manifest::parse("meta 1\n" + read_text_file(meta)).get("config_digest")
                                               : std::string("missing");
    if (stamp != digest && !force)
      throw ConfigError(path.string() + " was produced under config digest " + stamp + ", current digest is " +
                        digest + " (use --force to aggregate anyway)");
    const auto part = parse_report_csv(read_text_file(path));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  write_with_digest(cfg.out_dir() / "report.csv", report_csv(rows), cfg);
  const std::string table = report_table(rows);
  write_with_digest(cfg.out_dir() / "report.txt", table, cfg);
  std::cout << table;
  const double gate = cfg.get_double("eval.gate_auc");
  for (const auto& r : rows)
    if (r.variant == "bnn" && r.auc < gate) {
      std::cerr << "report: gate failed, " << r.attack << " AUC " << format_double(r.auc) << " < " << format_double(gate)
                << "\n";
      return 5;
    }
  std::cout << "report: " << rows.size() << " rows -> report.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian hidden-layer dispersion detector for adversarial inputs"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "config file (default: $BATER_CONFIG)");
  app.add_option("--set", common.overrides, "override, section.key=value (repeatable)");
  app.add_option("--seed", common.seed, "root seed");
  app.add_option("--out", common.out_dir, "output directory");
  app.add_option("--jobs", common.jobs, "worker thread cap");

  bool twin = false;
  auto* train_cmd = app.add_subcommand("train", "train the BNN (or, with --twin, its deterministic twin)");
  train_cmd->add_flag("--twin", twin, "train the deterministic twin instead");

  std::vector<std::string> attack_names;
  bool sweep = false;
  auto* attack_cmd = app.add_subcommand("attack", "generate adversarial batches");
  attack_cmd->add_option("--name", attack_names, "attack name(s): fgsm, pgd, cw0, cw10, cw20, rpgd, or all");
  attack_cmd->add_flag("--sweep-lambda", sweep, "also sweep the restricted-PGD penalty over {0.01, 0.1, 1}");

  std::string fit_attack;
  bool white_box = false;
  auto* fit_cmd = app.add_subcommand("detect-fit", "fit a detector on the detector-train fold");
  fit_cmd->add_option("--attack", fit_attack, "attack whose adversarials train the detector")->required();
  fit_cmd->add_flag("--white-box", white_box, "restrict layer candidates to the last taps");

  std::string eval_attack, eval_detector;
  auto* eval_cmd = app.add_subcommand("detect-eval", "score the detector-eval fold");
  eval_cmd->add_option("--attack", eval_attack, "attack to evaluate")->required();
  eval_cmd->add_option("--detector", eval_detector, "detector name (default: the attack name)");

  auto* ablation_cmd = app.add_subcommand("ablation", "BNN versus deterministic twin, per-class AUC");

  auto* theory_cmd = app.add_subcommand("theory-check", "Monte-Carlo check of the randomness inequality");
  std::string family;
  std::optional<std::uint64_t> trials, mc;
  theory_cmd->add_option("--family", family, "linear or one_hidden");
  theory_cmd->add_option("--trials", trials, "trial count");
  theory_cmd->add_option("--mc-samples", mc, "weight draws per side");

  bool force = false;
  auto* report_cmd = app.add_subcommand("report", "aggregate eval CSVs into report.csv and a table");
  report_cmd->add_flag("--force", force, "aggregate even when config digests differ");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!family.empty()) common.overrides.push_back("theory.family=" + family);
    if (trials) common.overrides.push_back("theory.trials=" + std::to_string(*trials));
    if (mc) common.overrides.push_back("theory.mc_samples=" + std::to_string(*mc));
    const RunConfig cfg = load_config(common);
    if (*train_cmd) return cmd_train(cfg, twin);
    if (*attack_cmd) return cmd_attack(cfg, attack_names, sweep);
    if (*fit_cmd) return cmd_detect_fit(cfg, fit_attack, white_box);
    if (*eval_cmd) return cmd_detect_eval(cfg, eval_attack, eval_detector);
    if (*ablation_cmd) return cmd_ablation(cfg);
    if (*theory_cmd) return cmd_theory(cfg);
    if (*report_cmd) return cmd_report(cfg, force);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
