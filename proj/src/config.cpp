// SPDX-License-Identifier: Apache-2.0
#include "bater/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"

namespace bater {
namespace {

enum class Kind { text, real, integer, count, flag, list };

struct Field {
  const char* key;
  const char* value;
  Kind kind;
};

// Schema with defaults.
const Field kSchema[] = {
    {"run.seed", "1", Kind::count},
    {"run.out_dir", "runs/default", Kind::text},
    {"run.jobs", "1", Kind::count},
    {"data.source", "mnist", Kind::text},
    {"data.train_images", "data/mnist10k/train-images-idx3-ubyte", Kind::text},
    {"data.train_labels", "data/mnist10k/train-labels-idx1-ubyte", Kind::text},
    {"data.test_images", "data/mnist10k/t2k-images-idx3-ubyte", Kind::text},
    {"data.test_labels", "data/mnist10k/t2k-labels-idx1-ubyte", Kind::text},
    {"data.synth_classes", "3", Kind::count},
    {"data.synth_n", "2400", Kind::count},
    {"data.synth_dim", "20", Kind::count},
    {"data.synth_separation", "6", Kind::real},
    {"data.test_limit", "1000", Kind::count},
    {"data.detector_train_fraction", "0.2", Kind::real},
    {"model.hidden", "256,128", Kind::list},
    {"model.prior_std", "1", Kind::real},
    {"model.init_log_std", "-4", Kind::real},
    {"train.epochs", "20", Kind::count},
    {"train.batch_size", "64", Kind::count},
    {"train.learning_rate", "0.1", Kind::real},
    {"train.momentum", "0.9", Kind::real},
    {"train.final_lr_fraction", "0", Kind::real},
    {"train.kl_scale_mode", "per_example", Kind::text},
    {"train.kl_weight", "1", Kind::real},
    {"train.mc_samples_per_step", "1", Kind::count},
    {"predict.passes", "4", Kind::count},
    {"attack.names", "fgsm,pgd,cw0,cw10,cw20,rpgd", Kind::list},
    {"attack.grad_passes", "4", Kind::count},
    {"attack.chunk", "250", Kind::count},
    {"attack.fgsm.epsilon", "0.3", Kind::real},
    {"attack.pgd.epsilon", "0.3", Kind::real},
    {"attack.pgd.steps", "40", Kind::count},
    {"attack.pgd.step_size", "0.1", Kind::real},
    {"attack.pgd.random_start", "true", Kind::flag},
    {"attack.cw.steps", "100", Kind::count},
    {"attack.cw.binary_search_steps", "5", Kind::count},
    {"attack.cw.initial_c", "0.01", Kind::real},
    {"attack.cw.learning_rate", "0.1", Kind::real},
    {"attack.rpgd.lambda", "0.1", Kind::real},
    {"detector.components", "10", Kind::count},
    {"detector.passes", "4", Kind::count},
    {"detector.n_ref", "200", Kind::count},
    {"detector.subsets", "5", Kind::count},
    {"detector.select", "3", Kind::count},
    {"detector.folds", "5", Kind::count},
    {"detector.statistic", "min", Kind::text},
    {"detector.pca_rows", "2000", Kind::count},
    {"detector.threshold", "0.5", Kind::real},
    {"detector.l2", "0.001", Kind::real},
    {"eval.white_box_taps", "3", Kind::count},
    {"eval.ablation_attack", "pgd", Kind::text},
    {"eval.gate_auc", "0", Kind::real},
    {"theory.family", "linear", Kind::text},
    {"theory.trials", "500", Kind::count},
    {"theory.mc_samples", "10000", Kind::count},
    {"theory.dim", "8", Kind::count},
    {"theory.hidden", "8", Kind::count},
    {"theory.weight_std", "0.3", Kind::real},
    {"theory.delta_fraction", "0.01", Kind::real},
    {"theory.bootstrap", "50", Kind::count},
    {"theory.law", "gaussian", Kind::text},
};

const Field* find_field(std::string_view key) {
  for (const auto& f : kSchema)
    if (key == f.key) return &f;
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

void validate(const Field& field, const std::string& value) {
  const std::string where = std::string(field.key) + " = '" + value + "'";
  switch (field.kind) {
    case Kind::text:
      if (value.empty()) throw ConfigError(where + ": value must be nonempty");
      return;
    case Kind::real: {
      double v = 0.0;
      if (!parse_number(value, v)) throw ConfigError(where + ": expected a number");
      return;
    }
    case Kind::integer: {
      std::int64_t v = 0;
      if (!parse_number(value, v)) throw ConfigError(where + ": expected an integer");
      return;
    }
    case Kind::count: {
      std::uint64_t v = 0;
      if (!parse_number(value, v)) throw ConfigError(where + ": expected a nonnegative integer");
      return;
    }
    case Kind::flag:
      if (value != "true" && value != "false") throw ConfigError(where + ": expected true or false");
      return;
    case Kind::list:
      return;
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& f : kSchema) values_[f.key] = f.value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* field = find_field(key);
  if (!field) throw ConfigError("unknown config key '" + key + "'");
  validate(*field, value);
  values_[key] = value;
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      cfg.set(full, trim(std::string_view(line).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return from_text(read_text_file(path));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_number(get(key), v)) throw ConfigError(key + " is not a number");
  return v;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_number(get(key), v)) throw ConfigError(key + " is not an integer");
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  if (!parse_number(get(key), v)) throw ConfigError(key + " is not a nonnegative integer");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  for (std::string item; std::getline(in, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

std::string RunConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::digest() const {
  // Output location and thread count do not change any result.
  std::string text;
  for (const auto& [k, v] : values_)
    if (k != "run.out_dir" && k != "run.jobs") text += k + "=" + v + "\n";
  return hex32(crc32(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size())));
}

ModelSpec model_spec(const RunConfig& cfg, std::size_t input_dim, int class_count, LayerKind kind) {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.class_count = class_count;
  spec.kind = kind;
  spec.hidden.clear();
  for (const auto& h : cfg.get_list("model.hidden")) {
    std::size_t v = 0;
    if (!parse_number(std::string_view(h), v) || v == 0) throw ConfigError("model.hidden entries must be positive");
    spec.hidden.push_back(v);
  }
  spec.prior_std = cfg.get_double("model.prior_std");
  if (!(spec.prior_std > 0.0)) throw ConfigError("model.prior_std must be positive");
  spec.init_log_std = cfg.get_double("model.init_log_std");
  return spec;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.epochs = static_cast<int>(cfg.get_uint("train.epochs"));
  t.batch_size = cfg.get_uint("train.batch_size");
  t.learning_rate = cfg.get_double("train.learning_rate");
  t.momentum = cfg.get_double("train.momentum");
  t.final_lr_fraction = cfg.get_double("train.final_lr_fraction");
  const std::string mode = cfg.get("train.kl_scale_mode");
  if (mode == "per_minibatch")
    t.kl_scale_mode = KlScaleMode::per_minibatch;
  else if (mode == "per_example")
    t.kl_scale_mode = KlScaleMode::per_example;
  else if (mode == "none")
    t.kl_scale_mode = KlScaleMode::none;
  else
    throw ConfigError("train.kl_scale_mode must be per_minibatch, per_example or none");
  t.kl_weight = cfg.get_double("train.kl_weight");
  t.mc_samples_per_step = static_cast<int>(cfg.get_uint("train.mc_samples_per_step"));
  t.seed = derive_seed(cfg.seed(), "train");
  if (t.epochs < 1 || t.batch_size < 1 || !(t.learning_rate > 0.0) || t.mc_samples_per_step < 1)
    throw ConfigError("train settings must be positive");
  return t;
}

PredictionRule prediction_rule(const RunConfig& cfg, const BnnModel& model) {
  const int passes = model.stochastic() ? static_cast<int>(cfg.get_uint("predict.passes")) : 1;
  if (passes < 1) throw ConfigError("predict.passes must be positive");
  return PredictionRule{passes, derive_seed(cfg.seed(), "predict"), 128};
}

std::vector<std::string> known_attacks() { return {"fgsm", "pgd", "cw0", "cw10", "cw20", "rpgd"}; }

AttackSpec attack_spec(const RunConfig& cfg, const std::string& name, const BnnModel& model) {
  AttackSpec s;
  s.grad_passes = model.stochastic() ? static_cast<int>(cfg.get_uint("attack.grad_passes")) : 1;
  s.chunk = cfg.get_uint("attack.chunk");
  s.seed = derive_seed(cfg.seed(), "attack-" + name);
  if (name == "fgsm") {
    s.kind = AttackKind::fgsm;
    s.epsilon = cfg.get_double("attack.fgsm.epsilon");
    s.steps = 1;
  } else if (name == "pgd" || name == "rpgd") {
    s.kind = name == "pgd" ? AttackKind::pgd : AttackKind::restricted_pgd;
    s.epsilon = cfg.get_double("attack.pgd.epsilon");
    s.steps = static_cast<int>(cfg.get_uint("attack.pgd.steps"));
    s.step_size = cfg.get_double("attack.pgd.step_size");
    s.random_start = cfg.get_bool("attack.pgd.random_start");
    s.lambda = name == "rpgd" ? cfg.get_double("attack.rpgd.lambda") : 0.0;
  } else if (name.rfind("cw", 0) == 0) {
    double kappa = 0.0;
    if (!parse_number(std::string_view(name).substr(2), kappa) || kappa < 0.0)
      throw ConfigError("C&W attack names take the form cw<confidence>, got '" + name + "'");
    s.kind = AttackKind::cw;
    s.confidence = kappa;
    s.epsilon = 1.0;
    s.steps = static_cast<int>(cfg.get_uint("attack.cw.steps"));
    s.binary_search_steps = static_cast<int>(cfg.get_uint("attack.cw.binary_search_steps"));
    s.initial_c = cfg.get_double("attack.cw.initial_c");
    s.cw_learning_rate = cfg.get_double("attack.cw.learning_rate");
  } else {
    throw ConfigError("unknown attack '" + name + "' (known: fgsm, pgd, cw<k>, rpgd)");
  }
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw ConfigError("attack " + name + ": " + e.what());
  }
  return s;
}

DetectorConfig detector_config(const RunConfig& cfg, const BnnModel& model) {
  DetectorConfig d;
  d.components = cfg.get_uint("detector.components");
  d.passes = model.stochastic() ? static_cast<int>(cfg.get_uint("detector.passes")) : 1;
  d.n_ref = cfg.get_uint("detector.n_ref");
  d.subsets = cfg.get_uint("detector.subsets");
  d.select = cfg.get_uint("detector.select");
  d.folds = cfg.get_uint("detector.folds");
  d.statistic = parse_statistic(cfg.get("detector.statistic"));
  d.pca_rows = cfg.get_uint("detector.pca_rows");
  d.threshold = cfg.get_double("detector.threshold");
  d.logistic.l2 = cfg.get_double("detector.l2");
  d.seed = derive_seed(cfg.seed(), "detector");
  if (d.components < 1 || d.passes < 1 || d.subsets < 1 || d.select < 1 || d.folds < 2)
    throw ConfigError("detector settings out of range");
  return d;
}

}  // namespace bater
