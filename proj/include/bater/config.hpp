// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bater/attacks.hpp"
#include "bater/bnn.hpp"
#include "bater/detector.hpp"

namespace bater {

/// Sectioned key = value configuration. Every key has a schema default; unknown
/// keys and malformed values are rejected with ConfigError before any work starts.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_text(std::string_view text);
  static RunConfig from_file(const std::filesystem::path& path);

  /// "section.key=value".
  void apply_override(std::string_view assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Canonical sorted text. The digest is the CRC-32 of the same text without run.out_dir and run.jobs.
  std::string canonical_text() const;
  std::string digest() const;

  std::uint64_t seed() const { return get_uint("run.seed"); }
  std::filesystem::path out_dir() const { return get("run.out_dir"); }

  const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

ModelSpec model_spec(const RunConfig& cfg, std::size_t input_dim, int class_count, LayerKind kind);
TrainConfig train_config(const RunConfig& cfg);
PredictionRule prediction_rule(const RunConfig& cfg, const BnnModel& model);
/// Attack names: fgsm, pgd, cw0, cw10, cw20, rpgd. Gradient passes drop to 1 for deterministic models.
AttackSpec attack_spec(const RunConfig& cfg, const std::string& name, const BnnModel& model);
std::vector<std::string> known_attacks();
DetectorConfig detector_config(const RunConfig& cfg, const BnnModel& model);

}  // namespace bater
