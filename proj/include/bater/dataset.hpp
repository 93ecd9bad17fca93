// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bater/tensor.hpp"

namespace bater {

/// Inputs in [0,1] (one row per sample) with integer class labels.
struct LabeledSet {
  Tensor x;
  std::vector<int> y;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t dim() const noexcept { return x.cols(); }
  LabeledSet subset(std::span<const std::size_t> indices) const;
};

enum class Split { detector_train, detector_eval };

/// Train portion for the classifier, plus a test portion partitioned into the
/// detector's training folds (20%) and evaluation folds (80%).
struct Dataset {
  std::string name;
  int class_count = 0;
  LabeledSet train;
  LabeledSet test;
  std::vector<Split> test_split;

  std::vector<std::size_t> indices_of(Split split) const;
  LabeledSet part(Split split) const { return test.subset(indices_of(split)); }
};

/// Parses an IDX image file (magic 2051) and label file (magic 2049). Pixels
/// are scaled to [0,1] by /255 and each image becomes one flattened row.
/// Throws FormatError with the failing byte offset on a bad magic, truncated
/// payload or mismatched counts.
LabeledSet parse_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Writes IDX files holding `set` (pixels are rounded back to bytes).
void write_mnist_idx(const LabeledSet& set, std::size_t rows, std::size_t cols,
                     const std::filesystem::path& image_path, const std::filesystem::path& label_path);

/// Gaussian class blobs inside the unit box. Class means sit about
/// `separation` within-class standard deviations apart; 75% of the `n`
/// samples form the train portion.
Dataset synth_dataset(int classes, std::size_t n, std::size_t dim, double separation, std::uint64_t seed);

/// Seeded 20/80 partition of `test_count` rows into detector train/eval folds.
std::vector<Split> split_test_portion(std::size_t test_count, double train_fraction, std::uint64_t seed);

/// Keeps the first `limit` test rows (all when limit is 0) and re-partitions them.
Dataset limit_test_portion(Dataset data, std::size_t limit, double detector_train_fraction, std::uint64_t seed);

}  // namespace bater
