// SPDX-License-Identifier: Apache-2.0
#include "bater/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bater/artifact.hpp"
#include "bater/errors.hpp"
#include "bater/rng.hpp"

namespace bater {

LabeledSet LabeledSet::subset(std::span<const std::size_t> indices) const {
  LabeledSet out{x.gather_rows(indices), {}};
  out.y.reserve(indices.size());
  for (auto i : indices) out.y.push_back(y[i]);
  return out;
}

std::vector<std::size_t> Dataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < test_split.size(); ++i)
    if (test_split[i] == split) out.push_back(i);
  return out;
}

namespace {

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& file) {
  if (bytes.size() < offset + 4) throw FormatError(file + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledSet parse_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  const auto images = read_binary_file(image_path);
  const auto labels = read_binary_file(label_path);
  const auto image_name = image_path.string();
  const auto label_name = label_path.string();

  const auto image_magic = read_be32(images, 0, image_name);
  if (image_magic != 2051)
    throw FormatError(image_name + ": image magic " + std::to_string(image_magic) + " is not 2051", 0);
  const auto label_magic = read_be32(labels, 0, label_name);
  if (label_magic != 2049)
    throw FormatError(label_name + ": label magic " + std::to_string(label_magic) + " is not 2049", 0);

  const std::size_t count = read_be32(images, 4, image_name);
  const std::size_t rows = read_be32(images, 8, image_name);
  const std::size_t cols = read_be32(images, 12, image_name);
  const std::size_t label_count = read_be32(labels, 4, label_name);
  if (count != label_count)
    throw FormatError(label_name + ": " + std::to_string(label_count) + " labels for " + std::to_string(count) +
                          " images",
                      4);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(image_name + ": empty image set", 4);

  const std::size_t pixels = rows * cols;
  constexpr std::size_t kImageHeader = 16;
  constexpr std::size_t kLabelHeader = 8;
  if (images.size() < kImageHeader + count * pixels)
    throw FormatError(image_name + ": pixel payload truncated, expected " + std::to_string(kImageHeader + count * pixels) +
                          " bytes",
                      images.size());
  if (labels.size() < kLabelHeader + count)
    throw FormatError(label_name + ": label payload truncated, expected " + std::to_string(kLabelHeader + count) +
                          " bytes",
                      labels.size());

  std::vector<double> values(count * pixels);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = images[kImageHeader + i] / 255.0;
  LabeledSet out{Tensor(Shape{count, pixels}, std::move(values)), std::vector<int>(count)};
  for (std::size_t i = 0; i < count; ++i) out.y[i] = labels[kLabelHeader + i];
  return out;
}

void write_mnist_idx(const LabeledSet& set, std::size_t rows, std::size_t cols,
                     const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  if (set.dim() != rows * cols) throw DimensionError("image rows*cols does not match sample width");
  std::ofstream images(image_path, std::ios::binary | std::ios::trunc);
  std::ofstream labels(label_path, std::ios::binary | std::ios::trunc);
  if (!images || !labels) throw Error("cannot write IDX files");
  put_be32(images, 2051);
  put_be32(images, static_cast<std::uint32_t>(set.size()));
  put_be32(images, static_cast<std::uint32_t>(rows));
  put_be32(images, static_cast<std::uint32_t>(cols));
  for (double v : set.x.data()) images.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  put_be32(labels, 2049);
  put_be32(labels, static_cast<std::uint32_t>(set.size()));
  for (int y : set.y) labels.put(static_cast<char>(static_cast<unsigned char>(y)));
}

std::vector<Split> split_test_portion(std::size_t test_count, double train_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(test_count);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_stream(seed, "detector-split");
  std::shuffle(order.begin(), order.end(), rng);
  const auto fold = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(test_count)));
  std::vector<Split> tags(test_count, Split::detector_eval);
  for (std::size_t i = 0; i < fold; ++i) tags[order[i]] = Split::detector_train;
  return tags;
}

Dataset limit_test_portion(Dataset data, std::size_t limit, double detector_train_fraction, std::uint64_t seed) {
  if (limit != 0 && limit < data.test.size()) {
    data.test = data.test.subset([&] {
      std::vector<std::size_t> keep(limit);
      std::iota(keep.begin(), keep.end(), 0);
      return keep;
    }());
  }
  data.test_split = split_test_portion(data.test.size(), detector_train_fraction, seed);
  return data;
}

Dataset synth_dataset(int classes, std::size_t n, std::size_t dim, double separation, std::uint64_t seed) {
  if (classes <= 0 || n == 0 || dim == 0) throw ContractError("synth_dataset needs positive classes, n and dim");
  constexpr double kStd = 0.03;
  auto rng = make_stream(seed, "synth");
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, kStd);
  // Random sign directions of unit norm; two of them are about sqrt(2) apart.
  const double offset = separation * kStd / std::sqrt(2.0 * static_cast<double>(dim));
  std::vector<double> means(static_cast<std::size_t>(classes) * dim);
  for (auto& m : means) m = 0.5 + (coin(rng) ? offset : -offset);

  std::vector<double> values(n * dim);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double* mean = means.data() + static_cast<std::size_t>(labels[i]) * dim;
    for (std::size_t d = 0; d < dim; ++d) values[i * dim + d] = std::clamp(mean[d] + noise(rng), 0.0, 1.0);
  }
  LabeledSet all{Tensor(Shape{n, dim}, std::move(values)), std::move(labels)};

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t train_count = std::max<std::size_t>(1, std::min(n - 1, n * 3 / 4));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_count));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(train_count), order.end());
  if (test_idx.empty()) throw ContractError("synth_dataset needs n >= 2");

  Dataset data;
  data.name = "synthetic";
  data.class_count = classes;
  data.train = all.subset(train_idx);
  data.test = all.subset(test_idx);
  data.test_split = split_test_portion(data.test.size(), 0.2, seed);
  return data;
}

}  // namespace bater
