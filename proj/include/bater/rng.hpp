// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace bater {

using Rng = std::mt19937_64;

/// Seed of the stream named (stage, index) under `root`. Streams for distinct
/// names or indices are statistically independent, so parallel workers can
/// each own one without coordinating.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage, std::uint64_t index = 0) noexcept;

inline Rng make_stream(std::uint64_t root, std::string_view stage, std::uint64_t index = 0) {
  return Rng(derive_seed(root, stage, index));
}

/// Fill with i.i.d. standard normal draws.
void fill_normal(Rng& rng, std::span<double> out);

}  // namespace bater
