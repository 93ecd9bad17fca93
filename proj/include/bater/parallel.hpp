// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace bater {

/// Worker cap for every parallel loop in the process; 1 means run inline.
void set_max_jobs(unsigned jobs) noexcept;
unsigned max_jobs() noexcept;

/// Calls `body(chunk, begin, end)` for each fixed-size chunk of [0, count).
///
/// Chunk boundaries depend only on `count` and `chunk_size`, never on the
/// worker count, so per-chunk RNG streams give identical results for any
/// `--jobs` value. The first exception thrown by a chunk is rethrown.
void for_each_chunk(std::size_t count, std::size_t chunk_size,
                    const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& body);

}  // namespace bater
