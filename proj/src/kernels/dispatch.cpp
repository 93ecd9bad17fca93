// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <string_view>
#include <vector>

#include "bater/kernels.hpp"

namespace bater::kernels {

#if !defined(BATER_HAVE_AVX2)
const KernelTable* avx2_table() noexcept { return nullptr; }
#endif

bool cpu_supports(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(BATER_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

namespace {

const KernelTable& select() noexcept {
  const char* forced = std::getenv("BATER_ISA");
  const std::string_view choice = forced ? forced : "auto";
  if (choice == "scalar") return scalar_table();
  if (avx2_table() && cpu_supports(Isa::avx2)) return *avx2_table();
  return scalar_table();
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& table = select();
  return table;
}

std::string_view active_name() noexcept { return active().name; }

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate) {
  thread_local std::vector<double> transposed;
  transposed.resize(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) transposed[p * n + i] = a[i * k + p];
  active().gemm_nn(transposed.data(), b, c, k, n, m, accumulate);
}

}  // namespace bater::kernels
