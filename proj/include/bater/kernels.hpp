// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense arithmetic kernels behind every matrix product and elementwise sweep
// in the library. Each kernel has a portable scalar reference and, on x86-64,
// an AVX2+FMA variant. The variant is chosen once per process: the best ISA
// the CPU supports, unless BATER_ISA=scalar|avx2 overrides it.
//
// Variants agree to rounding (FMA contracts differently), not bitwise, so a
// run is bit-reproducible only for a fixed ISA selection.

#include <cstddef>
#include <string_view>

namespace bater::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  /// C[n,m] (+)= A[n,k] * B[k,m], all row-major.
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                  std::size_t m, bool accumulate);
  /// C[n,d] (+)= A[n,m] * B[d,m]^T.
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                  std::size_t d, bool accumulate);
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// out = mu + sigma * eps
  void (*reparameterize)(const double* mu, const double* sigma, const double* eps, double* out,
                         std::size_t n);
  double (*squared_distance)(const double* x, const double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table() noexcept;
bool cpu_supports(Isa isa) noexcept;

/// The table every library routine dispatches through.
const KernelTable& active() noexcept;
std::string_view active_name() noexcept;

inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m, bool accumulate = false) {
  active().gemm_nn(a, b, c, n, k, m, accumulate);
}
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
                    std::size_t d, bool accumulate = false) {
  active().gemm_nt(a, b, c, n, m, d, accumulate);
}
/// C[k,m] (+)= A[n,k]^T * B[n,m]; transposes A into scratch and runs gemm_nn.
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m,
             bool accumulate = false);
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void reparameterize(const double* mu, const double* sigma, const double* eps, double* out,
                           std::size_t n) {
  active().reparameterize(mu, sigma, eps, out, n);
}
inline double squared_distance(const double* x, const double* y, std::size_t n) {
  return active().squared_distance(x, y, n);
}

}  // namespace bater::kernels
