#pragma once

#include <cstddef>
#include <string>
#include <string_view>

// Data-parallel primitives behind the structured linear algebra.
//
// All matrices are column-major with contiguous columns (leading dimension ==
// number of rows).  Two implementations are provided: a scalar reference in
// kernels_scalar.cpp and an AVX2+FMA variant in kernels_avx2.cpp.  The active
// backend is chosen at startup from CPU capabilities and may be overridden
// with set_backend() or the GENBP_KERNELS environment variable.
//
// Scalar and SIMD variants may differ in the last bits (different summation
// order); equivalence is enforced by tests up to a small relative tolerance.

namespace genbp::kernels {

struct Backend {
  const char* name;

  double (*dot)(std::size_t n, const double* x, const double* y);
  // y += a*x
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  // x *= a
  void (*scal)(std::size_t n, double a, double* x);
  // out = x .* y
  void (*hadamard)(std::size_t n, const double* x, const double* y,
                   double* out);
  double (*sum)(std::size_t n, const double* x);
  double (*max_abs)(std::size_t n, const double* x);

  // mean over columns: mean[i] = (1/cols) * sum_j A[i,j]
  void (*col_mean)(std::size_t rows, std::size_t cols, const double* a,
                   double* mean);
  // out[:,j] = A[:,j] - c
  void (*sub_col_broadcast)(std::size_t rows, std::size_t cols,
                            const double* a, const double* c, double* out);
  // out[:,j] = d .* A[:,j]
  void (*row_scale)(std::size_t rows, std::size_t cols, const double* d,
                    const double* a, double* out);

  // C = alpha*A*B + beta*C with A m-by-k, B k-by-n, C m-by-n.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, const double* b, double beta, double* c);
  // C = alpha*A^T*B + beta*C with A k-by-m, B k-by-n, C m-by-n.
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, const double* b, double beta, double* c);
  // C = alpha*A*B^T + beta*C with A m-by-k, B n-by-k, C m-by-n.
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, double alpha,
                  const double* a, const double* b, double beta, double* c);
};

const Backend& scalar_backend();
#ifdef GENBP_HAVE_AVX2
const Backend& avx2_backend();
#endif

// Currently active backend (never null).
const Backend& active();

// Select a backend by name ("scalar", "avx2").  Returns false if the backend
// is not compiled in or not supported by this CPU.
bool set_backend(std::string_view name);

// Names of backends usable on this machine, comma separated.
std::string available_backends();

// Convenience forwarders.
inline double dot(std::size_t n, const double* x, const double* y) {
  return active().dot(n, x, y);
}
inline void axpy(std::size_t n, double a, const double* x, double* y) {
  active().axpy(n, a, x, y);
}
inline void scal(std::size_t n, double a, double* x) {
  active().scal(n, a, x);
}
inline void hadamard(std::size_t n, const double* x, const double* y,
                     double* out) {
  active().hadamard(n, x, y, out);
}
inline double sum(std::size_t n, const double* x) {
  return active().sum(n, x);
}
inline double max_abs(std::size_t n, const double* x) {
  return active().max_abs(n, x);
}
inline void col_mean(std::size_t rows, std::size_t cols, const double* a,
                     double* mean) {
  active().col_mean(rows, cols, a, mean);
}
inline void sub_col_broadcast(std::size_t rows, std::size_t cols,
                              const double* a, const double* c, double* out) {
  active().sub_col_broadcast(rows, cols, a, c, out);
}
inline void row_scale(std::size_t rows, std::size_t cols, const double* d,
                      const double* a, double* out) {
  active().row_scale(rows, cols, d, a, out);
}
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, const double* b, double beta, double* c) {
  active().gemm_nn(m, n, k, alpha, a, b, beta, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, const double* b, double beta, double* c) {
  active().gemm_tn(m, n, k, alpha, a, b, beta, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* a, const double* b, double beta, double* c) {
  active().gemm_nt(m, n, k, alpha, a, b, beta, c);
}

}  // namespace genbp::kernels
