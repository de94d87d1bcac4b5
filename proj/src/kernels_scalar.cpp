#include "genbp/kernels.hpp"

#include <cmath>
#include <cstring>

// Reference implementations.  Keep these straightforward: they are the oracle
// the SIMD variants are tested against.

namespace genbp::kernels {
namespace scalar {

double dot(std::size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal(std::size_t n, double a, double* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void hadamard(std::size_t n, const double* x, const double* y, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

double sum(std::size_t n, const double* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double max_abs(std::size_t n, const double* x) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void col_mean(std::size_t rows, std::size_t cols, const double* a,
              double* mean) {
  std::memset(mean, 0, rows * sizeof(double));
  for (std::size_t j = 0; j < cols; ++j) {
    const double* col = a + j * rows;
    for (std::size_t i = 0; i < rows; ++i) mean[i] += col[i];
  }
  const double inv = cols > 0 ? 1.0 / static_cast<double>(cols) : 0.0;
  for (std::size_t i = 0; i < rows; ++i) mean[i] *= inv;
}

void sub_col_broadcast(std::size_t rows, std::size_t cols, const double* a,
                       const double* c, double* out) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double* src = a + j * rows;
    double* dst = out + j * rows;
    for (std::size_t i = 0; i < rows; ++i) dst[i] = src[i] - c[i];
  }
}

void row_scale(std::size_t rows, std::size_t cols, const double* d,
               const double* a, double* out) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double* src = a + j * rows;
    double* dst = out + j * rows;
    for (std::size_t i = 0; i < rows; ++i) dst[i] = d[i] * src[i];
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, const double* b, double beta, double* c) {
  for (std::size_t j = 0; j < n; ++j) {
    double* cj = c + j * m;
    if (beta == 0.0) {
      std::memset(cj, 0, m * sizeof(double));
    } else if (beta != 1.0) {
      for (std::size_t i = 0; i < m; ++i) cj[i] *= beta;
    }
    for (std::size_t l = 0; l < k; ++l) {
      const double blj = alpha * b[l + j * k];
      if (blj == 0.0) continue;
      const double* al = a + l * m;
      for (std::size_t i = 0; i < m; ++i) cj[i] += blj * al[i];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, const double* b, double beta, double* c) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double* cj = c + j * m;
    for (std::size_t i = 0; i < m; ++i) {
      const double v = alpha * dot(k, a + i * k, bj);
      cj[i] = beta == 0.0 ? v : beta * cj[i] + v;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, const double* b, double beta, double* c) {
  for (std::size_t j = 0; j < n; ++j) {
    double* cj = c + j * m;
    if (beta == 0.0) {
      std::memset(cj, 0, m * sizeof(double));
    } else if (beta != 1.0) {
      for (std::size_t i = 0; i < m; ++i) cj[i] *= beta;
    }
    for (std::size_t l = 0; l < k; ++l) {
      const double bjl = alpha * b[j + l * n];
      if (bjl == 0.0) continue;
      const double* al = a + l * m;
      for (std::size_t i = 0; i < m; ++i) cj[i] += bjl * al[i];
    }
  }
}

}  // namespace scalar

const Backend& scalar_backend() {
  static const Backend backend = {
      "scalar",
      scalar::dot,
      scalar::axpy,
      scalar::scal,
      scalar::hadamard,
      scalar::sum,
      scalar::max_abs,
      scalar::col_mean,
      scalar::sub_col_broadcast,
      scalar::row_scale,
      scalar::gemm_nn,
      scalar::gemm_tn,
      scalar::gemm_nt,
  };
  return backend;
}

}  // namespace genbp::kernels
