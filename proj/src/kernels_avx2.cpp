#ifdef GENBP_HAVE_AVX2

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "genbp/kernels.hpp"

// AVX2 + FMA variants.  Column-major throughout; unaligned loads keep the
// memory layout unconstrained.

namespace genbp::kernels {
namespace avx2 {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal(std::size_t n, double a, double* x) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

void hadamard(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

double sum(std::size_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double max_abs(std::size_t n, const double* x) {
  const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_max_pd(acc, _mm256_and_pd(mask, _mm256_loadu_pd(x + i)));
  }
  double lanes[4];
  _mm256_storeu_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]),
                      std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, std::fabs(x[i]));
  return m;
}

void col_mean(std::size_t rows, std::size_t cols, const double* a,
              double* mean) {
  std::memset(mean, 0, rows * sizeof(double));
  for (std::size_t j = 0; j < cols; ++j) {
    const double* col = a + j * rows;
    std::size_t i = 0;
    for (; i + 4 <= rows; i += 4) {
      _mm256_storeu_pd(mean + i, _mm256_add_pd(_mm256_loadu_pd(mean + i),
                                               _mm256_loadu_pd(col + i)));
    }
    for (; i < rows; ++i) mean[i] += col[i];
  }
  if (cols > 0) scal(rows, 1.0 / static_cast<double>(cols), mean);
}

void sub_col_broadcast(std::size_t rows, std::size_t cols, const double* a,
                       const double* c, double* out) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double* src = a + j * rows;
    double* dst = out + j * rows;
    std::size_t i = 0;
    for (; i + 4 <= rows; i += 4) {
      _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(src + i),
                                              _mm256_loadu_pd(c + i)));
    }
    for (; i < rows; ++i) dst[i] = src[i] - c[i];
  }
}

void row_scale(std::size_t rows, std::size_t cols, const double* d,
               const double* a, double* out) {
  for (std::size_t j = 0; j < cols; ++j) {
    const double* src = a + j * rows;
    double* dst = out + j * rows;
    std::size_t i = 0;
    for (; i + 4 <= rows; i += 4) {
      _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(d + i),
                                              _mm256_loadu_pd(src + i)));
    }
    for (; i < rows; ++i) dst[i] = d[i] * src[i];
  }
}

// 8x4 register-tiled panel: accumulates over the full k extent before
// touching C, so C is written exactly once.
static void gemm_nn_tile8x4(std::size_t m, std::size_t k, double alpha,
                            const double* a, const double* b, std::size_t ldb,
                            double beta, double* c, std::size_t ldc,
                            std::size_t i) {
  __m256d acc[4][2];
  for (int jj = 0; jj < 4; ++jj) {
    if (beta == 0.0) {
      acc[jj][0] = _mm256_setzero_pd();
      acc[jj][1] = _mm256_setzero_pd();
    } else {
      const __m256d bv = _mm256_set1_pd(beta);
      acc[jj][0] = _mm256_mul_pd(bv, _mm256_loadu_pd(c + jj * ldc + i));
      acc[jj][1] = _mm256_mul_pd(bv, _mm256_loadu_pd(c + jj * ldc + i + 4));
    }
  }
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = a + l * m + i;
    const __m256d a0 = _mm256_loadu_pd(al);
    const __m256d a1 = _mm256_loadu_pd(al + 4);
    for (int jj = 0; jj < 4; ++jj) {
      const __m256d bv = _mm256_set1_pd(alpha * b[l + jj * ldb]);
      acc[jj][0] = _mm256_fmadd_pd(a0, bv, acc[jj][0]);
      acc[jj][1] = _mm256_fmadd_pd(a1, bv, acc[jj][1]);
    }
  }
  for (int jj = 0; jj < 4; ++jj) {
    _mm256_storeu_pd(c + jj * ldc + i, acc[jj][0]);
    _mm256_storeu_pd(c + jj * ldc + i + 4, acc[jj][1]);
  }
}

// Single-column fallback used for the j remainder.
static void gemm_nn_col(std::size_t m, std::size_t k, double alpha,
                        const double* a, const double* bcol, double beta,
                        double* cj) {
  if (beta == 0.0) {
    std::memset(cj, 0, m * sizeof(double));
  } else if (beta != 1.0) {
    scal(m, beta, cj);
  }
  for (std::size_t l = 0; l < k; ++l) {
    axpy(m, alpha * bcol[l], a + l * m, cj);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, const double* b, double beta, double* c) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* bj = b + j * k;
    double* cj = c + j * m;
    std::size_t i = 0;
    for (; i + 8 <= m; i += 8) {
      gemm_nn_tile8x4(m, k, alpha, a, bj, k, beta, cj, m, i);
    }
    if (i < m) {
      // row remainder, scalar over the 4 columns
      for (int jj = 0; jj < 4; ++jj) {
        double* col = cj + jj * m;
        for (std::size_t r = i; r < m; ++r) {
          double acc = beta == 0.0 ? 0.0 : beta * col[r];
          for (std::size_t l = 0; l < k; ++l) {
            acc += alpha * a[r + l * m] * bj[l + jj * k];
          }
          col[r] = acc;
        }
      }
    }
  }
  for (; j < n; ++j) {
    gemm_nn_col(m, k, alpha, a, b + j * k, beta, c + j * m);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha,
             const double* a, const double* b, double beta, double* c) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const double* b0 = b + (j + 0) * k;
    const double* b1 = b + (j + 1) * k;
    const double* b2 = b + (j + 2) * k;
    const double* b3 = b + (j + 3) * k;
    for (std::size_t i = 0; i < m; ++i) {
      const double* ai = a + i * k;
      __m256d acc0 = _mm256_setzero_pd();
      __m256d acc1 = _mm256_setzero_pd();
      __m256d acc2 = _mm256_setzero_pd();
      __m256d acc3 = _mm256_setzero_pd();
      std::size_t l = 0;
      for (; l + 4 <= k; l += 4) {
        const __m256d av = _mm256_loadu_pd(ai + l);
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + l), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + l), acc1);
        acc2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + l), acc2);
        acc3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + l), acc3);
      }
      double s0 = hsum(acc0), s1 = hsum(acc1), s2 = hsum(acc2),
             s3 = hsum(acc3);
      for (; l < k; ++l) {
        s0 += ai[l] * b0[l];
        s1 += ai[l] * b1[l];
        s2 += ai[l] * b2[l];
        s3 += ai[l] * b3[l];
      }
      double* row = c + i;
      row[(j + 0) * m] = alpha * s0 + (beta == 0.0 ? 0.0 : beta * row[(j + 0) * m]);
      row[(j + 1) * m] = alpha * s1 + (beta == 0.0 ? 0.0 : beta * row[(j + 1) * m]);
      row[(j + 2) * m] = alpha * s2 + (beta == 0.0 ? 0.0 : beta * row[(j + 2) * m]);
      row[(j + 3) * m] = alpha * s3 + (beta == 0.0 ? 0.0 : beta * row[(j + 3) * m]);
    }
  }
  for (; j < n; ++j) {
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
      scal(m, beta, cj);
    }
    std::size_t l = 0;
    for (; l + 2 <= k; l += 2) {
      const __m256d b0 = _mm256_set1_pd(alpha * b[j + l * n]);
      const __m256d b1 = _mm256_set1_pd(alpha * b[j + (l + 1) * n]);
      const double* a0 = a + l * m;
      const double* a1 = a + (l + 1) * m;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        __m256d cv = _mm256_loadu_pd(cj + i);
        cv = _mm256_fmadd_pd(b0, _mm256_loadu_pd(a0 + i), cv);
        cv = _mm256_fmadd_pd(b1, _mm256_loadu_pd(a1 + i), cv);
        _mm256_storeu_pd(cj + i, cv);
      }
      for (; i < m; ++i) {
        cj[i] += alpha * (b[j + l * n] * a0[i] + b[j + (l + 1) * n] * a1[i]);
      }
    }
    for (; l < k; ++l) {
      axpy(m, alpha * b[j + l * n], a + l * m, cj);
    }
  }
}

}  // namespace avx2

const Backend& avx2_backend() {
  static const Backend backend = {
      "avx2",
      avx2::dot,
      avx2::axpy,
      avx2::scal,
      avx2::hadamard,
      avx2::sum,
      avx2::max_abs,
      avx2::col_mean,
      avx2::sub_col_broadcast,
      avx2::row_scale,
      avx2::gemm_nn,
      avx2::gemm_tn,
      avx2::gemm_nt,
  };
  return backend;
}

}  // namespace genbp::kernels

#endif  // GENBP_HAVE_AVX2
