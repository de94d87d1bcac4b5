#pragma once

#include <optional>

#include "genbp/mat.hpp"

// Dense helpers shared by the structured-matrix code.  Element shuffling and
// multiplies go through the kernels layer; the factorization leaves
// (Cholesky, symmetric eigendecomposition) are delegated to Eigen.

namespace genbp::linalg {

Mat identity(std::size_t n);

// [a b] column concatenation; either side may be empty (0 columns).
Mat hcat(const Mat& a, const Mat& b);

// Row block a[offset : offset+count, :].
Mat take_rows(const Mat& a, std::size_t offset, std::size_t count);

// y = A x
Vec matvec(const Mat& a, const Vec& x);
// y = A^T x
Vec matvec_t(const Mat& a, const Vec& x);

// Lower-triangular L with L L^T = A, or nullopt when A is not positive
// definite.
std::optional<Mat> chol_lower(const Mat& a);

// F = (G^T)^{-1} for lower-triangular G, so that F F^T = (G G^T)^{-1}.
Mat inv_transpose_lower(const Mat& g);

// Solve (G G^T) x = b given the lower Cholesky factor G.
Vec chol_solve(const Mat& g, const Vec& b);
Mat chol_solve_mat(const Mat& g, const Mat& b);

// log det(G G^T) = 2 * sum(log diag(G))
double logdet_from_chol(const Mat& g);

struct SymEig {
  Vec values;   // descending
  Mat vectors;  // columns matching values
};
SymEig sym_eig(const Mat& a);

// Inverse of a symmetric positive definite matrix; throws NumericalError.
Mat spd_inverse(const Mat& a, const char* what);

// Solve A x = b for symmetric positive definite A; throws NumericalError.
Vec solve_spd(const Mat& a, const Vec& b, const char* what);

}  // namespace genbp::linalg
