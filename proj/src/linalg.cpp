#include "genbp/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstring>
#include <string>

#include "genbp/kernels.hpp"

namespace genbp::linalg {

namespace {
using EMat = Eigen::MatrixXd;
using EMap = Eigen::Map<EMat>;
using CEMap = Eigen::Map<const EMat>;
using CVMap = Eigen::Map<const Eigen::VectorXd>;
}  // namespace

Mat identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat hcat(const Mat& a, const Mat& b) {
  if (a.cols() == 0 && a.rows() == 0) return b;
  if (b.cols() == 0 && b.rows() == 0) return a;
  require(a.rows() == b.rows(), "hcat: row mismatch");
  Mat out(a.rows(), a.cols() + b.cols());
  std::memcpy(out.data(), a.data(), a.size() * sizeof(double));
  std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(double));
  return out;
}

Mat take_rows(const Mat& a, std::size_t offset, std::size_t count) {
  require(offset + count <= a.rows(), "take_rows: block out of range");
  Mat out(count, a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    std::memcpy(out.col(j), a.col(j) + offset, count * sizeof(double));
  }
  return out;
}

Vec matvec(const Mat& a, const Vec& x) {
  require(a.cols() == x.size(), "matvec: dimension mismatch");
  Vec y(a.rows(), 0.0);
  kernels::gemm_nn(a.rows(), 1, a.cols(), 1.0, a.data(), x.data(), 0.0,
                   y.data());
  return y;
}

Vec matvec_t(const Mat& a, const Vec& x) {
  require(a.rows() == x.size(), "matvec_t: dimension mismatch");
  Vec y(a.cols(), 0.0);
  kernels::gemm_tn(a.cols(), 1, a.rows(), 1.0, a.data(), x.data(), 0.0,
                   y.data());
  return y;
}

std::optional<Mat> chol_lower(const Mat& a) {
  require(a.rows() == a.cols(), "chol: matrix not square");
  const std::size_t n = a.rows();
  if (n == 0) return Mat(0, 0);
  Eigen::LLT<EMat> llt(CEMap(a.data(), n, n));
  if (llt.info() != Eigen::Success) return std::nullopt;
  Mat g(n, n);
  EMap(g.data(), n, n) = llt.matrixL();
  return g;
}

Mat inv_transpose_lower(const Mat& g) {
  const std::size_t n = g.rows();
  Mat f(n, n);
  if (n == 0) return f;
  EMap out(f.data(), n, n);
  out = CEMap(g.data(), n, n)
            .transpose()
            .triangularView<Eigen::Upper>()
            .solve(EMat::Identity(n, n));
  return f;
}

Vec chol_solve(const Mat& g, const Vec& b) {
  const std::size_t n = g.rows();
  require(b.size() == n, "chol_solve: dimension mismatch");
  Vec x = b;
  Eigen::Map<Eigen::VectorXd> xv(x.data(), n);
  CEMap gm(g.data(), n, n);
  gm.triangularView<Eigen::Lower>().solveInPlace(xv);
  gm.transpose().triangularView<Eigen::Upper>().solveInPlace(xv);
  return x;
}

Mat chol_solve_mat(const Mat& g, const Mat& b) {
  const std::size_t n = g.rows();
  require(b.rows() == n, "chol_solve_mat: dimension mismatch");
  Mat x = b;
  EMap xm(x.data(), n, x.cols());
  CEMap gm(g.data(), n, n);
  gm.triangularView<Eigen::Lower>().solveInPlace(xm);
  gm.transpose().triangularView<Eigen::Upper>().solveInPlace(xm);
  return x;
}

double logdet_from_chol(const Mat& g) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) acc += std::log(g(i, i));
  return 2.0 * acc;
}

SymEig sym_eig(const Mat& a) {
  require(a.rows() == a.cols(), "sym_eig: matrix not square");
  const std::size_t n = a.rows();
  SymEig out;
  out.values.resize(n);
  out.vectors = Mat(n, n);
  if (n == 0) return out;
  Eigen::SelfAdjointEigenSolver<EMat> es(CEMap(a.data(), n, n));
  if (es.info() != Eigen::Success) {
    throw NumericalError("sym_eig: eigendecomposition failed");
  }
  // Eigen returns ascending order; flip to descending.
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = es.eigenvalues()(static_cast<Eigen::Index>(n - 1 - i));
    EMap(out.vectors.data(), n, n).col(static_cast<Eigen::Index>(i)) =
        es.eigenvectors().col(static_cast<Eigen::Index>(n - 1 - i));
  }
  return out;
}

Mat spd_inverse(const Mat& a, const char* what) {
  require(a.rows() == a.cols(), "spd_inverse: matrix not square");
  const std::size_t n = a.rows();
  if (n == 0) return Mat(0, 0);
  Eigen::LLT<EMat> llt(CEMap(a.data(), n, n));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": matrix not positive definite");
  }
  Mat inv(n, n);
  EMap(inv.data(), n, n) = llt.solve(EMat::Identity(n, n));
  return inv;
}

Vec solve_spd(const Mat& a, const Vec& b, const char* what) {
  require(a.rows() == a.cols() && a.rows() == b.size(),
          "solve_spd: dimension mismatch");
  const std::size_t n = a.rows();
  Eigen::LLT<EMat> llt(CEMap(a.data(), n, n));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": matrix not positive definite");
  }
  Vec x(n);
  Eigen::Map<Eigen::VectorXd>(x.data(), n) = llt.solve(CVMap(b.data(), n));
  return x;
}

}  // namespace genbp::linalg
