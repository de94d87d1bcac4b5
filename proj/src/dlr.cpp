#include "genbp/dlr.hpp"

#include <cmath>
#include <limits>

#include "genbp/kernels.hpp"
#include "genbp/linalg.hpp"

namespace genbp {

DlrMatrix::DlrMatrix(Vec nugget_diag, Mat comp, int s)
    : nugget(std::move(nugget_diag)), component(std::move(comp)), sign(s) {
  require(sign == 1 || sign == -1, "DlrMatrix: sign must be +1 or -1");
  require(component.cols() == 0 || component.rows() == nugget.size(),
          "DlrMatrix: component rows must match nugget length");
  if (component.cols() == 0 && component.rows() != nugget.size()) {
    component = Mat(nugget.size(), 0);
  }
}

DlrMatrix DlrMatrix::diagonal(Vec v, int s) {
  const std::size_t d = v.size();
  return DlrMatrix(std::move(v), Mat(d, 0), s);
}

DlrMatrix DlrMatrix::scaled_identity(std::size_t d, double value, int s) {
  return diagonal(Vec(d, value), s);
}

namespace dlr {

namespace {

Vec reciprocal_nugget(const DlrMatrix& k, const char* what) {
  Vec inv(k.dim());
  for (std::size_t i = 0; i < k.dim(); ++i) {
    if (k.nugget[i] == 0.0) {
      throw NumericalError(std::string(what) + ": zero nugget entry");
    }
    inv[i] = 1.0 / k.nugget[i];
  }
  return inv;
}

void symmetrize(Mat& a) {
  for (std::size_t j = 0; j < a.cols(); ++j) {
    for (std::size_t i = j + 1; i < a.rows(); ++i) {
      const double v = 0.5 * (a(i, j) + a(j, i));
      a(i, j) = v;
      a(j, i) = v;
    }
  }
}

// I + s * L^T V^{-1} L: the positive-definite form of the capacitance used
// by the Woodbury inverse, the determinant lemma and the PD check.
Mat cap_identity_form(const DlrMatrix& k, const Vec& vinv) {
  const std::size_t n = k.width();
  Mat w(k.dim(), n);
  kernels::row_scale(k.dim(), n, vinv.data(), k.component.data(), w.data());
  Mat cap(n, n);
  kernels::gemm_tn(n, n, k.dim(), static_cast<double>(k.sign),
                   k.component.data(), w.data(), 0.0, cap.data());
  for (std::size_t i = 0; i < n; ++i) cap(i, i) += 1.0;
  symmetrize(cap);
  return cap;
}

Mat chol_capacitance_jittered(Mat cap, const char* what) {
  auto g = linalg::chol_lower(cap);
  if (!g) {
    // Conditioning on noisy data can make the capacitance marginally
    // indefinite; retry once with a trace-scaled jitter.
    const std::size_t n = cap.rows();
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += cap(i, i);
    const double eps = 1e-10 * trace / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) cap(i, i) += eps;
    g = linalg::chol_lower(cap);
  }
  if (!g) {
    throw NumericalError(std::string(what) +
                         ": capacitance not positive definite (input matrix "
                         "is not positive definite)");
  }
  return *g;
}

}  // namespace

Mat densify(const DlrMatrix& k) {
  const std::size_t d = k.dim();
  Mat out(d, d);
  for (std::size_t i = 0; i < d; ++i) out(i, i) = k.nugget[i];
  if (k.width() > 0) {
    kernels::gemm_nt(d, d, k.width(), static_cast<double>(k.sign),
                     k.component.data(), k.component.data(), 1.0, out.data());
  }
  symmetrize(out);
  return out;
}

Mat matmul_dense(const DlrMatrix& k, const Mat& x) {
  require(x.rows() == k.dim(), "dlr::matmul_dense: dimension mismatch");
  Mat out(x.rows(), x.cols());
  kernels::row_scale(x.rows(), x.cols(), k.nugget.data(), x.data(),
                     out.data());
  const std::size_t n = k.width();
  if (n > 0) {
    Mat t(n, x.cols());
    kernels::gemm_tn(n, x.cols(), k.dim(), 1.0, k.component.data(), x.data(),
                     0.0, t.data());
    kernels::gemm_nn(k.dim(), x.cols(), n, static_cast<double>(k.sign),
                     k.component.data(), t.data(), 1.0, out.data());
  }
  return out;
}

Vec matvec(const DlrMatrix& k, const Vec& x) {
  require(x.size() == k.dim(), "dlr::matvec: dimension mismatch");
  Vec out(k.dim());
  kernels::hadamard(k.dim(), k.nugget.data(), x.data(), out.data());
  const std::size_t n = k.width();
  if (n > 0) {
    Vec t(n, 0.0);
    kernels::gemm_tn(n, 1, k.dim(), 1.0, k.component.data(), x.data(), 0.0,
                     t.data());
    kernels::gemm_nn(k.dim(), 1, n, static_cast<double>(k.sign),
                     k.component.data(), t.data(), 1.0, out.data());
  }
  return out;
}

DlrMatrix add(const DlrMatrix& a, const DlrMatrix& b) {
  require(a.dim() == b.dim(), "dlr::add: dimension mismatch");
  if (a.sign != b.sign && a.width() > 0 && b.width() > 0) {
    throw std::invalid_argument(
        "dlr::add: sign mismatch (only same-sign sums stay in DLR form)");
  }
  Vec v(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) v[i] = a.nugget[i] + b.nugget[i];
  const int sign = a.width() > 0 ? a.sign : b.sign;
  return DlrMatrix(std::move(v), linalg::hcat(a.component, b.component), sign);
}

DlrMatrix invert(const DlrMatrix& k) {
  const Vec vinv = reciprocal_nugget(k, "dlr::invert");
  const std::size_t d = k.dim();
  const std::size_t n = k.width();
  if (n == 0) {
    return DlrMatrix(vinv, Mat(d, 0), -k.sign);
  }
  // K^{-1} = V^{-1} - s W F (W F)^T with W = V^{-1} L and
  // F F^T = (I + s L^T V^{-1} L)^{-1}.
  Mat w(d, n);
  kernels::row_scale(d, n, vinv.data(), k.component.data(), w.data());
  const Mat cap = cap_identity_form(k, vinv);
  const Mat g = chol_capacitance_jittered(cap, "dlr::invert");
  const Mat f = linalg::inv_transpose_lower(g);
  Mat r(d, n);
  kernels::gemm_nn(d, n, n, 1.0, w.data(), f.data(), 0.0, r.data());
  return DlrMatrix(vinv, std::move(r), -k.sign);
}

DlrMatrix invert_dense_fallback(const DlrMatrix& k) {
  const Vec vinv = reciprocal_nugget(k, "dlr::invert_dense_fallback");
  const std::size_t d = k.dim();
  const Mat dense = densify(k);
  Mat inv = linalg::spd_inverse(dense, "dlr::invert_dense_fallback");
  // Spectral recovery: -s * (K^{-1} - V^{-1}) is positive semidefinite when
  // the input has honest DLR form.
  for (std::size_t i = 0; i < d; ++i) inv(i, i) -= vinv[i];
  if (k.sign > 0) kernels::scal(inv.size(), -1.0, inv.data());
  symmetrize(inv);
  const auto eig = linalg::sym_eig(inv);
  double scale = 0.0;
  for (double v : eig.values) scale = std::max(scale, std::fabs(v));
  // The recovered difference can sit far below the inverse itself; measure
  // "zero" against the larger of the two scales.
  for (double v : vinv) scale = std::max(scale, std::fabs(v));
  const double drop = 1e-12 * scale;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (eig.values[i] > drop) {
      ++kept;
    } else if (eig.values[i] < -drop) {
      throw NumericalError(
          "dlr::invert_dense_fallback: spectral recovery found a negative "
          "eigenvalue; input violates the DLR form assumption");
    }
  }
  Mat comp(d, kept);
  for (std::size_t j = 0; j < kept; ++j) {
    const double s = std::sqrt(eig.values[j]);
    const double* q = eig.vectors.col(j);
    double* out = comp.col(j);
    for (std::size_t i = 0; i < d; ++i) out[i] = s * q[i];
  }
  return DlrMatrix(vinv, std::move(comp), -k.sign);
}

DlrMatrix invert_auto(const DlrMatrix& k) {
  return k.width() <= k.dim() ? invert(k) : invert_dense_fallback(k);
}

DlrMatrix rank_reduce(const DlrMatrix& k, std::size_t r) {
  const std::size_t m = k.width();
  if (m == 0) return k;
  const std::size_t d = k.dim();
  // Eigenvectors of L^T L are the right singular vectors of L, so L Z_r
  // carries the top singular directions scaled by their singular values.
  Mat gram(m, m);
  kernels::gemm_tn(m, m, d, 1.0, k.component.data(), k.component.data(), 0.0,
                   gram.data());
  symmetrize(gram);
  const auto eig = linalg::sym_eig(gram);
  const double lmax = eig.values.empty() ? 0.0 : std::max(eig.values[0], 0.0);
  // Relative zero threshold; Gram eigenvalues below this are numerically
  // indistinguishable from exact zeros.
  const double drop =
      lmax * static_cast<double>(m) * 32.0 * std::numeric_limits<double>::epsilon();
  std::size_t nonzero = 0;
  while (nonzero < m && eig.values[nonzero] > drop) ++nonzero;
  const std::size_t keep = std::min(r, nonzero);
  Mat comp(d, keep);
  if (keep > 0) {
    kernels::gemm_nn(d, keep, m, 1.0, k.component.data(), eig.vectors.data(),
                     0.0, comp.data());
  }
  return DlrMatrix(k.nugget, std::move(comp), k.sign);
}

Mat capacitance(const DlrMatrix& k) {
  const Vec vinv = reciprocal_nugget(k, "dlr::capacitance");
  const std::size_t n = k.width();
  Mat w(k.dim(), n);
  kernels::row_scale(k.dim(), n, vinv.data(), k.component.data(), w.data());
  Mat cap(n, n);
  kernels::gemm_tn(n, n, k.dim(), 1.0, k.component.data(), w.data(), 0.0,
                   cap.data());
  for (std::size_t i = 0; i < n; ++i) {
    cap(i, i) += static_cast<double>(k.sign);
  }
  symmetrize(cap);
  return cap;
}

bool is_positive_definite(const DlrMatrix& k) {
  for (double v : k.nugget) {
    if (!(v > 0.0)) return false;
  }
  if (k.sign > 0 || k.width() == 0) return true;
  Vec vinv(k.dim());
  for (std::size_t i = 0; i < k.dim(); ++i) vinv[i] = 1.0 / k.nugget[i];
  return linalg::chol_lower(cap_identity_form(k, vinv)).has_value();
}

double logdet(const DlrMatrix& k) {
  double acc = 0.0;
  for (double v : k.nugget) {
    if (!(v > 0.0)) {
      throw NumericalError("dlr::logdet: nugget not positive");
    }
    acc += std::log(v);
  }
  if (k.width() == 0) return acc;
  Vec vinv(k.dim());
  for (std::size_t i = 0; i < k.dim(); ++i) vinv[i] = 1.0 / k.nugget[i];
  const Mat cap = cap_identity_form(k, vinv);
  const auto g = linalg::chol_lower(cap);
  if (!g) {
    throw NumericalError("dlr::logdet: matrix not positive definite");
  }
  return acc + linalg::logdet_from_chol(*g);
}

nlohmann::json to_json(const DlrMatrix& k) {
  nlohmann::json comp;
  comp["rows"] = k.component.rows();
  comp["cols"] = k.component.cols();
  comp["storage"] = "column-major";
  comp["data"] = std::vector<double>(
      k.component.data(), k.component.data() + k.component.size());
  return nlohmann::json{
      {"type", "dlr_matrix"},
      {"dim", k.dim()},
      {"sign", k.sign},
      {"nugget", k.nugget},
      {"component", std::move(comp)},
  };
}

DlrMatrix from_json(const nlohmann::json& j) {
  Vec nugget = j.at("nugget").get<Vec>();
  const auto& comp = j.at("component");
  Mat m(comp.at("rows").get<std::size_t>(), comp.at("cols").get<std::size_t>());
  const auto data = comp.at("data").get<std::vector<double>>();
  require(data.size() == m.size(), "dlr::from_json: component size mismatch");
  std::copy(data.begin(), data.end(), m.data());
  return DlrMatrix(std::move(nugget), std::move(m), j.at("sign").get<int>());
}

}  // namespace dlr
}  // namespace genbp
