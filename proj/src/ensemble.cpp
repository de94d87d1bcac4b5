#include "genbp/ensemble.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "genbp/kernels.hpp"
#include "genbp/linalg.hpp"

namespace genbp {

Ensemble::Ensemble(Mat s) : samples(std::move(s)) {
  require(samples.cols() >= 2, "Ensemble: at least two members required");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples.data()[i])) {
      throw std::invalid_argument("Ensemble: non-finite entry");
    }
  }
}

Vec NuggetSpec::resolve(std::size_t d) const {
  Vec out;
  if (std::holds_alternative<double>(value_)) {
    out.assign(d, std::get<double>(value_));
  } else {
    out = std::get<Vec>(value_);
    require(out.size() == d, "NuggetSpec: diagonal length mismatch");
  }
  for (double v : out) {
    if (!(v > 0.0)) {
      throw std::invalid_argument("NuggetSpec: entries must be positive");
    }
  }
  return out;
}

namespace ensemble {

Vec mean(const Mat& samples) {
  require(samples.cols() >= 1, "ensemble::mean: empty ensemble");
  Vec m(samples.rows());
  kernels::col_mean(samples.rows(), samples.cols(), samples.data(), m.data());
  return m;
}

Mat deviations(const Mat& samples) {
  require(samples.cols() >= 2, "ensemble::deviations: need at least 2 members");
  const Vec m = mean(samples);
  Mat dev(samples.rows(), samples.cols());
  kernels::sub_col_broadcast(samples.rows(), samples.cols(), samples.data(),
                             m.data(), dev.data());
  return dev;
}

MomentsGaussian implied_gaussian(const Ensemble& x, const NuggetSpec& nugget) {
  Vec v = nugget.resolve(x.dim());
  Vec m = mean(x.samples);
  Mat comp = deviations(x.samples);
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.count()) - 1.0);
  kernels::scal(comp.size(), scale, comp.data());
  return MomentsGaussian(std::move(m),
                         DlrMatrix(std::move(v), std::move(comp), 1));
}

Ensemble matheron_condition(const Ensemble& joint, std::size_t k_offset,
                            std::size_t k_dim, const Vec& x_star,
                            const NuggetSpec& nugget) {
  require(k_offset + k_dim <= joint.dim(),
          "matheron_condition: block out of range");
  require(x_star.size() == k_dim, "matheron_condition: evidence length");
  const std::size_t d = joint.dim();
  const std::size_t n = joint.count();
  const std::size_t l_dim = d - k_dim;

  // Split rows into the conditioned block k and the remainder l.
  Mat xk(k_dim, n), xl(l_dim, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* src = joint.samples.col(j);
    std::memcpy(xk.col(j), src + k_offset, k_dim * sizeof(double));
    std::memcpy(xl.col(j), src, k_offset * sizeof(double));
    std::memcpy(xl.col(j) + k_offset, src + k_offset + k_dim,
                (l_dim - k_offset) * sizeof(double));
  }

  const double nm1 = static_cast<double>(n) - 1.0;
  Mat dk = deviations(xk);
  Mat dl = deviations(xl);

  // Var_V(X_k) in DLR form, inverted through the Woodbury identity.
  Mat comp = dk;
  kernels::scal(comp.size(), 1.0 / std::sqrt(nm1), comp.data());
  const DlrMatrix var_k(nugget.resolve(k_dim), std::move(comp), 1);
  const DlrMatrix prec_k = dlr::invert_auto(var_k);

  // residual = x* B - X_k, then S = Var^{-1} residual.
  Mat residual(k_dim, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* src = xk.col(j);
    double* dst = residual.col(j);
    for (std::size_t i = 0; i < k_dim; ++i) dst[i] = x_star[i] - src[i];
  }
  const Mat s = dlr::matmul_dense(prec_k, residual);

  // X_l + Cov(X_l, X_k) S = X_l + dev_l (dev_k^T S) / (N-1), grouped so that
  // no l_dim-by-k_dim matrix is ever formed.
  Mat w(n, n);
  kernels::gemm_tn(n, n, k_dim, 1.0, dk.data(), s.data(), 0.0, w.data());
  Mat out = xl;
  kernels::gemm_nn(l_dim, n, n, 1.0 / nm1, dl.data(), w.data(), 1.0,
                   out.data());
  return Ensemble(std::move(out));
}

namespace {

struct ConformTerms {
  Mat a;    // dev^T dev
  Mat w0;   // (dev^T L)(dev^T L)^T + dev^T (V - eta2 I) dev
  double n1;
};

ConformTerms conform_terms(const Mat& dev, const DlrMatrix& target_cov,
                           double eta2) {
  const std::size_t d = dev.rows();
  const std::size_t n = dev.cols();
  const std::size_t m = target_cov.width();
  ConformTerms t;
  t.n1 = static_cast<double>(n) - 1.0;
  t.a = Mat(n, n);
  kernels::gemm_tn(n, n, d, 1.0, dev.data(), dev.data(), 0.0, t.a.data());
  t.w0 = Mat(n, n);
  if (m > 0) {
    Mat xl(n, m);
    kernels::gemm_tn(n, m, d, 1.0, dev.data(), target_cov.component.data(),
                     0.0, xl.data());
    kernels::gemm_nt(n, n, m, 1.0, xl.data(), xl.data(), 0.0, t.w0.data());
  }
  Vec vtilde(d);
  for (std::size_t i = 0; i < d; ++i) vtilde[i] = target_cov.nugget[i] - eta2;
  Mat vdev(d, n);
  kernels::row_scale(d, n, vtilde.data(), dev.data(), vdev.data());
  kernels::gemm_tn(n, n, d, 1.0, dev.data(), vdev.data(), 1.0, t.w0.data());
  return t;
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

}  // namespace

ConformResult conform(const Ensemble& x, const Vec& target_mean,
                      const DlrMatrix& target_cov, double eta2) {
  require(target_cov.sign == 1, "conform: target covariance must be sign +1");
  require(target_cov.dim() == x.dim(), "conform: dimension mismatch");
  require(target_mean.size() == x.dim(), "conform: mean length mismatch");
  const std::size_t d = x.dim();
  const std::size_t n = x.count();

  Mat dev = deviations(x.samples);
  ConformResult result;
  result.degenerate = kernels::max_abs(dev.size(), dev.data()) == 0.0;
  if (result.degenerate) {
    Mat samples(d, n);
    for (std::size_t j = 0; j < n; ++j) {
      std::memcpy(samples.col(j), target_mean.data(), d * sizeof(double));
    }
    result.ensemble = Ensemble(std::move(samples));
    result.transform = Mat(n, n);
    return result;
  }

  ConformTerms t = conform_terms(dev, target_cov, eta2);
  symmetrize(t.a);
  symmetrize(t.w0);

  // Normal equations A M A = (N-1) W0.  dev rows sum to zero, so A is rank
  // deficient by at least one; ridge-regularize before the symmetric solve.
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += t.a(i, i);
  const double ridge = 1e-10 * trace / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) t.a(i, i) += ridge;

  const auto eig_a = linalg::sym_eig(t.a);
  // M = A^{-1} (N-1) W0 A^{-1} via the eigenbasis of A.
  Mat qtwq(n, n);
  {
    Mat tmp(n, n);
    kernels::gemm_tn(n, n, n, 1.0, eig_a.vectors.data(), t.w0.data(), 0.0,
                     tmp.data());
    kernels::gemm_nn(n, n, n, t.n1, tmp.data(), eig_a.vectors.data(), 0.0,
                     qtwq.data());
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      qtwq(i, j) /= eig_a.values[i] * eig_a.values[j];
    }
  }
  Mat msol(n, n);
  {
    Mat tmp(n, n);
    kernels::gemm_nn(n, n, n, 1.0, eig_a.vectors.data(), qtwq.data(), 0.0,
                     tmp.data());
    kernels::gemm_nt(n, n, n, 1.0, tmp.data(), eig_a.vectors.data(), 0.0,
                     msol.data());
  }
  symmetrize(msol);

  // Project onto the PSD cone and take the symmetric root
  // T = Q max(S,0)^{1/2} Q^T.  The all-ones vector lies in the null space of
  // the solution, so the symmetric root maps it to zero and the transformed
  // deviations keep a zero column-mean; a one-sided root would lose a rank-one
  // (N-1)/N share of the target variance to the recentring.
  const auto eig_m = linalg::sym_eig(msol);
  Mat half(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double s = eig_m.values[j] > 0.0 ? std::sqrt(eig_m.values[j]) : 0.0;
    const double* q = eig_m.vectors.col(j);
    double* out = half.col(j);
    for (std::size_t i = 0; i < n; ++i) out[i] = s * q[i];
  }
  result.transform = Mat(n, n);
  kernels::gemm_nt(n, n, n, 1.0, half.data(), eig_m.vectors.data(), 0.0,
                   result.transform.data());

  // Output = target_mean B + dev T, recentred so the empirical mean matches
  // the target exactly; the recentring leaves deviations untouched.
  Mat z(d, n);
  kernels::gemm_nn(d, n, n, 1.0, dev.data(), result.transform.data(), 0.0,
                   z.data());
  Vec zbar(d);
  kernels::col_mean(d, n, z.data(), zbar.data());
  Mat samples(d, n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* zj = z.col(j);
    double* out = samples.col(j);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = target_mean[i] + zj[i] - zbar[i];
    }
  }
  result.ensemble = Ensemble(std::move(samples));
  return result;
}

double conform_loss(const Mat& g, const Mat& dev, const DlrMatrix& target_cov,
                    double eta2) {
  const std::size_t d = dev.rows();
  const std::size_t n = dev.cols();
  require(g.rows() == n && g.cols() == n, "conform_loss: G must be N-by-N");
  const ConformTerms t = conform_terms(dev, target_cov, eta2);
  const double c = 1.0 / t.n1;

  // tr(cAGcAG) with one N^3 product.
  Mat ga(n, n);
  kernels::gemm_nn(n, n, n, c, g.data(), t.a.data(), 0.0, ga.data());
  double t1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) t1 += ga(i, j) * ga(j, i);
  }
  double t2 = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) {
    t2 += g.data()[i] * t.w0.data()[i];
  }
  // || L L^T + (V - eta2 I) ||_F^2 assembled in component space.
  const std::size_t m = target_cov.width();
  Vec vtilde(d);
  for (std::size_t i = 0; i < d; ++i) vtilde[i] = target_cov.nugget[i] - eta2;
  double t3 = 0.0;
  if (m > 0) {
    Mat gl(m, m);
    kernels::gemm_tn(m, m, d, 1.0, target_cov.component.data(),
                     target_cov.component.data(), 0.0, gl.data());
    for (std::size_t i = 0; i < m * m; ++i) {
      t3 += gl.data()[i] * gl.data()[i];
    }
    for (std::size_t i = 0; i < d; ++i) {
      double rownorm2 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double v = target_cov.component(i, j);
        rownorm2 += v * v;
      }
      t3 += 2.0 * vtilde[i] * rownorm2;
    }
  }
  for (std::size_t i = 0; i < d; ++i) t3 += vtilde[i] * vtilde[i];
  return t1 - 2.0 * c * t2 + t3;
}

Mat conform_loss_grad(const Mat& g, const Mat& dev,
                      const DlrMatrix& target_cov, double eta2) {
  const std::size_t n = dev.cols();
  require(g.rows() == n && g.cols() == n,
          "conform_loss_grad: G must be N-by-N");
  const ConformTerms t = conform_terms(dev, target_cov, eta2);
  const double c = 1.0 / t.n1;
  Mat ag(n, n), aga(n, n);
  kernels::gemm_nn(n, n, n, 1.0, t.a.data(), g.data(), 0.0, ag.data());
  kernels::gemm_nn(n, n, n, c, ag.data(), t.a.data(), 0.0, aga.data());
  Mat grad(n, n);
  for (std::size_t i = 0; i < n * n; ++i) {
    grad.data()[i] = 2.0 * c * (aga.data()[i] - t.w0.data()[i]);
  }
  return grad;
}

void write_csv(std::ostream& os, const Ensemble& e) {
  os << e.dim() << "," << e.count() << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < e.dim(); ++i) {
    for (std::size_t j = 0; j < e.count(); ++j) {
      if (j > 0) os << ",";
      os << e.samples(i, j);
    }
    os << "\n";
  }
}

Ensemble read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) {
    throw std::invalid_argument("ensemble::read_csv: missing header");
  }
  std::size_t d = 0, n = 0;
  {
    std::istringstream header(line);
    char comma = 0;
    if (!(header >> d >> comma >> n) || comma != ',') {
      throw std::invalid_argument("ensemble::read_csv: malformed header");
    }
  }
  Mat samples(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::getline(is, line)) {
      throw std::invalid_argument("ensemble::read_csv: truncated file");
    }
    std::istringstream row(line);
    std::string cell;
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::getline(row, cell, ',')) {
        throw std::invalid_argument("ensemble::read_csv: short row");
      }
      samples(i, j) = std::stod(cell);
    }
  }
  return Ensemble(std::move(samples));
}

}  // namespace ensemble
}  // namespace genbp
