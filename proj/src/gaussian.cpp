#include "genbp/gaussian.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "genbp/kernels.hpp"
#include "genbp/linalg.hpp"

namespace genbp {

MomentsGaussian::MomentsGaussian(Vec m, DlrMatrix k)
    : mean(std::move(m)), cov(std::move(k)) {
  require(cov.sign == 1, "MomentsGaussian: covariance must have sign +1");
  require(mean.size() == cov.dim(),
          "MomentsGaussian: mean length must match covariance dimension");
}

CanonicalGaussian::CanonicalGaussian(Vec n, DlrMatrix p)
    : info(std::move(n)), precision(std::move(p)) {
  require(precision.sign == -1,
          "CanonicalGaussian: precision must have sign -1");
  require(info.size() == precision.dim(),
          "CanonicalGaussian: info length must match precision dimension");
}

namespace gaussian {

CanonicalGaussian uninformative(std::size_t dim, double eps) {
  return CanonicalGaussian(Vec(dim, 0.0),
                           DlrMatrix::scaled_identity(dim, eps, -1));
}

CanonicalGaussian to_canonical(const MomentsGaussian& g) {
  DlrMatrix precision = dlr::invert_auto(g.cov);
  Vec info = dlr::matvec(precision, g.mean);
  return CanonicalGaussian(std::move(info), std::move(precision));
}

MomentsGaussian to_moments(const CanonicalGaussian& g) {
  DlrMatrix cov = dlr::invert_auto(g.precision);
  Vec mean = dlr::matvec(cov, g.info);
  return MomentsGaussian(std::move(mean), std::move(cov));
}

CanonicalGaussian multiply_canonical(const CanonicalGaussian& a,
                                     const CanonicalGaussian& b) {
  require(a.dim() == b.dim(), "multiply_canonical: dimension mismatch");
  Vec info(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) info[i] = a.info[i] + b.info[i];
  return CanonicalGaussian(std::move(info), dlr::add(a.precision, b.precision));
}

CanonicalGaussian multiply_partial(const CanonicalGaussian& a,
                                   const CanonicalGaussian& b,
                                   std::size_t offset) {
  require(offset + b.dim() <= a.dim(), "multiply_partial: block out of range");
  Vec info = a.info;
  for (std::size_t i = 0; i < b.dim(); ++i) info[offset + i] += b.info[i];
  Vec nugget = a.precision.nugget;
  for (std::size_t i = 0; i < b.dim(); ++i) {
    nugget[offset + i] += b.precision.nugget[i];
  }
  // b's component rows land in [offset, offset + dim(b)); zero elsewhere.
  Mat embedded(a.dim(), b.precision.width());
  for (std::size_t j = 0; j < b.precision.width(); ++j) {
    std::memcpy(embedded.col(j) + offset, b.precision.component.col(j),
                b.dim() * sizeof(double));
  }
  return CanonicalGaussian(
      std::move(info),
      DlrMatrix(std::move(nugget),
                linalg::hcat(a.precision.component, embedded), -1));
}

MomentsGaussian marginalize_moments(const MomentsGaussian& g,
                                    std::size_t offset, std::size_t count) {
  require(offset + count <= g.dim(), "marginalize_moments: block out of range");
  Vec mean(g.mean.begin() + offset, g.mean.begin() + offset + count);
  Vec nugget(g.cov.nugget.begin() + offset,
             g.cov.nugget.begin() + offset + count);
  Mat comp = linalg::take_rows(g.cov.component, offset, count);
  return MomentsGaussian(std::move(mean),
                         DlrMatrix(std::move(nugget), std::move(comp), 1));
}

double log_density(const MomentsGaussian& g, const Vec& x) {
  require(x.size() == g.dim(), "log_density: dimension mismatch");
  const std::size_t d = g.dim();
  Vec r(d);
  for (std::size_t i = 0; i < d; ++i) r[i] = x[i] - g.mean[i];
  const DlrMatrix p = dlr::invert_auto(g.cov);
  const Vec pr = dlr::matvec(p, r);
  const double quad = kernels::dot(d, r.data(), pr.data());
  const double ld = dlr::logdet(g.cov);
  return -0.5 * (quad + static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + ld);
}

double mmd_poly2(const Mat& x, const Mat& y) {
  require(x.rows() == y.rows(), "mmd_poly2: dimension mismatch");
  const std::size_t m = x.cols();
  const std::size_t n = y.cols();
  if (m < 2 || n < 2) {
    throw std::invalid_argument("mmd_poly2: need at least 2 samples per set");
  }
  const auto kpoly = [](double g) {
    const double v = g + 1.0;
    return v * v;
  };
  Mat gxx(m, m), gyy(n, n), gxy(m, n);
  kernels::gemm_tn(m, m, x.rows(), 1.0, x.data(), x.data(), 0.0, gxx.data());
  kernels::gemm_tn(n, n, y.rows(), 1.0, y.data(), y.data(), 0.0, gyy.data());
  kernels::gemm_tn(m, n, x.rows(), 1.0, x.data(), y.data(), 0.0, gxy.data());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) sxx += kpoly(gxx(i, j));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) syy += kpoly(gyy(i, j));
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) sxy += kpoly(gxy(i, j));
  }
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  return sxx / (dm * (dm - 1.0)) + syy / (dn * (dn - 1.0)) -
         2.0 * sxy / (dm * dn);
}

nlohmann::json to_json(const MomentsGaussian& g) {
  return nlohmann::json{{"type", "moments_gaussian"},
                        {"mean", g.mean},
                        {"cov", dlr::to_json(g.cov)}};
}

nlohmann::json to_json(const CanonicalGaussian& g) {
  return nlohmann::json{{"type", "canonical_gaussian"},
                        {"info", g.info},
                        {"precision", dlr::to_json(g.precision)}};
}

MomentsGaussian moments_from_json(const nlohmann::json& j) {
  return MomentsGaussian(j.at("mean").get<Vec>(),
                         dlr::from_json(j.at("cov")));
}

CanonicalGaussian canonical_from_json(const nlohmann::json& j) {
  return CanonicalGaussian(j.at("info").get<Vec>(),
                           dlr::from_json(j.at("precision")));
}

}  // namespace gaussian
}  // namespace genbp
