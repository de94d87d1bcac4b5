#pragma once

#include <json.hpp>

#include "genbp/dlr.hpp"
#include "genbp/mat.hpp"

// Gaussian beliefs with DLR parameters.  Moments form carries a +1 covariance
// (V + L L^T); canonical form carries a -1 precision (U - R R^T).  Conversion
// between the two is a Woodbury inversion, so it never touches a D-by-D
// buffer while the component stays thin.

namespace genbp {

struct MomentsGaussian {
  Vec mean;
  DlrMatrix cov;  // sign +1

  MomentsGaussian() = default;
  MomentsGaussian(Vec m, DlrMatrix k);
  std::size_t dim() const { return mean.size(); }
};

struct CanonicalGaussian {
  Vec info;
  DlrMatrix precision;  // sign -1

  CanonicalGaussian() = default;
  CanonicalGaussian(Vec n, DlrMatrix p);
  std::size_t dim() const { return info.size(); }
};

namespace gaussian {

// Flat canonical stand-in for "no message yet": zero information and a tiny
// eps*I precision, which keeps every message invertible.
CanonicalGaussian uninformative(std::size_t dim, double eps = 1e-8);

CanonicalGaussian to_canonical(const MomentsGaussian& g);
MomentsGaussian to_moments(const CanonicalGaussian& g);

// Density product: information adds, precisions add (component concat).
CanonicalGaussian multiply_canonical(const CanonicalGaussian& a,
                                     const CanonicalGaussian& b);

// Product with a marginal density over the sub-block starting at `offset`;
// b is zero-embedded into a's coordinates.
CanonicalGaussian multiply_partial(const CanonicalGaussian& a,
                                   const CanonicalGaussian& b,
                                   std::size_t offset);

// Truncation of mean, nugget and component rows.
MomentsGaussian marginalize_moments(const MomentsGaussian& g,
                                    std::size_t offset, std::size_t count);

double log_density(const MomentsGaussian& g, const Vec& x);

// Squared maximum mean discrepancy under k(x,y) = (x.y + 1)^2, unbiased
// U-statistic estimator.  Columns are samples.
double mmd_poly2(const Mat& x_samples, const Mat& y_samples);

nlohmann::json to_json(const MomentsGaussian& g);
nlohmann::json to_json(const CanonicalGaussian& g);
MomentsGaussian moments_from_json(const nlohmann::json& j);
CanonicalGaussian canonical_from_json(const nlohmann::json& j);

}  // namespace gaussian
}  // namespace genbp
