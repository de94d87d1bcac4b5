#pragma once

#include <iosfwd>
#include <variant>

#include "genbp/gaussian.hpp"
#include "genbp/mat.hpp"

// Ensembles of joint samples and the sample-space counterparts of the
// Gaussian operations: implied moments, pathwise (Matheron) conditioning, and
// conformation of an ensemble to a target belief.

namespace genbp {

// D-by-N matrix of samples, one member per column.
struct Ensemble {
  Mat samples;

  Ensemble() = default;
  explicit Ensemble(Mat s);

  std::size_t dim() const { return samples.rows(); }
  std::size_t count() const { return samples.cols(); }
};

// Diagonal inflation term: either a scalar variance or a full diagonal.
class NuggetSpec {
 public:
  NuggetSpec(double scalar) : value_(scalar) {}  // NOLINT: implicit by design
  explicit NuggetSpec(Vec diagonal) : value_(std::move(diagonal)) {}

  // Expand to a length-d diagonal; throws on non-positive entries.
  Vec resolve(std::size_t d) const;

 private:
  std::variant<double, Vec> value_;
};

namespace ensemble {

// Columnwise mean; requires at least one column.
Vec mean(const Mat& samples);
// X - mean(X) * B; rows sum to zero. Requires at least two columns.
Mat deviations(const Mat& samples);

// phi(mean(X), dev(X) dev(X)^T / (N-1) + diag(nugget)) as a DLR Gaussian;
// the component is dev(X)/sqrt(N-1).
MomentsGaussian implied_gaussian(const Ensemble& x, const NuggetSpec& nugget);

// Pathwise conditional update: the rows in [k_offset, k_offset + k_dim) are
// the conditioned block, the returned ensemble covers the remaining rows in
// their original order.  The inverse of Var_V(X_k) is applied through the
// DLR Woodbury route.
Ensemble matheron_condition(const Ensemble& joint, std::size_t k_offset,
                            std::size_t k_dim, const Vec& x_star,
                            const NuggetSpec& nugget);

struct ConformResult {
  Ensemble ensemble;
  Mat transform;    // N-by-N factor T with T T^T = G
  bool degenerate;  // deviations had no spread; output collapsed to the mean
};

// Affine transform of X whose empirical moments best match the target belief
// in Frobenius norm, with conformation nugget eta2.  The output mean matches
// target_mean exactly.
ConformResult conform(const Ensemble& x, const Vec& target_mean,
                      const DlrMatrix& target_cov, double eta2);

// || dev G dev^T/(N-1) - (L L^T + V - eta2 I) ||_F^2 and its gradient in G,
// both computed in N-by-N space.
double conform_loss(const Mat& g, const Mat& dev, const DlrMatrix& target_cov,
                    double eta2);
Mat conform_loss_grad(const Mat& g, const Mat& dev,
                      const DlrMatrix& target_cov, double eta2);

// Fixture format: one "D,N" header line, then D rows of N comma-separated
// values (row = coordinate, column = member).
void write_csv(std::ostream& os, const Ensemble& e);
Ensemble read_csv(std::istream& is);

}  // namespace ensemble
}  // namespace genbp
