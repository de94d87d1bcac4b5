#pragma once

#include <json.hpp>

#include "genbp/mat.hpp"

// Symmetric matrices stored as diag(nugget) + sign * component * component^T.
// The component is D-by-N; nothing here ever materializes a D-by-D buffer
// except densify() and the high-rank inversion fallback, which are the
// designated dense escapes.

namespace genbp {

struct DlrMatrix {
  Vec nugget;     // diagonal entries of V
  Mat component;  // D-by-N (N may be 0)
  int sign = 1;   // +1 or -1

  DlrMatrix() = default;
  DlrMatrix(Vec nugget_diag, Mat comp, int s);

  std::size_t dim() const { return nugget.size(); }
  std::size_t width() const { return component.cols(); }

  // diag(v) with empty component.
  static DlrMatrix diagonal(Vec v, int s = 1);
  static DlrMatrix scaled_identity(std::size_t d, double value, int s = 1);
};

namespace dlr {

// Dense D-by-D expansion. Test oracle support and high-rank fallback only.
Mat densify(const DlrMatrix& k);

// K * X without forming K: V X + s L (L^T X).
Mat matmul_dense(const DlrMatrix& k, const Mat& x);
Vec matvec(const DlrMatrix& k, const Vec& x);

// Same-sign sum: nuggets add, components concatenate.
DlrMatrix add(const DlrMatrix& a, const DlrMatrix& b);

// Woodbury inverse; the result carries the opposite sign and the same
// component width. Cost O(N^2 D + N^3).
DlrMatrix invert(const DlrMatrix& k);

// Dense inverse followed by spectral recovery of the component. Intended for
// component width > dim, where the Woodbury route is no longer cheap.
DlrMatrix invert_dense_fallback(const DlrMatrix& k);

// invert() when width <= dim, invert_dense_fallback() otherwise.
DlrMatrix invert_auto(const DlrMatrix& k);

// Best Frobenius-norm approximation with component width <= r, via spectral
// truncation of component^T component. Exact when rank(component) <= r.
DlrMatrix rank_reduce(const DlrMatrix& k, std::size_t r);

// s*I + L^T V^{-1} L.
Mat capacitance(const DlrMatrix& k);

// For +1: positive nugget suffices. For -1: positive nugget and positive
// definite I - R^T U^{-1} R (checked by attempting a Cholesky factorization).
bool is_positive_definite(const DlrMatrix& k);

// log det via the matrix determinant lemma; requires positive definiteness.
double logdet(const DlrMatrix& k);

nlohmann::json to_json(const DlrMatrix& k);
DlrMatrix from_json(const nlohmann::json& j);

}  // namespace dlr
}  // namespace genbp
