#pragma once

#include <functional>
#include <json.hpp>
#include <map>
#include <string>

#include "genbp/mat.hpp"
#include "genbp/sem.hpp"

// Dense Gaussian belief propagation baseline.  Black-box processes are
// linearized by central finite differences (first-order error propagation);
// all message algebra is textbook dense Gaussian conditioning,
// marginalization and multiplication.

namespace genbp::gabp {

// Central finite-difference Jacobian. step <= 0 selects the default
// per-coordinate step 1e-5 * max(1, |x_j|).
Mat jacobian_fd(const std::function<Vec(const Vec&)>& fn, const Vec& point,
                double step = 0.0);

// Moments-form joint over (input, output) from first-order error
// propagation: mean [m; f(m)], covariance blocks
// [[K, K J^T], [J K, J K J^T + diag(noise) + gamma2 I]].
struct DenseJoint {
  Vec mean;
  Mat cov;
  std::size_t input_dim = 0;
};
DenseJoint linearize_factor(const std::function<Vec(const Vec&)>& fn,
                            const Vec& input_mean, const Mat& input_cov,
                            const Vec& noise_var, double gamma2);

struct GabpParams {
  double gamma2 = 0.01;  // jitter shared with the ensemble engine
  int max_iters = 150;
  int relin_every = 10;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::size_t prior_moment_samples = 1024;  // when no analytic prior moments
  double uninformative_eps = 1e-8;
};

struct GabpBelief {
  Vec mean;
  Mat cov;
  bool cov_positive_definite = false;
};

struct GabpResult {
  std::map<std::string, GabpBelief> query_beliefs;
  bool failed = false;
  std::string failure;
  int iterations = 0;
  bool converged = false;
  nlohmann::json diagnostics;
};

// Run dense loopy BP on the evidence-conditioned model.  Non-positive-
// definite intermediates mark the run failed instead of throwing.
GabpResult run_gabp(const Sem& sem, const std::map<std::string, Vec>& evidence,
                    const GabpParams& params);

}  // namespace genbp::gabp
