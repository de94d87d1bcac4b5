#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

#include "genbp/dlr.hpp"
#include "genbp/linalg.hpp"
#include "oracles.hpp"

using genbp::DlrMatrix;
using genbp::Mat;
using genbp::NumericalError;
using genbp::Rng;
using genbp::Vec;
namespace dlr = genbp::dlr;

namespace {

Mat cols(std::size_t rows, std::vector<Vec> data) {
  Mat m(rows, data.size());
  for (std::size_t j = 0; j < data.size(); ++j) {
    for (std::size_t i = 0; i < rows; ++i) m(i, j) = data[j][i];
  }
  return m;
}

}  // namespace

TEST_CASE("densify expands nugget plus signed outer product") {
  // zero component: identity
  const DlrMatrix eye = DlrMatrix::diagonal({1.0, 1.0});
  const Mat de = dlr::densify(eye);
  CHECK(de(0, 0) == 1.0);
  CHECK(de(1, 1) == 1.0);
  CHECK(de(0, 1) == 0.0);

  // direct expansion
  const DlrMatrix k({1.0, 2.0}, cols(2, {{1.0, 1.0}}), 1);
  const Mat dk = dlr::densify(k);
  CHECK(dk(0, 0) == doctest::Approx(2.0));
  CHECK(dk(0, 1) == doctest::Approx(1.0));
  CHECK(dk(1, 0) == doctest::Approx(1.0));
  CHECK(dk(1, 1) == doctest::Approx(3.0));

  // random negative-sign instance against the elementwise oracle
  Rng rng(7);
  const auto parts = oracle::random_dlr(rng, 2, 1, -1, 0.0, 2.0);
  const DlrMatrix km(parts.nugget, parts.comp, -1);
  const Eigen::MatrixXd want = oracle::dense_dlr(parts.nugget, parts.comp, -1);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(km)), want) <
        1e-14);
}

TEST_CASE("matmul_dense groups the product and matches the dense oracle") {
  Rng rng(11);
  // identity K
  const DlrMatrix eye = DlrMatrix::diagonal({1.0, 1.0, 1.0});
  Mat x(3, 2);
  rng.fill_normal(x.data(), x.size());
  const Mat same = dlr::matmul_dense(eye, x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(same.data()[i] == doctest::Approx(x.data()[i]));
  }

  // D=3, N=1, M=2 random
  const auto parts = oracle::random_dlr(rng, 3, 1, 1);
  const DlrMatrix k(parts.nugget, parts.comp, 1);
  const Eigen::MatrixXd kd = oracle::dense_dlr(parts.nugget, parts.comp, 1);
  const Eigen::MatrixXd want = kd * oracle::to_eigen(x);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::matmul_dense(k, x)), want) <
        1e-12);

  // standard basis column extracts a column of densify(K)
  Mat e1(3, 1);
  e1(1, 0) = 1.0;
  const Mat col = dlr::matmul_dense(k, e1);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(col(i, 0) ==
          doctest::Approx(kd(static_cast<Eigen::Index>(i), 1)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(dlr::matmul_dense(k, Mat(2, 2)), std::invalid_argument);
}

TEST_CASE("add concatenates components and adds nuggets") {
  Rng rng(13);
  const auto parts = oracle::random_dlr(rng, 4, 2, 1);
  const DlrMatrix k(parts.nugget, parts.comp, 1);

  // additive identity
  const DlrMatrix zero(Vec(4, 0.0), Mat(4, 0), 1);
  const DlrMatrix same = dlr::add(k, zero);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(same)),
                              oracle::to_eigen(dlr::densify(k))) == 0.0);

  // widths 2 and 3 concatenate to 5
  const auto parts2 = oracle::random_dlr(rng, 4, 3, 1);
  const DlrMatrix k2(parts2.nugget, parts2.comp, 1);
  const DlrMatrix sum = dlr::add(k, k2);
  CHECK(sum.width() == 5);

  // densify equality and commutativity
  const Eigen::MatrixXd want = oracle::dense_dlr(parts.nugget, parts.comp, 1) +
                               oracle::dense_dlr(parts2.nugget, parts2.comp, 1);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(sum)), want) <
        1e-12);
  const DlrMatrix sum_rev = dlr::add(k2, k);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(sum_rev)),
                              oracle::to_eigen(dlr::densify(sum))) < 1e-15);

  // sign mismatch is rejected
  const DlrMatrix neg(parts2.nugget, parts2.comp, -1);
  CHECK_THROWS_AS(dlr::add(k, neg), std::invalid_argument);
}

TEST_CASE("invert flips the sign and matches the dense inverse") {
  // diagonal case: 2I -> 0.5I with flipped sign and empty component
  const DlrMatrix two = DlrMatrix::diagonal(Vec(3, 2.0), 1);
  const DlrMatrix half = dlr::invert(two);
  CHECK(half.sign == -1);
  CHECK(half.width() == 0);
  CHECK(half.nugget[0] == doctest::Approx(0.5));

  Rng rng(17);
  for (int sign : {1, -1}) {
    const auto parts = oracle::random_dlr(rng, 4, 2, sign);
    const DlrMatrix k(parts.nugget, parts.comp, sign);
    const DlrMatrix kinv = dlr::invert(k);
    CHECK(kinv.sign == -sign);
    CHECK(kinv.width() == k.width());
    const Eigen::MatrixXd want =
        oracle::dense_dlr(parts.nugget, parts.comp, sign).inverse();
    CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(kinv)), want) <
          1e-10);

    // involution
    const DlrMatrix back = dlr::invert(kinv);
    CHECK(oracle::rel_frobenius(
              oracle::to_eigen(dlr::densify(back)),
              oracle::dense_dlr(parts.nugget, parts.comp, sign)) < 1e-9);
  }

  // zero nugget entry is an error
  DlrMatrix bad = DlrMatrix::diagonal({1.0, 0.0}, 1);
  CHECK_THROWS_AS(dlr::invert(bad), NumericalError);

  // non-PD negative-sign input: capacitance Cholesky must fail loudly
  Mat big(2, 1);
  big(0, 0) = 2.0;
  const DlrMatrix indef(Vec(2, 1.0), big, -1);
  CHECK_THROWS_AS(dlr::invert(indef), NumericalError);
}

TEST_CASE("invert_dense_fallback recovers a DLR inverse spectrally") {
  Rng rng(19);
  // diagonal input agrees with invert
  const DlrMatrix diag = DlrMatrix::diagonal({0.5, 4.0}, 1);
  const Mat a = dlr::densify(dlr::invert_dense_fallback(diag));
  const Mat b = dlr::densify(dlr::invert(diag));
  CHECK(oracle::rel_frobenius(oracle::to_eigen(a), oracle::to_eigen(b)) <
        1e-14);

  // high-rank component: width 5 on a 3-dimensional matrix
  const auto parts = oracle::random_dlr(rng, 3, 5, 1);
  const DlrMatrix k(parts.nugget, parts.comp, 1);
  const DlrMatrix kinv = dlr::invert_dense_fallback(k);
  CHECK(kinv.sign == -1);
  CHECK(kinv.width() <= 3);  // rank bound
  const Eigen::MatrixXd want =
      oracle::dense_dlr(parts.nugget, parts.comp, 1).inverse();
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(kinv)), want) <
        1e-9);
}

TEST_CASE("rank_reduce is Frobenius optimal") {
  Rng rng(23);
  // duplicated column at r=1 stays exact
  Vec col(4);
  rng.fill_normal(col.data(), 4);
  const DlrMatrix dup(Vec(4, 0.7), cols(4, {col, col}), 1);
  const DlrMatrix red = dlr::rank_reduce(dup, 1);
  CHECK(red.width() == 1);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(red)),
                              oracle::to_eigen(dlr::densify(dup))) < 1e-12);

  // r = 0 gives a pure diagonal
  CHECK(dlr::rank_reduce(dup, 0).width() == 0);

  // D=5, N=3, r=2 error matches the eigendecomposition oracle
  const auto parts = oracle::random_dlr(rng, 5, 3, 1);
  const DlrMatrix k(parts.nugget, parts.comp, 1);
  const DlrMatrix k2 = dlr::rank_reduce(k, 2);
  CHECK(k2.width() <= 2);
  const double err = (oracle::to_eigen(dlr::densify(k)) -
                      oracle::to_eigen(dlr::densify(k2)))
                         .norm();
  const double best = oracle::best_rank_error(parts.comp, 2);
  CHECK(err == doctest::Approx(best).epsilon(1e-9));

  // r >= width strips only numerically-zero directions
  const DlrMatrix wide = dlr::rank_reduce(dup, 10);
  CHECK(wide.width() == 1);
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(wide)),
                              oracle::to_eigen(dlr::densify(dup))) < 1e-12);
}

TEST_CASE("capacitance matches its definition") {
  // empty component: 0x0
  CHECK(dlr::capacitance(DlrMatrix::diagonal({1.0, 2.0})).rows() == 0);

  // orthonormal columns with unit nugget: 2 I
  Mat q(3, 2);
  q(0, 0) = 1.0;
  q(1, 1) = 1.0;
  const DlrMatrix k(Vec(3, 1.0), q, 1);
  const Mat cap = dlr::capacitance(k);
  CHECK(cap(0, 0) == doctest::Approx(2.0));
  CHECK(cap(1, 1) == doctest::Approx(2.0));
  CHECK(cap(0, 1) == doctest::Approx(0.0));

  // random instance against the dense oracle
  Rng rng(29);
  const auto parts = oracle::random_dlr(rng, 4, 3, -1);
  const DlrMatrix p(parts.nugget, parts.comp, -1);
  const Mat got = dlr::capacitance(p);
  Eigen::MatrixXd vinv = Eigen::MatrixXd::Zero(4, 4);
  for (int i = 0; i < 4; ++i) vinv(i, i) = 1.0 / parts.nugget[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd l = oracle::to_eigen(parts.comp);
  const Eigen::MatrixXd want =
      -Eigen::MatrixXd::Identity(3, 3) + l.transpose() * vinv * l;
  CHECK(oracle::rel_frobenius(oracle::to_eigen(got), want) < 1e-12);
}

TEST_CASE("is_positive_definite follows the sign-specific rules") {
  CHECK(dlr::is_positive_definite(DlrMatrix::diagonal({1.0, 1.0})));
  CHECK_FALSE(dlr::is_positive_definite(DlrMatrix::diagonal({1.0, -1.0})));

  // 1 - 4 < 0 for R = 2 e1
  Mat r(2, 1);
  r(0, 0) = 2.0;
  CHECK_FALSE(dlr::is_positive_definite(DlrMatrix(Vec(2, 1.0), r, -1)));

  Rng rng(31);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.uniform() * 5);
    const std::size_t w = 1 + static_cast<std::size_t>(rng.uniform() * 3);
    Vec v(d);
    for (auto& x : v) x = 0.2 + rng.uniform();
    Mat comp(d, w);
    rng.fill_normal(comp.data(), comp.size(), 0.8);
    const DlrMatrix k(v, comp, -1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        oracle::dense_dlr(v, comp, -1));
    const bool want = es.eigenvalues().minCoeff() > 0.0;
    CHECK(dlr::is_positive_definite(k) == want);
  }
}

TEST_CASE("json round trip preserves the structure") {
  Rng rng(37);
  const auto parts = oracle::random_dlr(rng, 3, 2, -1);
  const DlrMatrix k(parts.nugget, parts.comp, -1);
  const DlrMatrix back = dlr::from_json(dlr::to_json(k));
  CHECK(back.sign == k.sign);
  CHECK(back.width() == k.width());
  CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(back)),
                              oracle::to_eigen(dlr::densify(k))) == 0.0);
}

// The randomized oracle-equivalence suite over every operation; the
// acceptance harness reruns this with its own budget and timing gate.
TEST_CASE("dlr operations agree with dense oracles over random instances") {
  Rng rng(41);
  double worst_op = 0.0;
  double worst_roundtrip = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    Rng r = rng.split(static_cast<std::uint64_t>(rep));
    const std::size_t d = 1 + static_cast<std::size_t>(r.uniform() * 8);
    const std::size_t w = static_cast<std::size_t>(r.uniform() * 7);
    const int sign = r.uniform() < 0.5 ? 1 : -1;
    const auto parts = oracle::random_dlr(r, d, w, sign);
    const DlrMatrix k(parts.nugget, parts.comp, sign);
    const Eigen::MatrixXd kd = oracle::dense_dlr(parts.nugget, parts.comp, sign);

    // matmul
    Mat x(d, 1 + static_cast<std::size_t>(r.uniform() * 3));
    r.fill_normal(x.data(), x.size());
    worst_op = std::max(
        worst_op, oracle::rel_frobenius(
                      oracle::to_eigen(dlr::matmul_dense(k, x)),
                      kd * oracle::to_eigen(x)));

    // add (same sign)
    const auto parts2 = oracle::random_dlr(r, d, 1 + w / 2, sign);
    const DlrMatrix k2(parts2.nugget, parts2.comp, sign);
    worst_op = std::max(
        worst_op,
        oracle::rel_frobenius(
            oracle::to_eigen(dlr::densify(dlr::add(k, k2))),
            kd + oracle::dense_dlr(parts2.nugget, parts2.comp, sign)));

    // invert, fallback, round trip
    const Eigen::MatrixXd kinv_want = kd.inverse();
    const DlrMatrix kinv = dlr::invert(k);
    worst_op = std::max(worst_op,
                        oracle::rel_frobenius(
                            oracle::to_eigen(dlr::densify(kinv)), kinv_want));
    const DlrMatrix kinv_fb = dlr::invert_dense_fallback(k);
    worst_op = std::max(
        worst_op, oracle::rel_frobenius(
                      oracle::to_eigen(dlr::densify(kinv_fb)), kinv_want));
    worst_roundtrip = std::max(
        worst_roundtrip,
        oracle::rel_frobenius(oracle::to_eigen(dlr::densify(dlr::invert(kinv))),
                              kd));

    // rank_reduce optimality
    if (w > 0) {
      const std::size_t rr = static_cast<std::size_t>(r.uniform() * w);
      const double err = (oracle::to_eigen(dlr::densify(dlr::rank_reduce(k, rr))) -
                          kd)
                             .norm();
      const double best = oracle::best_rank_error(parts.comp, rr);
      CHECK(err <= best + 1e-9);
      CHECK(err >= best - 1e-9);
    }

    // capacitance
    if (w > 0) {
      Eigen::MatrixXd vinv = Eigen::MatrixXd::Zero(
          static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) {
        vinv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
            1.0 / parts.nugget[i];
      }
      const Eigen::MatrixXd l = oracle::to_eigen(parts.comp);
      const Eigen::MatrixXd cap_want =
          sign * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(w),
                                           static_cast<Eigen::Index>(w)) +
          l.transpose() * vinv * l;
      worst_op = std::max(
          worst_op, oracle::rel_frobenius(
                        oracle::to_eigen(dlr::capacitance(k)), cap_want));
    }
  }
  CHECK(worst_op < 1e-9);
  CHECK(worst_roundtrip < 1e-9);
}
