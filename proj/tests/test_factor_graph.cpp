#include <doctest.h>

#include <Eigen/Cholesky>
#include <set>

#include "genbp/benchmarks.hpp"
#include "genbp/factor_graph.hpp"
#include "genbp/linalg.hpp"
#include "oracles.hpp"

using namespace genbp;
namespace g = genbp::gaussian;

namespace {

// Exact canonical potential from a dense (possibly singular-PSD) precision:
// P = U - R R^T with U a diagonal shift above the top eigenvalue.
CanonicalGaussian exact_canonical(const Eigen::MatrixXd& prec,
                                  const Eigen::VectorXd& info) {
  const Eigen::Index d = prec.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prec);
  const double shift = 1.05 * std::max(es.eigenvalues().maxCoeff(), 0.0) + 0.5;
  const Eigen::MatrixXd m =
      shift * Eigen::MatrixXd::Identity(d, d) - prec;
  const Eigen::MatrixXd r = Eigen::LLT<Eigen::MatrixXd>(m).matrixL();
  Mat comp(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      comp(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = r(i, j);
    }
  }
  return CanonicalGaussian(
      Vec(info.data(), info.data() + d),
      DlrMatrix(Vec(static_cast<std::size_t>(d), shift), comp, -1));
}

// Canonical potential of the conditional density out = A in + b + N(0, Q).
CanonicalGaussian linear_process_potential(const Eigen::MatrixXd& a,
                                           const Eigen::VectorXd& b,
                                           const Eigen::VectorXd& qdiag) {
  const Eigen::Index din = a.cols();
  const Eigen::Index dout = a.rows();
  Eigen::MatrixXd bm(dout, din + dout);
  bm.leftCols(din) = -a;
  bm.rightCols(dout) = Eigen::MatrixXd::Identity(dout, dout);
  const Eigen::MatrixXd qinv = qdiag.cwiseInverse().asDiagonal();
  return exact_canonical(bm.transpose() * qinv * bm,
                         bm.transpose() * (qinv * b));
}

CanonicalGaussian prior_potential(const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd prec = cov.inverse();
  return exact_canonical(prec, prec * mean);
}

// The six-variable running example: one ancestral root, two children, two
// mergers, two leaves observed later.
Sem running_example() {
  Sem sem;
  sem.add_variable("x1", 1, Role::Query);
  sem.add_variable("x2", 1, Role::Latent);
  sem.add_variable("x3", 1, Role::Latent);
  sem.add_variable("x4", 1, Role::Latent);
  sem.add_variable("x5", 1, Role::Evidence);
  sem.add_variable("x6", 1, Role::Evidence);
  sem.add_ancestral("x1", [](Rng& rng) { return Vec{rng.normal()}; }, std::nullopt, "f1");
  sem.add_process({"x1"}, "x2", [](const Vec& v) { return Vec{0.9 * v[0]}; },
                  0.5, "f12");
  sem.add_process({"x1"}, "x3", [](const Vec& v) { return Vec{-0.7 * v[0]}; },
                  0.5, "f13");
  sem.add_process({"x2", "x3"}, "x4",
                  [](const Vec& v) { return Vec{0.6 * v[0] + 0.3 * v[1]}; },
                  0.5, "f234");
  sem.add_process({"x2"}, "x5", [](const Vec& v) { return Vec{1.1 * v[0]}; },
                  0.5, "f25");
  sem.add_process({"x4", "x5"}, "x6",
                  [](const Vec& v) { return Vec{0.5 * v[0] - 0.4 * v[1]}; },
                  0.5, "f456");
  return sem;
}

}  // namespace

TEST_CASE("build creates one factor per process with the right neighbors") {
  const Sem sem = running_example();
  const FactorGraph fg = FactorGraph::build(sem);
  REQUIRE(fg.num_factors() == 6);
  const std::vector<std::set<std::string>> want = {
      {"x1"},         {"x1", "x2"},       {"x1", "x3"},
      {"x2", "x3", "x4"}, {"x2", "x5"},   {"x4", "x5", "x6"}};
  for (std::size_t f = 0; f < 6; ++f) {
    std::set<std::string> got;
    for (int vid : fg.factor(static_cast<int>(f)).vars) {
      got.insert(fg.variable(vid).name);
    }
    CHECK(got == want[f]);
  }

  // single-variable model: one unary factor
  Sem solo;
  solo.add_variable("a", 2, Role::Query);
  solo.add_ancestral("a", [](Rng& rng) { return rng.normal_vec(2); });
  const FactorGraph sg = FactorGraph::build(solo);
  CHECK(sg.num_factors() == 1);
  CHECK(sg.factor(0).vars.size() == 1);

  // system-identification template at T=2
  bench::SysidToyConfig toy;
  toy.t_steps = 2;
  const FactorGraph tg = FactorGraph::build(bench::build_sysid_toy_sem(toy));
  std::vector<std::set<std::string>> got;
  for (std::size_t f = 0; f < tg.num_factors(); ++f) {
    std::set<std::string> names;
    for (int vid : tg.factor(static_cast<int>(f)).vars) {
      names.insert(tg.variable(vid).name);
    }
    got.push_back(names);
  }
  const std::vector<std::set<std::string>> expect = {
      {"q"},
      {"x0"},
      {"q", "x0", "x1"},
      {"x1", "y1"},
      {"q", "x1", "x2"},
      {"x2", "y2"}};
  CHECK(got == expect);
}

TEST_CASE("factor initialization from ensembles") {
  const Sem sem = running_example();
  FactorGraph fg = FactorGraph::build(sem);

  // deterministic constant ensembles: potential mean is the constant and the
  // covariance is gamma2 I
  std::map<std::string, Ensemble> ens;
  double value = 1.0;
  for (const auto& v : sem.variables()) {
    Mat m(v.dim, 4);
    for (std::size_t j = 0; j < 4; ++j) m(0, j) = value;
    ens.emplace(v.name, Ensemble(std::move(m)));
    value += 1.0;
  }
  fg.init_factors_from_ensembles(ens, 0.01);
  CHECK(fg.default_message_rank() == 4);
  {
    const auto& f = fg.factor(fg.factor_id("f12"));
    const MomentsGaussian m = g::to_moments(f.potential);
    CHECK(m.mean[0] == doctest::Approx(1.0));  // x1 block
    CHECK(m.mean[1] == doctest::Approx(2.0));  // x2 block
    const Mat kd = dlr::densify(m.cov);
    CHECK(kd(0, 0) == doctest::Approx(0.01));
    CHECK(kd(0, 1) == doctest::Approx(0.0));
    CHECK(f.potential.precision.width() <= 4);
  }

  // random ensembles: densified factor covariance equals the sample
  // covariance plus gamma2 I
  const auto rens = sem::ancestral_sample(sem, 6, Rng(5));
  fg.init_factors_from_ensembles(rens, 0.01);
  {
    const auto& f = fg.factor(fg.factor_id("f234"));
    REQUIRE(f.joint_ensemble.has_value());
    const Mat dev = ensemble::deviations(f.joint_ensemble->samples);
    Eigen::MatrixXd want =
        oracle::to_eigen(dev) * oracle::to_eigen(dev).transpose() / 5.0 +
        0.01 * Eigen::MatrixXd::Identity(3, 3);
    const MomentsGaussian m = g::to_moments(f.potential);
    CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(m.cov)), want) <
          1e-9);
  }

  std::map<std::string, Ensemble> missing = rens;
  missing.erase("x3");
  CHECK_THROWS_AS(fg.init_factors_from_ensembles(missing, 0.01),
                  std::invalid_argument);
}

TEST_CASE("conditioning rewires the graph and updates ensembles") {
  const Sem sem = running_example();
  FactorGraph fg = FactorGraph::build(sem);
  const auto ens = sem::ancestral_sample(sem, 64, Rng(6));
  fg.init_factors_from_ensembles(ens, 0.01);

  // empty evidence: unchanged
  const FactorGraph same = fg.conditioned({}, 1e-3, 0.01);
  CHECK(same.num_factors() == fg.num_factors());
  CHECK(same.num_variables() == fg.num_variables());

  const std::map<std::string, Vec> evidence = {{"x5", {0.4}}, {"x6", {-0.2}}};
  const FactorGraph cond = fg.conditioned(evidence, 1e-3, 0.01);
  CHECK(cond.num_variables() == 4);
  CHECK(cond.num_factors() == 6);
  {
    const auto& f25 = cond.factor(cond.factor_id("f25"));
    REQUIRE(f25.vars.size() == 1);
    CHECK(cond.variable(f25.vars[0]).name == "x2");
    const auto& f456 = cond.factor(cond.factor_id("f456"));
    REQUIRE(f456.vars.size() == 1);
    CHECK(cond.variable(f456.vars[0]).name == "x4");
  }

  // evidence on a non-evidence variable is rejected
  CHECK_THROWS_AS(fg.conditioned({{"x2", {0.0}}}, 1e-3, 0.01),
                  std::invalid_argument);

  // conditioned factor mean approaches the closed-form conditional at large N
  {
    Rng r(7);
    const std::size_t n = 8192;
    Mat joint(2, n);
    for (std::size_t j = 0; j < n; ++j) {
      const double a = r.normal();
      joint(0, j) = 0.5 + a;
      joint(1, j) = 1.0 + 0.9 * a + 0.4 * r.normal();
    }
    Sem pair;
    pair.add_variable("a", 1, Role::Latent);
    pair.add_variable("b", 1, Role::Evidence);
    pair.add_ancestral("a", [](Rng& rng) { return Vec{rng.normal()}; });
    pair.add_process({"a"}, "b", [](const Vec& v) { return v; }, 0.4);
    FactorGraph pg = FactorGraph::build(pair);
    std::map<std::string, Ensemble> pens;
    pens.emplace("a", Ensemble(linalg::take_rows(joint, 0, 1)));
    pens.emplace("b", Ensemble(linalg::take_rows(joint, 1, 1)));
    pg.init_factors_from_ensembles(pens, 1e-4);
    const double b_star = 1.5;
    const FactorGraph pc = pg.conditioned({{"b", {b_star}}}, 1e-6, 1e-4);
    const auto& f = pc.factor(pc.factor_id("proc_b"));
    const MomentsGaussian m = g::to_moments(f.potential);
    // population: cov(a,b) = 0.9, var b = 0.81 + 0.16 = 0.97
    const double want = 0.5 + 0.9 / 0.97 * (b_star - 1.0);
    CHECK(std::fabs(m.mean[0] - want) < 0.05);
  }
}

TEST_CASE("message operations agree with dense sum-product") {
  // unary factor: message equals the potential
  {
    Sem solo;
    solo.add_variable("a", 2, Role::Query);
    solo.add_ancestral("a", [](Rng& rng) { return rng.normal_vec(2); });
    FactorGraph fg = FactorGraph::build(solo);
    const auto ens = sem::ancestral_sample(solo, 16, Rng(8));
    fg.init_factors_from_ensembles(ens, 0.01);
    const CanonicalGaussian msg = fg.factor_to_variable_message(0, 0);
    CHECK(oracle::rel_frobenius(
              oracle::to_eigen(dlr::densify(msg.precision)),
              oracle::to_eigen(dlr::densify(fg.factor(0).potential.precision))) ==
          0.0);
  }

  // two-variable linear-Gaussian factor with exact Gaussian inputs matches
  // the dense sum-product oracle
  {
    Rng rng(9);
    Sem sem;
    sem.add_variable("a", 2, Role::Query);
    sem.add_variable("b", 2, Role::Latent);
    sem.add_ancestral("a", [](Rng& r) { return r.normal_vec(2); });
    Eigen::MatrixXd amat(2, 2);
    amat << 0.9, 0.2, -0.3, 0.7;
    sem.add_process({"a"}, "b",
                    [&](const Vec& v) {
                      Vec out(2);
                      out[0] = 0.9 * v[0] + 0.2 * v[1] + 0.1;
                      out[1] = -0.3 * v[0] + 0.7 * v[1] - 0.2;
                      return out;
                    },
                    0.6);
    FactorGraph fg = FactorGraph::build(sem);

    const Eigen::VectorXd prior_mean = (Eigen::VectorXd(2) << 0.3, -0.1).finished();
    Eigen::MatrixXd prior_cov(2, 2);
    prior_cov << 1.2, 0.3, 0.3, 0.8;
    fg.set_potential(fg.factor_id("prior_a"),
                     prior_potential(prior_mean, prior_cov));
    const Eigen::VectorXd offset = (Eigen::VectorXd(2) << 0.1, -0.2).finished();
    const Eigen::VectorXd qdiag = Eigen::VectorXd::Constant(2, 0.36);
    fg.set_potential(fg.factor_id("proc_b"),
                     linear_process_potential(amat, offset, qdiag));

    BpOptions opts;
    opts.max_iters = 3;
    opts.message_rank = 0;  // exact
    FactorGraph run = fg;
    run.run_bp(opts);
    const CanonicalGaussian msg = run.factor_to_variable_message(
        run.factor_id("proc_b"), run.variable_id("b"));
    const MomentsGaussian got = g::to_moments(msg);

    // dense oracle: marginal of b under the exact joint
    const Eigen::MatrixXd kbb =
        amat * prior_cov * amat.transpose() +
        Eigen::MatrixXd(qdiag.asDiagonal());
    const Eigen::VectorXd mb = amat * prior_mean + offset;
    CHECK(std::fabs(got.mean[0] - mb(0)) < 1e-8);
    CHECK(std::fabs(got.mean[1] - mb(1)) < 1e-8);
    CHECK(oracle::rel_frobenius(oracle::to_eigen(dlr::densify(got.cov)), kbb) <
          1e-7);
  }
}

TEST_CASE("variable-to-factor products") {
  // scalar sums: (1,2) and (2,3) in, (3,5) out
  Sem sem;
  sem.add_variable("x", 1, Role::Query);
  sem.add_variable("u", 1, Role::Latent);
  sem.add_variable("v", 1, Role::Latent);
  sem.add_variable("w", 1, Role::Latent);
  sem.add_ancestral("x", [](Rng& r) { return Vec{r.normal()}; }, std::nullopt,
                    "fx");
  sem.add_process({"x"}, "u", [](const Vec& v) { return v; }, 1.0, "fu");
  sem.add_process({"x"}, "v", [](const Vec& v) { return v; }, 1.0, "fv");
  sem.add_process({"x"}, "w", [](const Vec& v) { return v; }, 1.0, "fw");
  FactorGraph fg = FactorGraph::build(sem);
  const auto ens = sem::ancestral_sample(sem, 8, Rng(10));
  fg.init_factors_from_ensembles(ens, 0.01);

  BpOptions opts;
  opts.max_iters = 1;
  opts.message_rank = 0;
  fg.run_bp(opts);

  // leaf variable: single neighbor gives the uninformative message
  const CanonicalGaussian leaf =
      fg.variable_to_factor_message(fg.variable_id("u"), fg.factor_id("fu"));
  CHECK(leaf.info[0] == 0.0);
  CHECK(dlr::densify(leaf.precision)(0, 0) == doctest::Approx(1e-8));

  // x has degree 4; its message to fw excludes fw and sums the rest, which
  // the dense oracle reproduces
  const CanonicalGaussian to_fw =
      fg.variable_to_factor_message(fg.variable_id("x"), fg.factor_id("fw"));
  double info_want = 0.0, prec_want = 1e-8;
  for (const char* fname : {"fx", "fu", "fv"}) {
    const CanonicalGaussian m = fg.factor_to_variable_message(
        fg.factor_id(fname), fg.variable_id("x"));
    // messages stored from the last sweep equal freshly computed ones here
    info_want += m.info[0];
    prec_want += dlr::densify(m.precision)(0, 0);
  }
  CHECK(to_fw.info[0] == doctest::Approx(info_want));
  CHECK(dlr::densify(to_fw.precision)(0, 0) ==
        doctest::Approx(prec_want).epsilon(1e-9));
}

TEST_CASE("run_bp is exact on trees with exact factor initialization") {
  // x1 -> x2 -> x4(evidence), x1 -> x3; dims {2,2,1,2}
  Sem sem;
  sem.add_variable("x1", 2, Role::Query);
  sem.add_variable("x2", 2, Role::Latent);
  sem.add_variable("x3", 1, Role::Latent);
  sem.add_variable("x4", 2, Role::Evidence);
  sem.add_ancestral("x1", [](Rng& r) { return r.normal_vec(2); }, std::nullopt,
                    "p1");
  sem.add_process({"x1"}, "x2", [](const Vec& v) { return v; }, 1.0, "p12");
  sem.add_process({"x1"}, "x3", [](const Vec& v) { return Vec{v[0]}; }, 1.0,
                  "p13");
  sem.add_process({"x2"}, "x4", [](const Vec& v) { return v; }, 1.0, "p24");
  FactorGraph fg = FactorGraph::build(sem);

  const Eigen::VectorXd m1 = (Eigen::VectorXd(2) << 0.5, -1.0).finished();
  Eigen::MatrixXd k1(2, 2);
  k1 << 1.0, 0.4, 0.4, 1.5;
  Eigen::MatrixXd a21(2, 2), a42(2, 2);
  a21 << 0.8, -0.2, 0.1, 0.9;
  a42 << 1.0, 0.3, 0.0, 0.7;
  Eigen::MatrixXd a31(1, 2);
  a31 << 0.5, -0.6;
  const Eigen::VectorXd b2 = (Eigen::VectorXd(2) << 0.2, 0.0).finished();
  const Eigen::VectorXd b3 = (Eigen::VectorXd(1) << -0.3).finished();
  const Eigen::VectorXd b4 = (Eigen::VectorXd(2) << 0.1, 0.4).finished();
  const Eigen::VectorXd q2 = (Eigen::VectorXd(2) << 0.3, 0.5).finished();
  const Eigen::VectorXd q3 = (Eigen::VectorXd(1) << 0.4).finished();
  const Eigen::VectorXd q4 = (Eigen::VectorXd(2) << 0.25, 0.35).finished();

  fg.set_potential(fg.factor_id("p1"), prior_potential(m1, k1));
  fg.set_potential(fg.factor_id("p12"), linear_process_potential(a21, b2, q2));
  fg.set_potential(fg.factor_id("p13"), linear_process_potential(a31, b3, q3));
  fg.set_potential(fg.factor_id("p24"), linear_process_potential(a42, b4, q4));

  // dense joint over (x1, x2, x3, x4)
  Eigen::MatrixXd joint_cov = Eigen::MatrixXd::Zero(7, 7);
  Eigen::VectorXd joint_mean(7);
  // forward construction through the linear maps
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(7, 7);  // x = t z + c, z root+noises
  // simpler: explicit propagation of cov blocks
  joint_mean.segment(0, 2) = m1;
  joint_mean.segment(2, 2) = a21 * m1 + b2;
  joint_mean.segment(4, 1) = a31 * m1 + b3;
  joint_mean.segment(5, 2) = a42 * (a21 * m1 + b2) + b4;
  const Eigen::MatrixXd k22 =
      a21 * k1 * a21.transpose() + Eigen::MatrixXd(q2.asDiagonal());
  const Eigen::MatrixXd k33 =
      a31 * k1 * a31.transpose() + Eigen::MatrixXd(q3.asDiagonal());
  const Eigen::MatrixXd k44 =
      a42 * k22 * a42.transpose() + Eigen::MatrixXd(q4.asDiagonal());
  joint_cov.block(0, 0, 2, 2) = k1;
  joint_cov.block(2, 2, 2, 2) = k22;
  joint_cov.block(4, 4, 1, 1) = k33;
  joint_cov.block(5, 5, 2, 2) = k44;
  joint_cov.block(0, 2, 2, 2) = k1 * a21.transpose();
  joint_cov.block(2, 0, 2, 2) = joint_cov.block(0, 2, 2, 2).transpose();
  joint_cov.block(0, 4, 2, 1) = k1 * a31.transpose();
  joint_cov.block(4, 0, 1, 2) = joint_cov.block(0, 4, 2, 1).transpose();
  joint_cov.block(2, 4, 2, 1) = a21 * k1 * a31.transpose();
  joint_cov.block(4, 2, 1, 2) = joint_cov.block(2, 4, 2, 1).transpose();
  joint_cov.block(0, 5, 2, 2) = joint_cov.block(0, 2, 2, 2) * a42.transpose();
  joint_cov.block(5, 0, 2, 2) = joint_cov.block(0, 5, 2, 2).transpose();
  joint_cov.block(2, 5, 2, 2) = k22 * a42.transpose();
  joint_cov.block(5, 2, 2, 2) = joint_cov.block(2, 5, 2, 2).transpose();
  joint_cov.block(4, 5, 1, 2) =
      joint_cov.block(4, 2, 1, 2) * a42.transpose();
  joint_cov.block(5, 4, 2, 1) = joint_cov.block(4, 5, 1, 2).transpose();

  const Eigen::VectorXd x4_star = (Eigen::VectorXd(2) << 1.3, -0.7).finished();
  const auto cond =
      oracle::condition_dense(joint_mean, joint_cov, 5, 2, x4_star);

  FactorGraph cg = fg.conditioned(
      {{"x4", Vec{x4_star(0), x4_star(1)}}}, 1e-3, 0.01);
  BpOptions opts;
  opts.max_iters = 5;  // diameter + 1
  opts.tol = 1e-12;
  opts.message_rank = 0;
  cg.run_bp(opts);

  const std::vector<std::pair<std::string, std::pair<int, int>>> blocks = {
      {"x1", {0, 2}}, {"x2", {2, 2}}, {"x3", {4, 1}}};
  for (const auto& [name, blk] : blocks) {
    const auto& v = cg.variable(cg.variable_id(name));
    const MomentsGaussian belief = g::to_moments(v.belief);
    for (int i = 0; i < blk.second; ++i) {
      CHECK(std::fabs(belief.mean[static_cast<std::size_t>(i)] -
                      cond.mean(blk.first + i)) < 1e-6);
    }
    const Mat kd = dlr::densify(belief.cov);
    for (int i = 0; i < blk.second; ++i) {
      for (int j = 0; j < blk.second; ++j) {
        CHECK(std::fabs(kd(static_cast<std::size_t>(i),
                           static_cast<std::size_t>(j)) -
                        cond.cov(blk.first + i, blk.first + j)) < 1e-5);
      }
    }
  }

  // max_iters = 0 reports zero iterations and the initial flat beliefs
  FactorGraph zg = fg.conditioned({{"x4", Vec{0.0, 0.0}}}, 1e-3, 0.01);
  BpOptions zopts;
  zopts.max_iters = 0;
  const BpReport rep = zg.run_bp(zopts);
  CHECK(rep.iterations == 0);
  CHECK(zg.variable(zg.variable_id("x1")).belief_mean[0] == 0.0);
}

TEST_CASE("run_genbp on the linear toy matches the exact posterior") {
  bench::SysidToyConfig toy;  // d=2, T=2
  const Sem sem = bench::build_sysid_toy_sem(toy);
  const bench::Truth truth = bench::simulate_truth(sem, 31);

  // exact dense posterior of q given x0 (clamped) and y1, y2
  const std::size_t d = toy.d;
  const Eigen::VectorXd x0 = oracle::to_eigen(truth.evidence.at("x0"));
  Eigen::MatrixXd amat = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    amat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.8;
    amat(static_cast<Eigen::Index>(i),
         static_cast<Eigen::Index>((i + 1) % d)) = 0.1;
  }
  const Eigen::MatrixXd bmat = 0.5 * Eigen::MatrixXd::Identity(d, d);
  // stacked (q, x1, x2, y1, y2): forward linear-Gaussian construction
  const Eigen::Index dim = static_cast<Eigen::Index>(5 * d);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  // q block
  cov.block(0, 0, d, d) = toy.q_prior_var * Eigen::MatrixXd::Identity(d, d);
  // x1 = A x0 + B q + e1
  mean.segment(d, d) = amat * x0;
  cov.block(d, 0, d, d) = bmat * cov.block(0, 0, d, d);
  cov.block(0, d, d, d) = cov.block(d, 0, d, d).transpose();
  cov.block(d, d, d, d) =
      bmat * cov.block(0, 0, d, d) * bmat.transpose() +
      toy.tau2 * Eigen::MatrixXd::Identity(d, d);
  // x2 = A x1 + B q + e2
  mean.segment(2 * d, d) = amat * mean.segment(d, d);
  cov.block(2 * d, 0, d, d) =
      amat * cov.block(d, 0, d, d) + bmat * cov.block(0, 0, d, d);
  cov.block(0, 2 * d, d, d) = cov.block(2 * d, 0, d, d).transpose();
  cov.block(2 * d, d, d, d) =
      amat * cov.block(d, d, d, d) + bmat * cov.block(0, d, d, d);
  cov.block(d, 2 * d, d, d) = cov.block(2 * d, d, d, d).transpose();
  cov.block(2 * d, 2 * d, d, d) =
      amat * cov.block(d, 2 * d, d, d) + bmat * cov.block(0, 2 * d, d, d) +
      toy.tau2 * Eigen::MatrixXd::Identity(d, d);
  // y1 = x1 + n1, y2 = x2 + n2
  auto obs = [&](Eigen::Index ox, Eigen::Index oy) {
    mean.segment(oy, d) = mean.segment(ox, d);
    for (Eigen::Index c = 0; c < dim; c += d) {
      if (c == oy) continue;
      cov.block(oy, c, d, d) = cov.block(ox, c, d, d);
      cov.block(c, oy, d, d) = cov.block(oy, c, d, d).transpose();
    }
    cov.block(oy, oy, d, d) = cov.block(ox, ox, d, d) +
                              toy.sigma_obs2 * Eigen::MatrixXd::Identity(d, d);
  };
  obs(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(3 * d));
  obs(static_cast<Eigen::Index>(2 * d), static_cast<Eigen::Index>(4 * d));

  Eigen::VectorXd y_star(2 * d);
  y_star.head(d) = oracle::to_eigen(truth.evidence.at("y1"));
  y_star.tail(d) = oracle::to_eigen(truth.evidence.at("y2"));
  const auto post = oracle::condition_dense(mean, cov, 3 * d, 2 * d, y_star);

  GenbpParams params;
  params.ensemble_size = 1024;
  params.seed = 77;
  params.outer_iters = 15;
  const GenbpResult res = run_genbp(sem, truth.evidence, params);
  const MomentsGaussian& belief = res.query_beliefs.at("q");
  for (std::size_t i = 0; i < d; ++i) {
    const double sd = std::sqrt(post.cov(static_cast<Eigen::Index>(i),
                                         static_cast<Eigen::Index>(i)));
    const double se = sd / std::sqrt(1024.0);
    CHECK(std::fabs(belief.mean[i] - post.mean(static_cast<Eigen::Index>(i))) <
          3.0 * se);
  }

  // conformed ensembles track the belief mean
  const Vec em = ensemble::mean(res.query_ensembles.at("q").samples);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(std::fabs(em[i] - belief.mean[i]) < 1e-8);
  }

  // determinism: identical runs are bit-identical
  const GenbpResult res2 = run_genbp(sem, truth.evidence, params);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(res2.query_beliefs.at("q").mean[i] == belief.mean[i]);
  }
  const auto& e1 = res.query_ensembles.at("q").samples;
  const auto& e2 = res2.query_ensembles.at("q").samples;
  for (std::size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1.data()[i] == e2.data()[i]);
  }
}

TEST_CASE("run_genbp without evidence stays at the prior") {
  bench::SysidToyConfig toy;
  const Sem sem = bench::build_sysid_toy_sem(toy);
  GenbpParams params;
  params.ensemble_size = 256;
  params.seed = 5;
  params.outer_iters = 6;
  const GenbpResult res = run_genbp(sem, {}, params);
  const Vec m = ensemble::mean(res.query_ensembles.at("q").samples);
  for (double v : m) CHECK(std::fabs(v) < 0.25);  // prior mean 0, sd 1
}
