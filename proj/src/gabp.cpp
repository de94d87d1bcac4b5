#include "genbp/gabp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "genbp/rng.hpp"

namespace genbp::gabp {

namespace {

using EMat = Eigen::MatrixXd;
using EVec = Eigen::VectorXd;

EVec to_eigen(const Vec& v) {
  return Eigen::Map<const EVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Vec from_eigen(const EVec& v) {
  return Vec(v.data(), v.data() + v.size());
}

struct DenseCanonical {
  EVec info;
  EMat prec;
};

DenseCanonical flat_message(Eigen::Index dim, double eps) {
  return {EVec::Zero(dim), EMat::Identity(dim, dim) * eps};
}

struct DenseFactor {
  std::string name;
  std::vector<int> vars;     // local variable indices, block order
  std::vector<int> offsets;
  int joint_dim = 0;
  DenseCanonical pot;

  // Relinearization support (derived processes only).
  const Process* proc = nullptr;
  std::function<Vec(const Vec&)> bound_fn;  // non-evidence inputs -> output
  EVec inv_noise;                           // 1/(noise_var + gamma2)
  std::vector<int> input_vars;              // local ids of non-evidence inputs
  bool output_evidence = false;
  EVec observed_output;
};

struct DenseGraph {
  std::vector<std::string> names;
  std::vector<int> dims;
  std::vector<Role> roles;
  std::vector<std::vector<int>> var_factors;
  std::vector<DenseFactor> factors;
  std::map<std::string, int> index;
};

}  // namespace

Mat jacobian_fd(const std::function<Vec(const Vec&)>& fn, const Vec& point,
                double step) {
  const Vec f0 = fn(point);
  const std::size_t out_dim = f0.size();
  Mat jac(out_dim, point.size());
  Vec x = point;
  for (std::size_t j = 0; j < point.size(); ++j) {
    const double h =
        step > 0.0 ? step : 1e-5 * std::max(1.0, std::fabs(point[j]));
    const double saved = x[j];
    x[j] = saved + h;
    const Vec fp = fn(x);
    x[j] = saved - h;
    const Vec fm = fn(x);
    x[j] = saved;
    require(fp.size() == out_dim && fm.size() == out_dim,
            "jacobian_fd: inconsistent output dimension");
    for (std::size_t i = 0; i < out_dim; ++i) {
      const double v = (fp[i] - fm[i]) / (2.0 * h);
      if (!std::isfinite(v)) {
        throw NumericalError("jacobian_fd: non-finite process output");
      }
      jac(i, j) = v;
    }
  }
  return jac;
}

DenseJoint linearize_factor(const std::function<Vec(const Vec&)>& fn,
                            const Vec& input_mean, const Mat& input_cov,
                            const Vec& noise_var, double gamma2) {
  const std::size_t din = input_mean.size();
  require(input_cov.rows() == din && input_cov.cols() == din,
          "linearize_factor: input covariance shape mismatch");
  const Mat j = jacobian_fd(fn, input_mean);
  const std::size_t dout = j.rows();
  require(noise_var.empty() || noise_var.size() == dout,
          "linearize_factor: noise length mismatch");

  const Eigen::Map<const EMat> jm(j.data(), dout, din);
  const Eigen::Map<const EMat> km(input_cov.data(), din, din);
  const EMat cross = km * jm.transpose();          // K J^T
  EMat out_block = jm * cross;                     // J K J^T
  for (std::size_t i = 0; i < dout; ++i) {
    out_block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) +=
        (noise_var.empty() ? 0.0 : noise_var[i]) + gamma2;
  }

  DenseJoint joint;
  joint.input_dim = din;
  const Vec fmean = fn(input_mean);
  joint.mean.resize(din + dout);
  std::copy(input_mean.begin(), input_mean.end(), joint.mean.begin());
  std::copy(fmean.begin(), fmean.end(), joint.mean.begin() + din);
  joint.cov = Mat(din + dout, din + dout);
  Eigen::Map<EMat> cm(joint.cov.data(), din + dout, din + dout);
  cm.topLeftCorner(din, din) = km;
  cm.topRightCorner(din, dout) = cross;
  cm.bottomLeftCorner(dout, din) = cross.transpose();
  cm.bottomRightCorner(dout, dout) = out_block;
  return joint;
}

namespace {

// Prior moments for an ancestral process: analytic if provided, otherwise
// seeded Monte Carlo.
std::pair<EVec, EMat> prior_moments(const Process& p, std::size_t dim,
                                    std::size_t samples, const Rng& rng) {
  if (p.prior_moments) {
    const auto& [m, k] = *p.prior_moments;
    require(m.size() == dim, "gabp: analytic prior mean dimension mismatch");
    return {to_eigen(m),
            Eigen::Map<const EMat>(k.data(), dim, dim)};
  }
  Rng stream = rng.split("gabp_prior").split(p.output);
  EMat draws(dim, static_cast<Eigen::Index>(samples));
  for (std::size_t c = 0; c < samples; ++c) {
    Rng col = stream.split(c);
    const Vec v = p.sampler(col);
    require(v.size() == dim, "gabp: prior sampler dimension mismatch");
    draws.col(static_cast<Eigen::Index>(c)) = to_eigen(v);
  }
  const EVec mean = draws.rowwise().mean();
  const EMat centered = draws.colwise() - mean;
  const EMat cov = centered * centered.transpose() /
                   static_cast<double>(samples - 1);
  return {mean, cov};
}

// (Re)derive the canonical potential of a linearized conditional factor at
// the given linearization point.
void relinearize(DenseFactor& f, const EVec& point) {
  const Vec p = from_eigen(point);
  const Mat j = jacobian_fd(f.bound_fn, p);
  const Eigen::Index dout = static_cast<Eigen::Index>(j.rows());
  const Eigen::Index din = static_cast<Eigen::Index>(j.cols());
  const Eigen::Map<const EMat> jm(j.data(), dout, din);
  const EVec c = to_eigen(f.bound_fn(p)) - jm * point;

  if (f.output_evidence) {
    // exp(-0.5 || y* - (J x + c) ||^2_Q): potential over the inputs.
    const EMat jw = f.inv_noise.asDiagonal() * jm;
    f.pot.prec = jm.transpose() * jw;
    f.pot.info = jm.transpose() *
                 (f.inv_noise.asDiagonal() * (f.observed_output - c));
  } else {
    // exp(-0.5 || x_out - (J x_in + c) ||^2_Q) over (inputs, output).
    const Eigen::Index d = din + dout;
    f.pot.prec = EMat::Zero(d, d);
    f.pot.info = EVec::Zero(d);
    const EMat jw = f.inv_noise.asDiagonal() * jm;  // Q^{-1} J
    f.pot.prec.topLeftCorner(din, din) = jm.transpose() * jw;
    f.pot.prec.topRightCorner(din, dout) = -jw.transpose();
    f.pot.prec.bottomLeftCorner(dout, din) = -jw;
    f.pot.prec.bottomRightCorner(dout, dout) =
        EMat(f.inv_noise.asDiagonal());
    f.pot.info.head(din) = -jm.transpose() * (f.inv_noise.asDiagonal() * c);
    f.pot.info.tail(dout) = f.inv_noise.asDiagonal() * c;
  }
}

}  // namespace

GabpResult run_gabp(const Sem& sem, const std::map<std::string, Vec>& evidence,
                    const GabpParams& params) {
  sem.validate();
  const Rng rng(params.seed);
  GabpResult result;
  result.diagnostics["method"] = "gabp";

  for (const auto& [name, value] : evidence) {
    const Variable& v = sem.variable(name);
    if (v.role != Role::Evidence) {
      throw std::invalid_argument(
          "gabp: evidence supplied for non-evidence variable '" + name + "'");
    }
    require(value.size() == v.dim, "gabp: evidence dimension mismatch");
  }

  DenseGraph g;
  for (const auto& v : sem.variables()) {
    if (evidence.count(v.name)) continue;
    g.index[v.name] = static_cast<int>(g.names.size());
    g.names.push_back(v.name);
    g.dims.push_back(static_cast<int>(v.dim));
    g.roles.push_back(v.role);
  }
  g.var_factors.resize(g.names.size());

  // Forward linearization state: means for every variable.
  std::map<std::string, EVec> means;
  for (const auto& [name, value] : evidence) means[name] = to_eigen(value);

  for (const auto& p : sem.processes()) {
    const std::size_t dout = sem.variable(p.output).dim;
    const bool out_ev = evidence.count(p.output) > 0;

    if (p.ancestral()) {
      const auto [m, k] =
          prior_moments(p, dout, params.prior_moment_samples, rng);
      if (!out_ev) {
        means[p.output] = m;
        DenseFactor f;
        f.name = p.name;
        f.vars = {g.index.at(p.output)};
        f.offsets = {0};
        f.joint_dim = static_cast<int>(dout);
        EMat cov = k;
        Eigen::LLT<EMat> llt(cov);
        if (llt.info() != Eigen::Success) {
          cov.diagonal().array() += params.gamma2;
          llt.compute(cov);
          if (llt.info() != Eigen::Success) {
            throw NumericalError("gabp: prior covariance not positive definite");
          }
        }
        f.pot.prec = llt.solve(EMat::Identity(cov.rows(), cov.cols()));
        f.pot.prec = 0.5 * (f.pot.prec + f.pot.prec.transpose()).eval();
        f.pot.info = f.pot.prec * m;
        g.var_factors[static_cast<std::size_t>(f.vars[0])].push_back(
            static_cast<int>(g.factors.size()));
        g.factors.push_back(std::move(f));
      }
      continue;
    }

    // Derived process: clamp evidence inputs into the mean function.
    std::vector<std::string> free_inputs;
    for (const auto& in : p.inputs) {
      if (!evidence.count(in)) free_inputs.push_back(in);
    }
    const Process* proc = &p;
    auto bound_fn = [proc, &sem, evidence,
                     free_inputs](const Vec& free_stacked) -> Vec {
      Vec full;
      std::size_t free_off = 0;
      for (const auto& in : proc->inputs) {
        const std::size_t dim = sem.variable(in).dim;
        if (evidence.count(in)) {
          const Vec& v = evidence.at(in);
          full.insert(full.end(), v.begin(), v.end());
        } else {
          full.insert(full.end(), free_stacked.begin() + free_off,
                      free_stacked.begin() + free_off + dim);
          free_off += dim;
        }
      }
      return proc->mean_fn(full);
    };

    // Forward mean for the output (observed outputs keep their evidence).
    if (!out_ev) {
      Vec stacked;
      for (const auto& in : free_inputs) {
        const EVec& m = means.at(in);
        stacked.insert(stacked.end(), m.data(), m.data() + m.size());
      }
      means[p.output] = to_eigen(bound_fn(stacked));
    }

    if (free_inputs.empty() && out_ev) continue;  // fully observed, constant
    if (free_inputs.empty() && !out_ev) {
      // Output depends only on evidence: a unary Gaussian on the output.
      DenseFactor f;
      f.name = p.name;
      f.vars = {g.index.at(p.output)};
      f.offsets = {0};
      f.joint_dim = static_cast<int>(dout);
      EVec q(dout);
      for (std::size_t i = 0; i < dout; ++i) {
        q(static_cast<Eigen::Index>(i)) =
            1.0 /
            ((p.noise_sd.empty() ? 0.0 : p.noise_sd[i] * p.noise_sd[i]) +
             params.gamma2);
      }
      f.pot.prec = EMat(q.asDiagonal());
      f.pot.info = q.asDiagonal() * means.at(p.output);
      g.var_factors[static_cast<std::size_t>(f.vars[0])].push_back(
          static_cast<int>(g.factors.size()));
      g.factors.push_back(std::move(f));
      continue;
    }

    DenseFactor f;
    f.name = p.name;
    f.proc = proc;
    f.bound_fn = bound_fn;
    f.output_evidence = out_ev;
    f.inv_noise.resize(static_cast<Eigen::Index>(dout));
    for (std::size_t i = 0; i < dout; ++i) {
      f.inv_noise(static_cast<Eigen::Index>(i)) =
          1.0 /
          ((p.noise_sd.empty() ? 0.0 : p.noise_sd[i] * p.noise_sd[i]) +
           params.gamma2);
    }
    int off = 0;
    for (const auto& in : free_inputs) {
      f.input_vars.push_back(g.index.at(in));
      f.vars.push_back(g.index.at(in));
      f.offsets.push_back(off);
      off += static_cast<int>(sem.variable(in).dim);
    }
    if (out_ev) {
      f.observed_output = to_eigen(evidence.at(p.output));
    } else {
      f.vars.push_back(g.index.at(p.output));
      f.offsets.push_back(off);
      off += static_cast<int>(dout);
    }
    f.joint_dim = off;

    EVec point(f.offsets.empty() ? 0 : f.joint_dim);
    {
      Eigen::Index o = 0;
      for (const auto& in : free_inputs) {
        const EVec& m = means.at(in);
        point.segment(o, m.size()) = m;
        o += m.size();
      }
      point.conservativeResize(o);
    }
    relinearize(f, point);
    for (int vid : f.vars) {
      g.var_factors[static_cast<std::size_t>(vid)].push_back(
          static_cast<int>(g.factors.size()));
    }
    g.factors.push_back(std::move(f));
  }

  // Message state: one canonical message per (factor, block).
  std::vector<std::vector<DenseCanonical>> msgs(g.factors.size());
  for (std::size_t fi = 0; fi < g.factors.size(); ++fi) {
    for (int vid : g.factors[fi].vars) {
      msgs[fi].push_back(flat_message(g.dims[static_cast<std::size_t>(vid)],
                                      params.uninformative_eps));
    }
  }

  std::vector<DenseCanonical> beliefs(g.names.size());
  std::vector<EVec> belief_means(g.names.size());
  for (std::size_t vi = 0; vi < g.names.size(); ++vi) {
    beliefs[vi] = flat_message(g.dims[vi], params.uninformative_eps);
    belief_means[vi] = EVec::Zero(g.dims[vi]);
  }

  auto fail = [&](const std::string& where) {
    result.failed = true;
    result.failure = where;
  };

  std::vector<double> residuals;
  for (int iter = 0; iter < params.max_iters && !result.failed; ++iter) {
    // Relinearize at the current belief means on the configured cadence.
    if (iter > 0 && params.relin_every > 0 && iter % params.relin_every == 0) {
      for (auto& f : g.factors) {
        if (f.proc == nullptr) continue;
        EVec point(f.output_evidence
                       ? f.joint_dim
                       : f.joint_dim - g.dims[static_cast<std::size_t>(
                                           f.vars.back())]);
        Eigen::Index o = 0;
        for (int vid : f.input_vars) {
          const EVec& m = belief_means[static_cast<std::size_t>(vid)];
          point.segment(o, m.size()) = m;
          o += m.size();
        }
        relinearize(f, point);
      }
    }

    std::vector<std::vector<DenseCanonical>> next(g.factors.size());
    for (std::size_t fi = 0; fi < g.factors.size() && !result.failed; ++fi) {
      const DenseFactor& f = g.factors[fi];
      next[fi].resize(f.vars.size());
      for (std::size_t b = 0; b < f.vars.size(); ++b) {
        // Joint precision: factor potential plus incoming messages on the
        // non-target blocks (cavity products).
        EMat prec = f.pot.prec;
        EVec info = f.pot.info;
        for (std::size_t b2 = 0; b2 < f.vars.size(); ++b2) {
          if (b2 == b) continue;
          const int vid = f.vars[b2];
          const Eigen::Index dim = g.dims[static_cast<std::size_t>(vid)];
          const Eigen::Index off = f.offsets[b2];
          EMat sum_prec = EMat::Identity(dim, dim) * params.uninformative_eps;
          EVec sum_info = EVec::Zero(dim);
          for (int fid2 : g.var_factors[static_cast<std::size_t>(vid)]) {
            if (fid2 == static_cast<int>(fi)) continue;
            const DenseFactor& f2 = g.factors[static_cast<std::size_t>(fid2)];
            std::size_t slot = 0;
            while (f2.vars[slot] != vid) ++slot;
            sum_prec += msgs[static_cast<std::size_t>(fid2)][slot].prec;
            sum_info += msgs[static_cast<std::size_t>(fid2)][slot].info;
          }
          prec.block(off, off, dim, dim) += sum_prec;
          info.segment(off, dim) += sum_info;
        }
        // Schur-complement marginalization onto the target block.
        const Eigen::Index dt = g.dims[static_cast<std::size_t>(f.vars[b])];
        const Eigen::Index ot = f.offsets[b];
        if (f.vars.size() == 1) {
          next[fi][b] = {info, prec};
          continue;
        }
        const Eigen::Index dk = f.joint_dim - dt;
        EMat pkk(dk, dk);
        EMat pkt(dk, dt);
        EVec nk(dk);
        // Gather the non-target rows/cols.
        std::vector<Eigen::Index> keep;
        keep.reserve(static_cast<std::size_t>(dk));
        for (Eigen::Index i = 0; i < f.joint_dim; ++i) {
          if (i < ot || i >= ot + dt) keep.push_back(i);
        }
        for (Eigen::Index r = 0; r < dk; ++r) {
          nk(r) = info(keep[static_cast<std::size_t>(r)]);
          for (Eigen::Index c = 0; c < dk; ++c) {
            pkk(r, c) = prec(keep[static_cast<std::size_t>(r)],
                             keep[static_cast<std::size_t>(c)]);
          }
          for (Eigen::Index c = 0; c < dt; ++c) {
            pkt(r, c) = prec(keep[static_cast<std::size_t>(r)], ot + c);
          }
        }
        Eigen::LLT<EMat> llt(pkk);
        if (llt.info() != Eigen::Success) {
          fail("factor '" + f.name + "' sweep " + std::to_string(iter + 1) +
               ": non-positive-definite marginalization block");
          break;
        }
        const EMat s = llt.solve(pkt);  // P_kk^{-1} P_kt
        DenseCanonical out;
        out.prec = prec.block(ot, ot, dt, dt) - pkt.transpose() * s;
        out.prec = 0.5 * (out.prec + out.prec.transpose()).eval();
        out.info = info.segment(ot, dt) - s.transpose() * nk;
        next[fi][b] = std::move(out);
      }
    }
    if (result.failed) break;
    msgs = std::move(next);

    double residual = 0.0;
    for (std::size_t vi = 0; vi < g.names.size(); ++vi) {
      DenseCanonical belief = flat_message(g.dims[vi], params.uninformative_eps);
      for (int fid : g.var_factors[vi]) {
        const DenseFactor& f = g.factors[static_cast<std::size_t>(fid)];
        std::size_t slot = 0;
        while (f.vars[slot] != static_cast<int>(vi)) ++slot;
        belief.prec += msgs[static_cast<std::size_t>(fid)][slot].prec;
        belief.info += msgs[static_cast<std::size_t>(fid)][slot].info;
      }
      Eigen::LLT<EMat> llt(belief.prec);
      if (llt.info() != Eigen::Success) {
        fail("belief for '" + g.names[vi] + "' sweep " +
             std::to_string(iter + 1) + ": non-positive-definite precision");
        break;
      }
      const EVec mean = llt.solve(belief.info);
      double num = 0.0, scale = 0.0;
      for (Eigen::Index i = 0; i < mean.size(); ++i) {
        num = std::max(num, std::fabs(mean(i) - belief_means[vi](i)));
        scale = std::max(scale, std::fabs(mean(i)));
      }
      residual = std::max(residual, num / (1.0 + scale));
      belief_means[vi] = mean;
      beliefs[vi] = std::move(belief);
    }
    if (result.failed) break;
    residuals.push_back(residual);
    result.iterations = iter + 1;
    if (residual < params.tol) {
      result.converged = true;
      break;
    }
  }

  for (std::size_t vi = 0; vi < g.names.size(); ++vi) {
    if (g.roles[vi] != Role::Query) continue;
    GabpBelief out;
    out.mean = from_eigen(belief_means[vi]);
    Eigen::LLT<EMat> llt(beliefs[vi].prec);
    if (llt.info() == Eigen::Success) {
      const EMat cov =
          llt.solve(EMat::Identity(g.dims[vi], g.dims[vi]));
      out.cov = Mat(static_cast<std::size_t>(g.dims[vi]),
                    static_cast<std::size_t>(g.dims[vi]));
      Eigen::Map<EMat>(out.cov.data(), g.dims[vi], g.dims[vi]) =
          0.5 * (cov + cov.transpose());
      out.cov_positive_definite = true;
    }
    result.query_beliefs.emplace(g.names[vi], std::move(out));
  }

  result.diagnostics["iterations"] = result.iterations;
  result.diagnostics["converged"] = result.converged;
  result.diagnostics["residuals"] = residuals;
  result.diagnostics["failed"] = result.failed;
  if (result.failed) result.diagnostics["failure"] = result.failure;
  return result;
}

}  // namespace genbp::gabp
