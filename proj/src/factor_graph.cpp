#include "genbp/factor_graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

#include "genbp/kernels.hpp"
#include "genbp/linalg.hpp"

namespace genbp {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double relative_change(const Vec& now, const Vec& before) {
  double num = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < now.size(); ++i) {
    const double prev = i < before.size() ? before[i] : 0.0;
    num = std::max(num, std::fabs(now[i] - prev));
    scale = std::max(scale, std::fabs(now[i]));
  }
  return num / (1.0 + scale);
}

// Canonical-form conditioning on one block: info picks up +R_rest (R_e^T v),
// precision truncates to the remaining rows.
CanonicalGaussian condition_canonical_block(const CanonicalGaussian& joint,
                                            std::size_t offset,
                                            std::size_t dim, const Vec& value) {
  const std::size_t d = joint.dim();
  const std::size_t rest = d - dim;
  const std::size_t width = joint.precision.width();

  Vec info(rest);
  Vec nugget(rest);
  Mat comp(rest, width);
  for (std::size_t i = 0; i < offset; ++i) {
    info[i] = joint.info[i];
    nugget[i] = joint.precision.nugget[i];
  }
  for (std::size_t i = offset + dim; i < d; ++i) {
    info[i - dim] = joint.info[i];
    nugget[i - dim] = joint.precision.nugget[i];
  }
  for (std::size_t j = 0; j < width; ++j) {
    const double* src = joint.precision.component.col(j);
    double* dst = comp.col(j);
    std::memcpy(dst, src, offset * sizeof(double));
    std::memcpy(dst + offset, src + offset + dim,
                (rest - offset) * sizeof(double));
  }
  if (width > 0) {
    const Mat re = linalg::take_rows(joint.precision.component, offset, dim);
    Vec t(width, 0.0);
    kernels::gemm_tn(width, 1, dim, 1.0, re.data(), value.data(), 0.0,
                     t.data());
    kernels::gemm_nn(rest, 1, width, 1.0, comp.data(), t.data(), 1.0,
                     info.data());
  }
  return CanonicalGaussian(std::move(info),
                           DlrMatrix(std::move(nugget), std::move(comp), -1));
}

}  // namespace

std::size_t FactorNode::block_of(int var_id) const {
  for (std::size_t b = 0; b < vars.size(); ++b) {
    if (vars[b] == var_id) return b;
  }
  throw std::invalid_argument("FactorNode: variable is not a neighbor");
}

FactorGraph FactorGraph::build(const Sem& sem) {
  sem.validate();
  FactorGraph g;
  for (const auto& v : sem.variables()) {
    VariableNode node;
    node.id = static_cast<int>(g.vars_.size());
    node.name = v.name;
    node.dim = v.dim;
    node.role = v.role;
    g.vars_.push_back(std::move(node));
  }
  for (const auto& p : sem.processes()) {
    FactorNode f;
    f.id = static_cast<int>(g.factors_.size());
    f.name = p.name;
    std::size_t off = 0;
    auto attach = [&](const std::string& name) {
      const int vid = g.variable_id(name);
      f.vars.push_back(vid);
      f.offsets.push_back(off);
      off += g.vars_[vid].dim;
    };
    for (const auto& in : p.inputs) attach(in);
    attach(p.output);
    f.joint_dim = off;
    for (int vid : f.vars) g.vars_[vid].factors.push_back(f.id);
    g.factors_.push_back(std::move(f));
  }
  g.msgs_.resize(g.factors_.size());
  return g;
}

int FactorGraph::variable_id(const std::string& name) const {
  for (const auto& v : vars_) {
    if (v.name == name) return v.id;
  }
  throw std::invalid_argument("FactorGraph: unknown variable '" + name + "'");
}

bool FactorGraph::has_variable(const std::string& name) const {
  return std::any_of(vars_.begin(), vars_.end(),
                     [&](const VariableNode& v) { return v.name == name; });
}

int FactorGraph::factor_id(const std::string& name) const {
  for (const auto& f : factors_) {
    if (f.name == name) return f.id;
  }
  throw std::invalid_argument("FactorGraph: unknown factor '" + name + "'");
}

void FactorGraph::set_potential(int factor_id, CanonicalGaussian pot) {
  FactorNode& f = factors_.at(factor_id);
  require(pot.dim() == f.joint_dim,
          "set_potential: dimension does not match the factor's joint");
  f.potential = std::move(pot);
  messages_initialized_ = false;
}

void FactorGraph::init_factors_from_ensembles(
    const std::map<std::string, Ensemble>& ens, double gamma2) {
  std::size_t n = 0;
  for (auto& f : factors_) {
    std::size_t rows = f.joint_dim;
    for (int vid : f.vars) {
      auto it = ens.find(vars_[vid].name);
      if (it == ens.end()) {
        throw std::invalid_argument("init_factors_from_ensembles: missing "
                                    "ensemble for '" + vars_[vid].name + "'");
      }
      if (n == 0) n = it->second.count();
      require(it->second.count() == n,
              "init_factors_from_ensembles: ensembles must share N");
      require(it->second.dim() == vars_[vid].dim,
              "init_factors_from_ensembles: ensemble dimension mismatch");
    }
    Mat joint(rows, n);
    for (std::size_t b = 0; b < f.vars.size(); ++b) {
      const Mat& src = ens.at(vars_[f.vars[b]].name).samples;
      for (std::size_t c = 0; c < n; ++c) {
        std::memcpy(joint.col(c) + f.offsets[b], src.col(c),
                    vars_[f.vars[b]].dim * sizeof(double));
      }
    }
    f.joint_ensemble = Ensemble(std::move(joint));
    f.potential = gaussian::to_canonical(
        ensemble::implied_gaussian(*f.joint_ensemble, NuggetSpec(gamma2)));
  }
  default_message_rank_ = n;
  messages_initialized_ = false;
}

FactorGraph FactorGraph::conditioned(const std::map<std::string, Vec>& evidence,
                                     double sigma2, double gamma2) const {
  for (const auto& [name, value] : evidence) {
    const int vid = variable_id(name);
    if (vars_[vid].role != Role::Evidence) {
      throw std::invalid_argument(
          "conditioned: evidence supplied for non-evidence variable '" + name +
          "'");
    }
    require(value.size() == vars_[vid].dim,
            "conditioned: evidence value has wrong dimension");
  }

  FactorGraph out;
  out.default_message_rank_ = default_message_rank_;
  std::vector<int> remap(vars_.size(), -1);
  for (const auto& v : vars_) {
    if (evidence.count(v.name)) continue;
    VariableNode node;
    node.id = static_cast<int>(out.vars_.size());
    node.name = v.name;
    node.dim = v.dim;
    node.role = v.role;
    remap[v.id] = node.id;
    out.vars_.push_back(std::move(node));
  }

  for (const auto& f : factors_) {
    std::vector<std::size_t> evidence_blocks;
    for (std::size_t b = 0; b < f.vars.size(); ++b) {
      if (evidence.count(vars_[f.vars[b]].name)) evidence_blocks.push_back(b);
    }

    FactorNode nf;
    nf.name = f.name;
    if (evidence_blocks.empty()) {
      nf.potential = f.potential;
      nf.joint_ensemble = f.joint_ensemble;
      nf.joint_dim = f.joint_dim;
      for (std::size_t b = 0; b < f.vars.size(); ++b) {
        nf.vars.push_back(remap[f.vars[b]]);
        nf.offsets.push_back(f.offsets[b]);
      }
    } else {
      if (evidence_blocks.size() == f.vars.size()) continue;  // constant factor

      // Condition highest offsets first so earlier offsets stay valid.
      std::vector<std::size_t> order(evidence_blocks.rbegin(),
                                     evidence_blocks.rend());
      std::optional<Ensemble> ens = f.joint_ensemble;
      CanonicalGaussian pot = f.potential;
      std::vector<std::size_t> offsets = f.offsets;
      std::vector<int> vids = f.vars;
      for (std::size_t b : order) {
        const std::size_t dim = vars_[f.vars[b]].dim;
        const Vec& value = evidence.at(vars_[f.vars[b]].name);
        if (ens) {
          ens = ensemble::matheron_condition(*ens, offsets[b], dim, value,
                                             NuggetSpec(sigma2));
        } else {
          pot = condition_canonical_block(pot, offsets[b], dim, value);
        }
        for (std::size_t b2 = b + 1; b2 < offsets.size(); ++b2) {
          offsets[b2] -= dim;
        }
        offsets.erase(offsets.begin() + static_cast<std::ptrdiff_t>(b));
        vids.erase(vids.begin() + static_cast<std::ptrdiff_t>(b));
      }
      if (ens) {
        pot = gaussian::to_canonical(
            ensemble::implied_gaussian(*ens, NuggetSpec(gamma2)));
      }
      nf.joint_ensemble = std::move(ens);
      nf.potential = std::move(pot);
      nf.offsets = std::move(offsets);
      nf.joint_dim = nf.potential.dim();
      for (int vid : vids) nf.vars.push_back(remap[vid]);
    }
    nf.id = static_cast<int>(out.factors_.size());
    for (int vid : nf.vars) out.vars_[vid].factors.push_back(nf.id);
    out.factors_.push_back(std::move(nf));
  }
  out.msgs_.resize(out.factors_.size());
  return out;
}

void FactorGraph::reset_messages(double eps) {
  msgs_.assign(factors_.size(), {});
  for (const auto& f : factors_) {
    std::vector<CanonicalGaussian> slots;
    slots.reserve(f.vars.size());
    for (int vid : f.vars) {
      slots.push_back(gaussian::uninformative(vars_[vid].dim, eps));
    }
    msgs_[f.id] = std::move(slots);
  }
  messages_initialized_ = true;
}

CanonicalGaussian FactorGraph::variable_to_factor_message(
    int var_id, int exclude_factor) const {
  const VariableNode& v = vars_.at(var_id);
  CanonicalGaussian acc = gaussian::uninformative(v.dim);
  if (!messages_initialized_) return acc;
  for (int fid : v.factors) {
    if (fid == exclude_factor) continue;
    const std::size_t slot = factors_[fid].block_of(var_id);
    acc = gaussian::multiply_canonical(acc, msgs_[fid][slot]);
  }
  return acc;
}

CanonicalGaussian FactorGraph::f2v_core(
    const FactorNode& f, std::size_t target_block,
    const std::vector<const CanonicalGaussian*>& incoming,
    std::size_t message_rank, std::size_t* peak_width) const {
  const std::size_t dt = vars_[f.vars[target_block]].dim;
  const std::size_t off = f.offsets[target_block];

  // Unary factor: the message is the potential itself.
  if (f.vars.size() == 1) {
    return f.potential;
  }

  // Block-local addition of each incoming message into the joint precision.
  Vec info = f.potential.info;
  Vec nugget = f.potential.precision.nugget;
  std::size_t total_width = f.potential.precision.width();
  for (std::size_t b = 0; b < f.vars.size(); ++b) {
    if (b == target_block || incoming[b] == nullptr) continue;
    const CanonicalGaussian& m = *incoming[b];
    require(m.dim() == vars_[f.vars[b]].dim,
            "f2v: incoming message dimension mismatch");
    const std::size_t o = f.offsets[b];
    for (std::size_t i = 0; i < m.dim(); ++i) {
      info[o + i] += m.info[i];
      nugget[o + i] += m.precision.nugget[i];
    }
    total_width += m.precision.width();
  }
  Mat comp(f.joint_dim, total_width);
  std::size_t col = 0;
  const Mat& pc = f.potential.precision.component;
  if (pc.size() > 0) {
    std::memcpy(comp.col(0), pc.data(), pc.size() * sizeof(double));
  }
  col += pc.cols();
  for (std::size_t b = 0; b < f.vars.size(); ++b) {
    if (b == target_block || incoming[b] == nullptr) continue;
    const Mat& mc = incoming[b]->precision.component;
    for (std::size_t j = 0; j < mc.cols(); ++j, ++col) {
      std::memcpy(comp.col(col) + f.offsets[b], mc.col(j),
                  mc.rows() * sizeof(double));
    }
  }
  DlrMatrix joint_p(std::move(nugget), std::move(comp), -1);
  if (peak_width != nullptr) {
    *peak_width = std::max(*peak_width, total_width);
  }

  Vec mean_t(dt);
  DlrMatrix cov_t;
  try {
    if (total_width <= f.joint_dim) {
      const DlrMatrix k = dlr::invert(joint_p);
      const Vec m = dlr::matvec(k, info);
      std::copy(m.begin() + off, m.begin() + off + dt, mean_t.begin());
      Vec vt(k.nugget.begin() + off, k.nugget.begin() + off + dt);
      cov_t = DlrMatrix(std::move(vt),
                        linalg::take_rows(k.component, off, dt), 1);
      if (message_rank > 0) cov_t = dlr::rank_reduce(cov_t, message_rank);
    } else {
      // High-rank fallback, fused with the marginalization: solve on the
      // dense joint and spectrally recover only the target block.
      const Mat pd = dlr::densify(joint_p);
      const auto g = linalg::chol_lower(pd);
      if (!g) {
        throw NumericalError("joint precision not positive definite");
      }
      const Vec m = linalg::chol_solve(*g, info);
      std::copy(m.begin() + off, m.begin() + off + dt, mean_t.begin());
      Mat rhs(f.joint_dim, dt);
      for (std::size_t j = 0; j < dt; ++j) rhs(off + j, j) = 1.0;
      const Mat kcols = linalg::chol_solve_mat(*g, rhs);
      Vec vt(dt);
      for (std::size_t i = 0; i < dt; ++i) vt[i] = 1.0 / joint_p.nugget[off + i];
      Mat delta(dt, dt);
      for (std::size_t j = 0; j < dt; ++j) {
        for (std::size_t i = 0; i < dt; ++i) delta(i, j) = kcols(off + i, j);
        delta(j, j) -= vt[j];
      }
      for (std::size_t j = 0; j < dt; ++j) {
        for (std::size_t i = j + 1; i < dt; ++i) {
          const double v = 0.5 * (delta(i, j) + delta(j, i));
          delta(i, j) = v;
          delta(j, i) = v;
        }
      }
      const auto eig = linalg::sym_eig(delta);
      double lmax = 0.0;
      for (double v : eig.values) lmax = std::max(lmax, std::fabs(v));
      const double drop = 1e-12 * lmax;
      std::size_t keep = 0;
      const std::size_t cap = message_rank > 0 ? message_rank : dt;
      while (keep < dt && keep < cap && eig.values[keep] > drop) ++keep;
      Mat lt(dt, keep);
      for (std::size_t j = 0; j < keep; ++j) {
        const double s = std::sqrt(eig.values[j]);
        for (std::size_t i = 0; i < dt; ++i) lt(i, j) = s * eig.vectors(i, j);
      }
      cov_t = DlrMatrix(std::move(vt), std::move(lt), 1);
    }
    DlrMatrix p_t = dlr::invert_auto(cov_t);
    Vec n_t = dlr::matvec(p_t, mean_t);
    return CanonicalGaussian(std::move(n_t), std::move(p_t));
  } catch (const NumericalError& e) {
    throw NumericalError("factor '" + f.name + "': " + e.what());
  }
}

CanonicalGaussian FactorGraph::factor_to_variable_message(
    int factor_id, int var_id, std::size_t message_rank,
    std::size_t width_cap) const {
  const FactorNode& f = factors_.at(factor_id);
  const std::size_t target = f.block_of(var_id);
  std::vector<CanonicalGaussian> owned(f.vars.size());
  std::vector<const CanonicalGaussian*> incoming(f.vars.size(), nullptr);
  for (std::size_t b = 0; b < f.vars.size(); ++b) {
    if (b == target) continue;
    owned[b] = variable_to_factor_message(f.vars[b], factor_id);
    if (width_cap > 0 && owned[b].precision.width() > width_cap) {
      owned[b] = CanonicalGaussian(
          owned[b].info, dlr::rank_reduce(owned[b].precision, width_cap));
    }
    incoming[b] = &owned[b];
  }
  return f2v_core(f, target, incoming, message_rank, nullptr);
}

CanonicalGaussian FactorGraph::compute_belief(int var_id,
                                              std::size_t width_cap) const {
  const VariableNode& v = vars_.at(var_id);
  CanonicalGaussian acc = gaussian::uninformative(v.dim);
  if (messages_initialized_) {
    for (int fid : v.factors) {
      acc = gaussian::multiply_canonical(
          acc, msgs_[fid][factors_[fid].block_of(var_id)]);
    }
  }
  if (width_cap > 0 && acc.precision.width() > width_cap) {
    acc = CanonicalGaussian(acc.info,
                            dlr::rank_reduce(acc.precision, width_cap));
  }
  return acc;
}

BpReport FactorGraph::run_bp(const BpOptions& opts) {
  BpReport report;
  reset_messages(opts.uninformative_eps);
  for (auto& v : vars_) {
    v.belief_mean.assign(v.dim, 0.0);
  }
  const std::size_t rank =
      opts.message_rank > 0 ? opts.message_rank : default_message_rank_;
  const std::size_t cap =
      opts.incoming_width_cap > 0 ? opts.incoming_width_cap : rank;

  // cache[v][j]: capped product of messages into v excluding neighbor j.
  std::vector<std::vector<CanonicalGaussian>> cache(vars_.size());

  auto capped = [&](CanonicalGaussian g) {
    if (cap > 0 && g.precision.width() > cap) {
      return CanonicalGaussian(g.info, dlr::rank_reduce(g.precision, cap));
    }
    return g;
  };

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    const auto t0 = Clock::now();
    // Exclude-one products via reduced prefix/suffix sweeps.
    for (const auto& v : vars_) {
      const std::size_t deg = v.factors.size();
      auto& slots = cache[v.id];
      slots.assign(deg, CanonicalGaussian());
      if (deg == 0) continue;
      std::vector<CanonicalGaussian> fwd(deg), bwd(deg);
      for (std::size_t j = 0; j < deg; ++j) {
        const std::size_t slot = factors_[v.factors[j]].block_of(v.id);
        const CanonicalGaussian& m = msgs_[v.factors[j]][slot];
        fwd[j] = j == 0 ? m : capped(gaussian::multiply_canonical(fwd[j - 1], m));
      }
      for (std::size_t j = deg; j-- > 0;) {
        const std::size_t slot = factors_[v.factors[j]].block_of(v.id);
        const CanonicalGaussian& m = msgs_[v.factors[j]][slot];
        bwd[j] = j + 1 == deg
                     ? m
                     : capped(gaussian::multiply_canonical(bwd[j + 1], m));
      }
      for (std::size_t j = 0; j < deg; ++j) {
        CanonicalGaussian prod = gaussian::uninformative(v.dim, opts.uninformative_eps);
        if (j > 0 && j + 1 < deg) {
          prod = gaussian::multiply_canonical(
              prod, gaussian::multiply_canonical(fwd[j - 1], bwd[j + 1]));
        } else if (j > 0) {
          prod = gaussian::multiply_canonical(prod, fwd[j - 1]);
        } else if (j + 1 < deg) {
          prod = gaussian::multiply_canonical(prod, bwd[j + 1]);
        }
        slots[j] = capped(std::move(prod));
      }
    }

    // Synchronous factor-to-variable sweep.
    std::vector<std::vector<CanonicalGaussian>> next(factors_.size());
    for (const auto& f : factors_) {
      next[f.id].resize(f.vars.size());
      std::vector<const CanonicalGaussian*> incoming(f.vars.size(), nullptr);
      for (std::size_t b = 0; b < f.vars.size(); ++b) {
        const VariableNode& nv = vars_[f.vars[b]];
        std::size_t pos = 0;
        while (nv.factors[pos] != f.id) ++pos;
        incoming[b] = &cache[nv.id][pos];
      }
      for (std::size_t b = 0; b < f.vars.size(); ++b) {
        try {
          next[f.id][b] =
              f2v_core(f, b, incoming, rank, &report.peak_component_width);
        } catch (const NumericalError& e) {
          throw NumericalError("bp iteration " + std::to_string(iter + 1) +
                               ": " + e.what());
        }
        require(next[f.id][b].dim() == vars_[f.vars[b]].dim,
                "run_bp: message dimension mismatch");
        ++report.message_count;
      }
    }
    msgs_ = std::move(next);
    report.seconds_messages += seconds_since(t0);

    // Belief refresh and convergence residual.
    const auto t1 = Clock::now();
    double residual = 0.0;
    for (auto& v : vars_) {
      const std::size_t bcap =
          opts.belief_width_cap > 0
              ? opts.belief_width_cap
              : (rank > 0 ? rank * std::max<std::size_t>(v.factors.size(), 1)
                          : 0);
      v.belief = compute_belief(v.id, bcap);
      report.peak_component_width =
          std::max(report.peak_component_width, v.belief.precision.width());
      try {
        const MomentsGaussian m = gaussian::to_moments(v.belief);
        residual = std::max(residual, relative_change(m.mean, v.belief_mean));
        v.belief_mean = m.mean;
      } catch (const NumericalError& e) {
        throw NumericalError("bp iteration " + std::to_string(iter + 1) +
                             ": belief for '" + v.name + "': " + e.what());
      }
    }
    report.seconds_beliefs += seconds_since(t1);
    report.residuals.push_back(residual);
    report.iterations = iter + 1;
    if (residual < opts.tol) {
      report.converged = true;
      break;
    }
  }

  if (opts.max_iters == 0) {
    for (auto& v : vars_) {
      v.belief = compute_belief(v.id, 0);
      v.belief_mean = gaussian::to_moments(v.belief).mean;
    }
  }
  return report;
}

nlohmann::json FactorGraph::structure_json() const {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& v : vars_) {
    nodes.push_back({{"id", v.id},
                     {"name", v.name},
                     {"dim", v.dim},
                     {"role", v.role == Role::Query     ? "query"
                              : v.role == Role::Latent ? "latent"
                                                       : "evidence"}});
  }
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : factors_) {
    nlohmann::json neighbors = nlohmann::json::array();
    for (int vid : f.vars) neighbors.push_back(vars_[vid].name);
    factors.push_back({{"id", f.id},
                       {"name", f.name},
                       {"neighbors", neighbors},
                       {"joint_dim", f.joint_dim},
                       {"potential_width", f.potential.precision.width()}});
  }
  return nlohmann::json{{"variables", nodes}, {"factors", factors}};
}

GenbpResult run_genbp(const Sem& sem, const std::map<std::string, Vec>& evidence,
                      const GenbpParams& params) {
  sem.validate();
  const Rng rng(params.seed);
  GenbpResult result;
  result.diagnostics["method"] = "genbp";
  result.diagnostics["outer"] = nlohmann::json::array();
  result.diagnostics["stopping"] =
      "outer loop stops on belief-mean stabilization below tol or the "
      "iteration budget; inner sweeps stop on the same tol";

  const std::size_t n = params.ensemble_size;
  const std::size_t rank =
      params.message_rank > 0 ? params.message_rank : n;

  // Ancestral draws; evidence-valued ancestors are clamped to the observed
  // value so descendants are simulated consistently with the conditioning.
  std::map<std::string, Mat> ancestors;
  std::vector<std::string> conform_targets;
  for (const auto& name : sem.ancestral_names()) {
    if (evidence.count(name)) {
      const Vec& value = evidence.at(name);
      Mat constant(value.size(), n);
      for (std::size_t c = 0; c < n; ++c) {
        std::memcpy(constant.col(c), value.data(),
                    value.size() * sizeof(double));
      }
      ancestors.emplace(name, std::move(constant));
    } else {
      conform_targets.push_back(name);
    }
  }

  auto t0 = Clock::now();
  std::map<std::string, Ensemble> ens =
      sem::simulate_from_ancestors(sem, ancestors, n, rng.split("sim").split(std::uint64_t{0}));
  result.seconds_simulate += seconds_since(t0);

  std::map<std::string, Vec> prev_means;
  int sweeps_used = 0;
  const FactorGraph prior_graph = FactorGraph::build(sem);

  for (int outer = 0; outer < params.outer_iters; ++outer) {
    try {
      FactorGraph graph = prior_graph;
      t0 = Clock::now();
      graph.init_factors_from_ensembles(ens, params.gamma2);
      FactorGraph conditioned =
          graph.conditioned(evidence, params.sigma2, params.gamma2);
      result.seconds_condition += seconds_since(t0);

      BpOptions opts;
      opts.max_iters = std::min(params.resim_every,
                                params.max_total_iters - sweeps_used);
      opts.tol = params.tol;
      opts.message_rank = rank;
      opts.uninformative_eps = params.uninformative_eps;
      t0 = Clock::now();
      BpReport rep = conditioned.run_bp(opts);
      result.seconds_bp += seconds_since(t0);
      sweeps_used += rep.iterations;
      result.total_sweeps = sweeps_used;
      result.peak_component_width =
          std::max(result.peak_component_width, rep.peak_component_width);
      if (rep.message_count > 0) {
        result.seconds_per_message =
            rep.seconds_messages / rep.message_count;
      }

      double outer_change = 0.0;
      t0 = Clock::now();
      for (const auto& name : conform_targets) {
        const int vid = conditioned.variable_id(name);
        const MomentsGaussian belief =
            gaussian::to_moments(conditioned.variable(vid).belief);
        const auto conf =
            ensemble::conform(ens.at(name), belief.mean, belief.cov,
                              params.eta2);
        ens.at(name) = conf.ensemble;
        ancestors[name] = conf.ensemble.samples;
        if (prev_means.count(name)) {
          outer_change = std::max(
              outer_change, relative_change(belief.mean, prev_means[name]));
        } else {
          outer_change = std::numeric_limits<double>::infinity();
        }
        prev_means[name] = belief.mean;
        result.query_beliefs.insert_or_assign(name, belief);
        result.query_ensembles.insert_or_assign(name, conf.ensemble);
      }
      result.seconds_conform += seconds_since(t0);
      result.outer_iterations = outer + 1;

      result.diagnostics["outer"].push_back(
          {{"inner_iterations", rep.iterations},
           {"inner_converged", rep.converged},
           {"residuals", rep.residuals},
           {"belief_mean_change", outer_change},
           {"peak_component_width", rep.peak_component_width}});

      if (outer_change < params.tol) {
        result.outer_converged = true;
        break;
      }
      if (sweeps_used >= params.max_total_iters) break;

      // Re-simulate the non-ancestral variables from the conformed ancestors.
      if (outer + 1 < params.outer_iters) {
        t0 = Clock::now();
        ens = sem::simulate_from_ancestors(
            sem, ancestors, n,
            rng.split("sim").split(static_cast<std::uint64_t>(outer + 1)));
        result.seconds_simulate += seconds_since(t0);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("genbp outer iteration " +
                           std::to_string(outer + 1) + ": " + e.what());
    }
  }

  result.diagnostics["outer_converged"] = result.outer_converged;
  result.diagnostics["total_sweeps"] = result.total_sweeps;
  result.diagnostics["peak_component_width"] = result.peak_component_width;
  result.diagnostics["timings"] = {
      {"simulate_s", result.seconds_simulate},
      {"condition_s", result.seconds_condition},
      {"bp_s", result.seconds_bp},
      {"conform_s", result.seconds_conform},
      {"per_message_s", result.seconds_per_message}};
  return result;
}

}  // namespace genbp
