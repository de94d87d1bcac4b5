#include "genbp/benchmarks.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include "genbp/gaussian.hpp"

namespace genbp::bench {

namespace {
using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}
}  // namespace

void TransportConfig::validate() const {
  require(d >= 2, "transport: d must be >= 2");
  require(t_steps >= 1, "transport: need at least one timestep");
  require(downsample >= 1 && d % downsample == 0,
          "transport: d must be divisible by the downsampling factor");
  require(kernel.size() % 2 == 1, "transport: kernel length must be odd");
  double s = 0.0;
  for (double w : kernel) s += w;
  require(std::fabs(s - 1.0) < 1e-12, "transport: kernel weights must sum to 1");
  require(gamma_decay >= 0.0 && gamma_decay <= 1.0,
          "transport: decay must be in [0, 1]");
  require(tau2 > 0.0 && sigma_obs2 > 0.0, "transport: noise variances must be positive");
}

Vec q_prior_shape(std::size_t d, double scale, double mu, double kappa) {
  Vec q(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                             static_cast<double>(d) -
                         mu;
    q[k] = scale * std::exp(kappa * std::cos(angle));
  }
  return q;
}

Vec sample_q_prior(std::size_t d, double scale, double smoothness, Rng& rng) {
  const double mu = 2.0 * std::numbers::pi * rng.uniform();
  const double df = smoothness / std::sqrt(static_cast<double>(d));
  const double kappa = rng.chi_squared(df);
  return q_prior_shape(d, scale, mu, kappa);
}

Vec circular_convolve(const Vec& z, const Vec& kernel) {
  const std::size_t d = z.size();
  const std::size_t klen = kernel.size();
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(klen / 2);
  Vec out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t t = 0; t < klen; ++t) {
      const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(t) - half;
      std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - offset;
      src %= static_cast<std::ptrdiff_t>(d);
      if (src < 0) src += static_cast<std::ptrdiff_t>(d);
      acc += kernel[t] * z[static_cast<std::size_t>(src)];
    }
    out[i] = acc;
  }
  return out;
}

Vec circular_shift(const Vec& z, int k) {
  const std::ptrdiff_t d = static_cast<std::ptrdiff_t>(z.size());
  Vec out(z.size());
  for (std::ptrdiff_t i = 0; i < d; ++i) {
    std::ptrdiff_t src = (i - k) % d;
    if (src < 0) src += d;
    out[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(src)];
  }
  return out;
}

Vec transport_step_mean(const Vec& x, const Vec& q, const TransportConfig& c) {
  require(x.size() == c.d && q.size() == c.d, "transport_step: dimension mismatch");
  Vec z(c.d);
  for (std::size_t i = 0; i < c.d; ++i) {
    z[i] = c.gamma_decay * x[i] + (1.0 - c.gamma_decay) * q[i];
  }
  return circular_shift(circular_convolve(z, c.kernel), c.shift);
}

Vec observe_mean(const Vec& x, const TransportConfig& c) {
  Vec y(x.size() / c.downsample);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i * c.downsample];
  return y;
}

Sem build_transport_sem(const TransportConfig& c) {
  c.validate();
  Sem sem;
  const std::size_t dy = c.d / c.downsample;
  sem.add_variable("q", c.d, Role::Query);
  sem.add_variable("x0", c.d, Role::Evidence);
  for (std::size_t t = 1; t <= c.t_steps; ++t) {
    sem.add_variable("x" + std::to_string(t), c.d, Role::Latent);
    sem.add_variable("y" + std::to_string(t), dy, Role::Evidence);
  }

  const double scale = c.prior_scale;
  const double smooth = c.prior_smoothness;
  const std::size_t d = c.d;
  sem.add_ancestral("q", [d, scale, smooth](Rng& rng) {
    return sample_q_prior(d, scale, smooth, rng);
  });
  sem.add_ancestral("x0", [d, scale, smooth](Rng& rng) {
    return sample_q_prior(d, scale, smooth, rng);
  });

  const TransportConfig cfg = c;
  for (std::size_t t = 1; t <= c.t_steps; ++t) {
    const std::string xin = "x" + std::to_string(t - 1);
    const std::string xout = "x" + std::to_string(t);
    sem.add_process(
        {"q", xin}, xout,
        [cfg](const Vec& stacked) {
          const Vec q(stacked.begin(), stacked.begin() + cfg.d);
          const Vec x(stacked.begin() + cfg.d, stacked.end());
          return transport_step_mean(x, q, cfg);
        },
        std::sqrt(c.tau2), "f_" + xout);
    sem.add_process(
        {xout}, "y" + std::to_string(t),
        [cfg](const Vec& x) { return observe_mean(x, cfg); },
        std::sqrt(c.sigma_obs2), "g_y" + std::to_string(t));
  }
  sem.validate();
  return sem;
}

Sem build_sysid_toy_sem(const SysidToyConfig& c) {
  Sem sem;
  const std::size_t d = c.d;
  sem.add_variable("q", d, Role::Query);
  sem.add_variable("x0", d, Role::Evidence);
  for (std::size_t t = 1; t <= c.t_steps; ++t) {
    sem.add_variable("x" + std::to_string(t), d, Role::Latent);
    sem.add_variable("y" + std::to_string(t), d, Role::Evidence);
  }

  auto gaussian_prior = [d](double var) {
    Mat cov(d, d);
    for (std::size_t i = 0; i < d; ++i) cov(i, i) = var;
    return std::make_pair(Vec(d, 0.0), cov);
  };
  const double q_sd = std::sqrt(c.q_prior_var);
  const double x0_sd = std::sqrt(c.x0_prior_var);
  sem.add_ancestral(
      "q", [d, q_sd](Rng& rng) { return rng.normal_vec(d, q_sd); },
      gaussian_prior(c.q_prior_var));
  sem.add_ancestral(
      "x0", [d, x0_sd](Rng& rng) { return rng.normal_vec(d, x0_sd); },
      gaussian_prior(c.x0_prior_var));

  // x_t = A x_{t-1} + 0.5 q, with A a fixed contraction mixing neighbors.
  auto step = [d](const Vec& stacked) {
    const Vec q(stacked.begin(), stacked.begin() + d);
    const Vec x(stacked.begin() + d, stacked.end());
    Vec out(d);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = 0.8 * x[i] + 0.1 * x[(i + 1) % d] + 0.5 * q[i];
    }
    return out;
  };
  for (std::size_t t = 1; t <= c.t_steps; ++t) {
    sem.add_process({"q", "x" + std::to_string(t - 1)}, "x" + std::to_string(t),
                    step, std::sqrt(c.tau2), "f_x" + std::to_string(t));
    sem.add_process({"x" + std::to_string(t)}, "y" + std::to_string(t),
                    [](const Vec& x) { return x; }, std::sqrt(c.sigma_obs2),
                    "g_y" + std::to_string(t));
  }
  sem.validate();
  return sem;
}

Truth simulate_truth(const Sem& sem, std::uint64_t seed) {
  Truth truth;
  truth.values = sem::sample_one(sem, Rng(seed).split("truth"));
  truth.q0 = truth.values.at("q");
  for (const auto& v : sem.variables()) {
    if (v.role == Role::Evidence) {
      truth.evidence[v.name] = truth.values.at(v.name);
    }
  }
  return truth;
}

double dense_log_density(const Vec& mean, const Mat& cov, const Vec& x) {
  const Eigen::Index n = static_cast<Eigen::Index>(mean.size());
  Eigen::Map<const Eigen::MatrixXd> k(cov.data(), n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("dense_log_density: covariance not positive definite");
  }
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = x[i] - mean[i];
  const Eigen::VectorXd s = llt.solve(r);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  }
  return -0.5 * (r.dot(s) + static_cast<double>(n) * std::log(2.0 * std::numbers::pi) +
                 logdet);
}

MetricsRow evaluate(const std::string& problem, const std::string& method,
                    const Vec& posterior_mean, const MomentsGaussian* belief,
                    const Vec& q_truth, const Mat* posterior_samples,
                    const Mat* reference_samples) {
  MetricsRow row;
  row.problem = problem;
  row.method = method;
  row.d_query = q_truth.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < q_truth.size(); ++i) {
    const double r = posterior_mean[i] - q_truth[i];
    acc += r * r;
  }
  row.mse = acc / static_cast<double>(q_truth.size());
  if (belief != nullptr) {
    try {
      row.log_lik = gaussian::log_density(*belief, q_truth);
      row.log_lik_defined = true;
    } catch (const NumericalError&) {
      row.log_lik_defined = false;
    }
  }
  if (posterior_samples != nullptr && reference_samples != nullptr) {
    row.mmd = gaussian::mmd_poly2(*posterior_samples, *reference_samples);
    row.mmd_defined = true;
  }
  return row;
}

namespace {

GenbpParams to_genbp_params(const Hyper& h, std::uint64_t seed) {
  GenbpParams p;
  p.ensemble_size = h.ensemble_size;
  p.gamma2 = h.gamma2;
  p.sigma2 = h.sigma2;
  p.eta2 = h.eta2;
  p.tol = h.tol;
  p.outer_iters = h.outer_iters;
  p.resim_every = h.resim_every;
  p.max_total_iters = h.max_total_iters;
  p.seed = Rng(seed).split("genbp").base_seed();
  return p;
}

gabp::GabpParams to_gabp_params(const Hyper& h, std::uint64_t seed) {
  gabp::GabpParams p;
  p.gamma2 = h.gamma2;
  p.max_iters = h.max_total_iters;
  p.relin_every = h.relin_every;
  p.tol = h.tol;
  p.prior_moment_samples = h.prior_moment_samples;
  p.seed = Rng(seed).split("gabp").base_seed();
  return p;
}

MetricsRow run_cell(const Sem& sem, const std::string& problem,
                    const std::string& method, std::uint64_t seed,
                    const Hyper& hyper, std::size_t d_query,
                    std::size_t t_steps) {
  MetricsRow row;
  const auto t0 = Clock::now();
  const Truth truth = simulate_truth(sem, seed);
  try {
    if (method == "genbp") {
      const GenbpResult res =
          run_genbp(sem, truth.evidence, to_genbp_params(hyper, seed));
      const MomentsGaussian& belief = res.query_beliefs.at("q");
      row = evaluate(problem, method, belief.mean, &belief, truth.q0,
                     nullptr, nullptr);
      row.iterations = res.total_sweeps;
      row.peak_component_width = res.peak_component_width;
      row.wall_sim_s = res.seconds_simulate;
      row.wall_infer_s = res.seconds_bp + res.seconds_condition;
      row.wall_conform_s = res.seconds_conform;
    } else if (method == "gabp") {
      const gabp::GabpResult res =
          run_gabp(sem, truth.evidence, to_gabp_params(hyper, seed));
      if (res.failed) {
        row.problem = problem;
        row.method = method;
        row.d_query = truth.q0.size();
        row.failed = true;
        row.failure = res.failure;
        row.iterations = res.iterations;
      } else {
        const gabp::GabpBelief& belief = res.query_beliefs.at("q");
        row = evaluate(problem, method, belief.mean, nullptr, truth.q0,
                       nullptr, nullptr);
        if (belief.cov_positive_definite) {
          try {
            row.log_lik = dense_log_density(belief.mean, belief.cov, truth.q0);
            row.log_lik_defined = true;
          } catch (const NumericalError&) {
            row.log_lik_defined = false;
          }
        }
        row.iterations = res.iterations;
      }
    } else {
      throw ConfigError("unknown method '" + method + "'");
    }
  } catch (const NumericalError& e) {
    row.problem = problem;
    row.method = method;
    row.d_query = truth.q0.size();
    row.failed = true;
    row.failure = e.what();
  }
  row.problem = problem;
  row.method = method;
  row.t_steps = t_steps;
  row.d_query = d_query;
  row.n_ensemble = method == "genbp" ? hyper.ensemble_size : 0;
  row.seed = seed;
  row.wall_total_s = seconds_since(t0);
  return row;
}

}  // namespace

MetricsRow run_transport_cell(const TransportConfig& cfg,
                              const std::string& method, std::uint64_t seed,
                              const Hyper& hyper) {
  const Sem sem = build_transport_sem(cfg);
  return run_cell(sem, "transport", method, seed, hyper, cfg.d, cfg.t_steps);
}

MetricsRow run_sysid_toy_cell(const SysidToyConfig& cfg,
                              const std::string& method, std::uint64_t seed,
                              const Hyper& hyper) {
  const Sem sem = build_sysid_toy_sem(cfg);
  return run_cell(sem, "sysid-toy", method, seed, hyper, cfg.d, cfg.t_steps);
}

std::vector<MetricsRow> sweep(const SweepSpec& spec, int jobs) {
  struct Cell {
    std::size_t d;
    std::size_t n;
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t d : spec.dims) {
    for (std::size_t n : spec.ensemble_sizes) {
      for (const auto& method : spec.methods) {
        for (std::uint64_t seed : spec.seeds) {
          cells.push_back({d, n, method, seed});
        }
      }
    }
  }
  std::vector<MetricsRow> rows(cells.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= cells.size()) break;
      const Cell& c = cells[i];
      TransportConfig cfg = spec.base;
      cfg.d = c.d;
      Hyper hyper = spec.hyper;
      hyper.ensemble_size = c.n;
      rows[i] = run_transport_cell(cfg, c.method, c.seed, hyper);
    }
  };
  const int workers = std::max(1, jobs);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

std::string metrics_csv_header(bool timings) {
  std::string h =
      "problem,method,d_query,t_steps,n_ensemble,seed,status,mse,log_lik,mmd,"
      "iterations,peak_component_width";
  if (timings) h += ",wall_total_s,wall_sim_s,wall_infer_s,wall_conform_s";
  return h;
}

std::string metrics_csv_row(const MetricsRow& row, bool timings) {
  std::ostringstream os;
  os.precision(17);
  os << row.problem << "," << row.method << "," << row.d_query << ","
     << row.t_steps << "," << row.n_ensemble << "," << row.seed << ","
     << (row.failed ? "failed" : "ok") << ",";
  if (!row.failed) os << row.mse;
  os << ",";
  if (row.log_lik_defined) os << row.log_lik;
  os << ",";
  if (row.mmd_defined) os << row.mmd;
  os << "," << row.iterations << "," << row.peak_component_width;
  if (timings) {
    os << "," << row.wall_total_s << "," << row.wall_sim_s << ","
       << row.wall_infer_s << "," << row.wall_conform_s;
  }
  return os.str();
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows,
                       bool timings) {
  os << metrics_csv_header(timings) << "\n";
  for (const auto& row : rows) os << metrics_csv_row(row, timings) << "\n";
}

}  // namespace genbp::bench
