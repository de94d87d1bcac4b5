#include <CLI11.hpp>
#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/LU>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "genbp/benchmarks.hpp"
#include "genbp/ensemble.hpp"
#include "genbp/factor_graph.hpp"
#include "genbp/kernels.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace genbp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitInternal = 3;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return j;
}

bench::TransportConfig parse_transport(const json& j) {
  bench::TransportConfig cfg;
  if (j.contains("transport")) {
    const json& t = j.at("transport");
    cfg.gamma_decay = t.value("gamma_decay", cfg.gamma_decay);
    if (t.contains("kernel")) cfg.kernel = t.at("kernel").get<Vec>();
    cfg.shift = t.value("shift", cfg.shift);
    cfg.downsample = t.value("downsample", cfg.downsample);
    cfg.tau2 = t.value("tau2", cfg.tau2);
    cfg.sigma_obs2 = t.value("sigma_obs2", cfg.sigma_obs2);
    cfg.prior_scale = t.value("prior_scale", cfg.prior_scale);
    cfg.prior_smoothness = t.value("prior_smoothness", cfg.prior_smoothness);
  }
  cfg.d = j.value("d", cfg.d);
  cfg.t_steps = j.value("T", cfg.t_steps);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

bench::Hyper parse_hyper(const json& j, std::size_t n) {
  bench::Hyper h;
  h.ensemble_size = n;
  if (j.contains("hyper")) {
    const json& o = j.at("hyper");
    h.gamma2 = o.value("gamma2", h.gamma2);
    h.sigma2 = o.value("sigma2", h.sigma2);
    h.eta2 = o.value("eta2", h.eta2);
    h.tol = o.value("tol", h.tol);
    h.max_total_iters = o.value("max_iters", h.max_total_iters);
    h.outer_iters = o.value("outer_iters", h.outer_iters);
    h.resim_every = o.value("resim_every", h.resim_every);
    h.relin_every = o.value("relin_every", h.relin_every);
    h.prior_moment_samples =
        o.value("prior_moment_samples", h.prior_moment_samples);
  }
  if (!(h.gamma2 > 0.0 && h.sigma2 > 0.0 && h.eta2 > 0.0)) {
    throw ConfigError("hyper: nugget variances must be positive");
  }
  if (h.max_total_iters < 0 || h.outer_iters < 1 || h.resim_every < 1) {
    throw ConfigError("hyper: iteration counts out of range");
  }
  return h;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_run(const std::string& config_path, std::int64_t seed_override,
            const std::string& out_dir, const std::string& format,
            bool timings) {
  const json cfg = load_json(config_path);
  const std::string problem = cfg.value("problem", std::string("transport"));
  const std::string method = cfg.value("method", std::string("genbp"));
  if (method != "genbp" && method != "gabp") {
    throw ConfigError("method must be 'genbp' or 'gabp'");
  }
  const std::uint64_t seed = seed_override >= 0
                                 ? static_cast<std::uint64_t>(seed_override)
                                 : cfg.value("seed", std::uint64_t{1});
  const std::size_t n = cfg.value("N", std::size_t{64});
  const bench::Hyper hyper = parse_hyper(cfg, n);

  bench::MetricsRow row;
  if (problem == "transport") {
    row = bench::run_transport_cell(parse_transport(cfg), method, seed, hyper);
  } else if (problem == "sysid-toy") {
    bench::SysidToyConfig toy;
    toy.d = cfg.value("d", toy.d);
    toy.t_steps = cfg.value("T", toy.t_steps);
    row = bench::run_sysid_toy_cell(toy, method, seed, hyper);
  } else {
    throw ConfigError("problem must be 'transport' or 'sysid-toy'");
  }

  std::ostringstream csv;
  bench::write_metrics_csv(csv, {row}, timings);
  json diag = {{"config", cfg},
               {"seed", seed},
               {"status", row.failed ? "failed" : "ok"}};
  if (row.failed) diag["failure"] = row.failure;

  if (format == "csv") {
    std::cout << csv.str();
  } else {
    json out = {{"problem", row.problem},   {"method", row.method},
                {"d_query", row.d_query},   {"seed", row.seed},
                {"status", row.failed ? "failed" : "ok"}};
    if (!row.failed) out["mse"] = row.mse;
    if (row.log_lik_defined) out["log_lik"] = row.log_lik;
    std::cout << out.dump(2) << "\n";
  }
  if (!out_dir.empty()) {
    write_file(fs::path(out_dir) / "run.csv", csv.str());
    write_file(fs::path(out_dir) / "run_diagnostics.json", diag.dump(2) + "\n");
  }
  return row.failed ? kExitNumerical : kExitOk;
}

int cmd_sweep(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_dir, bool timings, int jobs) {
  const json cfg = load_json(config_path);
  bench::SweepSpec spec;
  spec.base = parse_transport(cfg);
  spec.hyper = parse_hyper(cfg, 64);
  if (cfg.contains("dims")) spec.dims = cfg.at("dims").get<std::vector<std::size_t>>();
  if (cfg.contains("ensemble_sizes")) {
    spec.ensemble_sizes = cfg.at("ensemble_sizes").get<std::vector<std::size_t>>();
  }
  if (cfg.contains("methods")) {
    spec.methods = cfg.at("methods").get<std::vector<std::string>>();
  }
  for (const auto& m : spec.methods) {
    if (m != "genbp" && m != "gabp") throw ConfigError("unknown method '" + m + "'");
  }
  if (cfg.contains("seeds")) {
    spec.seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  } else {
    const std::uint64_t base = seed_override >= 0
                                   ? static_cast<std::uint64_t>(seed_override)
                                   : cfg.value("seed_base", std::uint64_t{1});
    const std::size_t count = cfg.value("num_seeds", std::size_t{5});
    spec.seeds.clear();
    for (std::size_t i = 0; i < count; ++i) spec.seeds.push_back(base + i);
  }

  const auto rows = bench::sweep(spec, jobs);
  std::ostringstream csv;
  bench::write_metrics_csv(csv, rows, timings);
  std::cout << csv.str();
  if (!out_dir.empty()) {
    write_file(fs::path(out_dir) / "sweep.csv", csv.str());
  }
  return kExitOk;
}

// Oracle-equivalence smoke checks runnable in the field; the full randomized
// suites live in the test binaries.
int cmd_selftest() {
  struct Check {
    std::string name;
    bool pass;
    std::string detail;
  };
  std::vector<Check> checks;
  Rng rng(20240815);

  // densified DLR inverses against Eigen dense inverses
  {
    double worst = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      Rng r = rng.split("dlr").split(static_cast<std::uint64_t>(rep));
      const std::size_t d = 2 + static_cast<std::size_t>(r.uniform() * 6);
      const std::size_t w = static_cast<std::size_t>(r.uniform() * 5);
      Vec v(d);
      for (auto& x : v) x = 0.3 + r.uniform();
      Mat comp(d, w);
      r.fill_normal(comp.data(), comp.size(), 0.7);
      const DlrMatrix k(v, comp, 1);
      const DlrMatrix kinv = dlr::invert(k);
      const Mat lhs = dlr::densify(kinv);
      const Mat dense = dlr::densify(k);
      Eigen::Map<const Eigen::MatrixXd> dm(dense.data(), d, d);
      const Eigen::MatrixXd want = dm.inverse();
      double err = 0.0, scale = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < d; ++i) {
          err += std::pow(lhs(i, j) - want(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(j)),
                          2.0);
          scale += std::pow(want(static_cast<Eigen::Index>(i),
                                 static_cast<Eigen::Index>(j)),
                            2.0);
        }
      }
      worst = std::max(worst, std::sqrt(err / scale));
    }
    checks.push_back({"dlr_invert_vs_dense", worst < 1e-9,
                      "max rel frobenius " + std::to_string(worst)});
  }

  // conformation gradient against central finite differences
  {
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      Rng r = rng.split("grad").split(static_cast<std::uint64_t>(rep));
      const std::size_t d = 4, n = 3, m = 2;
      Mat x(d, n);
      r.fill_normal(x.data(), x.size());
      const Mat dev = ensemble::deviations(x);
      Vec v(d);
      for (auto& e : v) e = 0.5 + r.uniform();
      Mat comp(d, m);
      r.fill_normal(comp.data(), comp.size());
      const DlrMatrix target(v, comp, 1);
      Mat g(n, n);
      for (std::size_t i = 0; i < n; ++i) g(i, i) = 1.0 + r.uniform();
      const Mat grad = ensemble::conform_loss_grad(g, dev, target, 0.1);
      const double h = 1e-6;
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
          Mat gp = g, gm = g;
          gp(i, j) += h;
          gm(i, j) -= h;
          const double fd = (ensemble::conform_loss(gp, dev, target, 0.1) -
                             ensemble::conform_loss(gm, dev, target, 0.1)) /
                            (2.0 * h);
          const double denom = std::max(1.0, std::fabs(fd));
          worst = std::max(worst, std::fabs(fd - grad(i, j)) / denom);
        }
      }
    }
    checks.push_back({"conform_grad_vs_fd", worst < 1e-5,
                      "max rel err " + std::to_string(worst)});
  }

  // pathwise conditioning against the closed-form Gaussian conditional
  {
    Rng r = rng.split("matheron");
    const std::size_t n = 1 << 13;
    Mat joint(2, n);
    for (std::size_t c = 0; c < n; ++c) {
      const double a = r.normal();
      const double b = r.normal();
      joint(0, c) = 1.0 + a;
      joint(1, c) = -0.5 + 0.8 * a + 0.6 * b;
    }
    const double y_star = 0.3;
    const Ensemble cond = ensemble::matheron_condition(
        Ensemble(joint), 0, 1, Vec{y_star}, NuggetSpec(1e-6));
    const Vec m = ensemble::mean(cond.samples);
    // closed form for this pair: cov = 0.8, var_k = 1, prior means (1, -0.5)
    const double want = -0.5 + 0.8 * (y_star - 1.0);
    const double se = 0.8 / std::sqrt(static_cast<double>(n));
    const bool pass = std::fabs(m[0] - want) < 5.0 * se + 0.02;
    checks.push_back({"matheron_vs_closed_form", pass,
                      "mean " + std::to_string(m[0]) + " want " +
                          std::to_string(want)});
  }

  bool all = true;
  std::cout << "kernels backend: " << kernels::active().name << " (available: "
            << kernels::available_backends() << ")\n";
  for (const auto& c : checks) {
    all = all && c.pass;
    std::cout << (c.pass ? "PASS" : "FAIL") << "  " << c.name << "  ("
              << c.detail << ")\n";
  }
  return all ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DLR Gaussian ensemble belief propagation benchmark harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string format = "csv";
  std::int64_t seed_override = -1;
  bool timings = false;
  int jobs = 1;

  CLI::App* run = app.add_subcommand("run", "single inference run from a config");
  run->add_option("--config", config_path, "JSON config path")->required();
  run->add_option("--seed", seed_override, "override the config seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  run->add_flag("--timings", timings, "include wall-time columns");

  CLI::App* sweep = app.add_subcommand("sweep", "full-factorial sweep from a config");
  sweep->add_option("--config", config_path, "JSON config path")->required();
  sweep->add_option("--seed", seed_override, "override the seed base");
  sweep->add_option("--out", out_dir, "output directory");
  sweep->add_flag("--timings", timings, "include wall-time columns");
  sweep->add_option("--jobs", jobs, "parallel cells")->check(CLI::PositiveNumber);

  CLI::App* selftest =
      app.add_subcommand("selftest", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) {
      return cmd_run(config_path, seed_override, out_dir, format, timings);
    }
    if (sweep->parsed()) {
      return cmd_sweep(config_path, seed_override, out_dir, timings, jobs);
    }
    if (selftest->parsed()) {
      return cmd_selftest();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
