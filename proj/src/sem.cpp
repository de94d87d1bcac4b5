#include "genbp/sem.hpp"

#include <algorithm>
#include <set>

namespace genbp {

Sem& Sem::add_variable(std::string name, std::size_t dim, Role role) {
  require(dim >= 1, "Sem: variable dimension must be >= 1");
  require(!has_variable(name), "Sem: duplicate variable name");
  vars_.push_back(Variable{std::move(name), dim, role});
  return *this;
}

Sem& Sem::add_ancestral(std::string output, std::function<Vec(Rng&)> sampler,
                        std::optional<std::pair<Vec, Mat>> prior_moments,
                        std::string name) {
  Process p;
  p.output = std::move(output);
  p.sampler = std::move(sampler);
  p.prior_moments = std::move(prior_moments);
  p.name = name.empty() ? "prior_" + p.output : std::move(name);
  procs_.push_back(std::move(p));
  return *this;
}

Sem& Sem::add_process(std::vector<std::string> inputs, std::string output,
                      std::function<Vec(const Vec&)> mean_fn, Vec noise_sd,
                      std::string name) {
  Process p;
  p.inputs = std::move(inputs);
  p.output = std::move(output);
  p.mean_fn = std::move(mean_fn);
  p.noise_sd = std::move(noise_sd);
  p.name = name.empty() ? "proc_" + p.output : std::move(name);
  procs_.push_back(std::move(p));
  return *this;
}

Sem& Sem::add_process(std::vector<std::string> inputs, std::string output,
                      std::function<Vec(const Vec&)> mean_fn, double noise_sd,
                      std::string name) {
  const std::size_t dim = variable(output).dim;
  return add_process(std::move(inputs), std::move(output), std::move(mean_fn),
                     Vec(dim, noise_sd), std::move(name));
}

const Variable& Sem::variable(const std::string& name) const {
  for (const auto& v : vars_) {
    if (v.name == name) return v;
  }
  throw std::invalid_argument("Sem: unknown variable '" + name + "'");
}

bool Sem::has_variable(const std::string& name) const {
  return std::any_of(vars_.begin(), vars_.end(),
                     [&](const Variable& v) { return v.name == name; });
}

void Sem::validate() const {
  std::set<std::string> produced;
  for (const auto& p : procs_) {
    require(has_variable(p.output), "Sem: process output undeclared");
    require(!produced.count(p.output),
            "Sem: variable produced by more than one process");
    for (const auto& in : p.inputs) {
      require(in != p.output, "Sem: self-loop (output feeds its own process)");
      require(has_variable(in), "Sem: process input undeclared");
      require(produced.count(in) > 0,
              "Sem: process input not produced by an earlier process");
    }
    if (p.ancestral()) {
      require(static_cast<bool>(p.sampler), "Sem: ancestral process needs a sampler");
    } else {
      require(static_cast<bool>(p.mean_fn), "Sem: derived process needs a mean function");
      if (!p.noise_sd.empty()) {
        require(p.noise_sd.size() == variable(p.output).dim,
                "Sem: noise sd length must match output dimension");
      }
    }
    produced.insert(p.output);
  }
  for (const auto& v : vars_) {
    require(produced.count(v.name) > 0,
            "Sem: variable not produced by any process");
  }
}

std::vector<std::string> Sem::ancestral_names() const {
  std::vector<std::string> out;
  for (const auto& p : procs_) {
    if (p.ancestral()) out.push_back(p.output);
  }
  return out;
}

std::vector<std::string> Sem::query_names() const {
  std::vector<std::string> out;
  for (const auto& v : vars_) {
    if (v.role == Role::Query) out.push_back(v.name);
  }
  return out;
}

namespace sem {

namespace {

Vec stack_inputs(const Sem& model, const Process& p,
                 const std::map<std::string, Mat>& values, std::size_t col) {
  std::size_t total = 0;
  for (const auto& in : p.inputs) total += model.variable(in).dim;
  Vec stacked(total);
  std::size_t off = 0;
  for (const auto& in : p.inputs) {
    const Mat& m = values.at(in);
    const std::size_t dim = model.variable(in).dim;
    std::copy(m.col(col), m.col(col) + dim, stacked.begin() + off);
    off += dim;
  }
  return stacked;
}

std::map<std::string, Ensemble> run_forward(
    const Sem& model, std::size_t n, const Rng& rng,
    const std::map<std::string, Mat>* fixed_ancestors) {
  model.validate();
  require(n >= 2, "sem: ensemble size must be >= 2");
  std::map<std::string, Mat> values;
  std::size_t proc_index = 0;
  for (const auto& p : model.processes()) {
    const std::size_t dim = model.variable(p.output).dim;
    Mat out(dim, n);
    if (p.ancestral() && fixed_ancestors != nullptr &&
        fixed_ancestors->count(p.output)) {
      const Mat& fixed = fixed_ancestors->at(p.output);
      require(fixed.rows() == dim && fixed.cols() == n,
              "sem: fixed ancestor has wrong shape");
      out = fixed;
    } else {
      const Rng proc_rng = rng.split("process").split(proc_index);
      for (std::size_t c = 0; c < n; ++c) {
        Rng col_rng = proc_rng.split(c);
        Vec v;
        if (p.ancestral()) {
          v = p.sampler(col_rng);
        } else {
          v = p.mean_fn(stack_inputs(model, p, values, c));
          if (!p.noise_sd.empty()) {
            for (std::size_t i = 0; i < v.size(); ++i) {
              v[i] += p.noise_sd[i] * col_rng.normal();
            }
          }
        }
        if (v.size() != dim) {
          throw std::invalid_argument(
              "sem: process '" + p.name +
              "' output dimension does not match declared variable dimension");
        }
        std::copy(v.begin(), v.end(), out.col(c));
      }
    }
    values.emplace(p.output, std::move(out));
    ++proc_index;
  }
  std::map<std::string, Ensemble> ens;
  for (auto& [name, m] : values) ens.emplace(name, Ensemble(std::move(m)));
  return ens;
}

}  // namespace

std::map<std::string, Ensemble> ancestral_sample(const Sem& model,
                                                 std::size_t n,
                                                 const Rng& rng) {
  return run_forward(model, n, rng, nullptr);
}

std::map<std::string, Ensemble> simulate_from_ancestors(
    const Sem& model, const std::map<std::string, Mat>& ancestors,
    std::size_t n, const Rng& rng) {
  return run_forward(model, n, rng, &ancestors);
}

std::map<std::string, Vec> sample_one(const Sem& model, const Rng& rng) {
  model.validate();
  std::map<std::string, Mat> values;
  std::size_t proc_index = 0;
  std::map<std::string, Vec> out;
  for (const auto& p : model.processes()) {
    const std::size_t dim = model.variable(p.output).dim;
    Rng col_rng = rng.split("process").split(proc_index).split(std::uint64_t{0});
    Vec v;
    if (p.ancestral()) {
      v = p.sampler(col_rng);
    } else {
      v = p.mean_fn(stack_inputs(model, p, values, 0));
      if (!p.noise_sd.empty()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          v[i] += p.noise_sd[i] * col_rng.normal();
        }
      }
    }
    if (v.size() != dim) {
      throw std::invalid_argument(
          "sem: process '" + p.name +
          "' output dimension does not match declared variable dimension");
    }
    Mat m(dim, 1);
    std::copy(v.begin(), v.end(), m.col(0));
    values.emplace(p.output, std::move(m));
    out.emplace(p.output, std::move(v));
    ++proc_index;
  }
  return out;
}

}  // namespace sem
}  // namespace genbp
