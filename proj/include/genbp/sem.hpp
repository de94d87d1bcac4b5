#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genbp/ensemble.hpp"
#include "genbp/rng.hpp"

// Structural equation models: an ordered list of black-box generative
// processes over named variables.  Ordering must be generative (inputs appear
// before use), which makes the induced graph a DAG by construction.

namespace genbp {

enum class Role { Query, Latent, Evidence };

struct Variable {
  std::string name;
  std::size_t dim = 0;
  Role role = Role::Latent;
};

struct Process {
  std::string name;
  std::vector<std::string> inputs;  // empty for ancestral processes
  std::string output;

  // Derived processes: deterministic map from stacked inputs to the output
  // mean; additive Gaussian noise with per-coordinate sd (empty = noiseless).
  std::function<Vec(const Vec&)> mean_fn;
  Vec noise_sd;

  // Ancestral processes: direct sampler, plus optional analytic moments for
  // density-based baselines.
  std::function<Vec(Rng&)> sampler;
  std::optional<std::pair<Vec, Mat>> prior_moments;

  bool ancestral() const { return inputs.empty(); }
};

class Sem {
 public:
  Sem& add_variable(std::string name, std::size_t dim, Role role);

  Sem& add_ancestral(std::string output, std::function<Vec(Rng&)> sampler,
                     std::optional<std::pair<Vec, Mat>> prior_moments =
                         std::nullopt,
                     std::string name = "");

  Sem& add_process(std::vector<std::string> inputs, std::string output,
                   std::function<Vec(const Vec&)> mean_fn, Vec noise_sd = {},
                   std::string name = "");
  Sem& add_process(std::vector<std::string> inputs, std::string output,
                   std::function<Vec(const Vec&)> mean_fn, double noise_sd,
                   std::string name = "");

  // Checks the structural rules: unique names, no self-loops, every variable
  // produced by exactly one process, inputs produced before use.
  void validate() const;

  const std::vector<Variable>& variables() const { return vars_; }
  const std::vector<Process>& processes() const { return procs_; }
  const Variable& variable(const std::string& name) const;
  bool has_variable(const std::string& name) const;

  // Outputs of input-less processes.
  std::vector<std::string> ancestral_names() const;
  std::vector<std::string> query_names() const;

 private:
  std::vector<Variable> vars_;
  std::vector<Process> procs_;
};

namespace sem {

// Draw N joint samples by pushing ancestral draws through the processes in
// order.  Column c of every variable is one joint draw; the random stream is
// derived per (process, column), so results are independent of evaluation
// order.
std::map<std::string, Ensemble> ancestral_sample(const Sem& model,
                                                 std::size_t n,
                                                 const Rng& rng);

// Same forward pass, but with the ancestral columns supplied by the caller
// (e.g. conformed ensembles, or evidence clamped to constant columns).
std::map<std::string, Ensemble> simulate_from_ancestors(
    const Sem& model, const std::map<std::string, Mat>& ancestors,
    std::size_t n, const Rng& rng);

// Single joint draw; returns every variable's realized value.
std::map<std::string, Vec> sample_one(const Sem& model, const Rng& rng);

}  // namespace sem
}  // namespace genbp
