#pragma once

#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "genbp/ensemble.hpp"
#include "genbp/gaussian.hpp"
#include "genbp/sem.hpp"

// Bipartite factor graph with canonical-form DLR potentials, synchronous
// loopy belief propagation, evidence conditioning, and the full
// ensemble-driven outer loop (run_genbp).

namespace genbp {

struct VariableNode {
  int id = -1;
  std::string name;
  std::size_t dim = 0;
  Role role = Role::Latent;
  std::vector<int> factors;  // neighbor factor ids, ascending
  CanonicalGaussian belief;
  Vec belief_mean;
};

struct FactorNode {
  int id = -1;
  std::string name;
  std::vector<int> vars;             // neighbor variable ids, block order
  std::vector<std::size_t> offsets;  // block offsets into the stacked joint
  std::size_t joint_dim = 0;
  CanonicalGaussian potential;       // over the stacked neighbors
  std::optional<Ensemble> joint_ensemble;

  std::size_t block_of(int var_id) const;
};

struct BpOptions {
  int max_iters = 150;
  double tol = 1e-6;
  // Outgoing message rank (step 5 of the factor-to-variable update).
  // 0 = graph default: the ensemble size when factors were initialized from
  // ensembles, otherwise unlimited.
  std::size_t message_rank = 0;
  // Width cap applied to combined incoming blocks when a factor assembles its
  // joint precision; the reduction cost is accounted to the
  // factor-to-variable step. 0 = same as message_rank.
  std::size_t incoming_width_cap = 0;
  // Belief component width cap; 0 = node degree times message rank.
  std::size_t belief_width_cap = 0;
  double uninformative_eps = 1e-8;
};

struct BpReport {
  int iterations = 0;
  bool converged = false;
  std::vector<double> residuals;  // per-sweep max relative belief-mean change
  std::size_t peak_component_width = 0;
  int message_count = 0;
  double seconds_messages = 0.0;
  double seconds_beliefs = 0.0;
};

class FactorGraph {
 public:
  // One factor per process (ancestral processes become unary prior factors).
  static FactorGraph build(const Sem& sem);

  std::size_t num_variables() const { return vars_.size(); }
  std::size_t num_factors() const { return factors_.size(); }
  const VariableNode& variable(int id) const { return vars_.at(id); }
  const FactorNode& factor(int id) const { return factors_.at(id); }
  int variable_id(const std::string& name) const;
  int factor_id(const std::string& name) const;
  bool has_variable(const std::string& name) const;

  // Install an explicit potential (exact factor initialization).
  void set_potential(int factor_id, CanonicalGaussian pot);

  // Set every factor to the canonical form of the implied Gaussian of its
  // stacked neighborhood ensemble, inflated by gamma2; the ensemble is kept
  // on the factor for later conditioning.
  void init_factors_from_ensembles(const std::map<std::string, Ensemble>& ens,
                                   double gamma2);

  // Evidence-conditioned copy: factors touching evidence have their stored
  // ensembles updated by the pathwise (Matheron) update with nugget sigma2
  // and their potentials re-initialized with gamma2; factors without
  // ensembles are conditioned in canonical form.  Evidence variables and
  // their edges are removed.
  FactorGraph conditioned(const std::map<std::string, Vec>& evidence,
                          double sigma2, double gamma2) const;

  // Exact lazy product of incoming messages except `exclude_factor`.
  CanonicalGaussian variable_to_factor_message(int var_id,
                                               int exclude_factor) const;

  // Sum-product message using the current stored messages.
  CanonicalGaussian factor_to_variable_message(int factor_id, int var_id,
                                               std::size_t message_rank = 0,
                                               std::size_t width_cap = 0) const;

  // Product over all incoming messages, width-capped.
  CanonicalGaussian compute_belief(int var_id,
                                   std::size_t width_cap = 0) const;

  BpReport run_bp(const BpOptions& opts);

  const CanonicalGaussian& message(int factor_id, std::size_t slot) const {
    return msgs_.at(factor_id).at(slot);
  }
  std::size_t default_message_rank() const { return default_message_rank_; }

  nlohmann::json structure_json() const;

 private:
  CanonicalGaussian f2v_core(const FactorNode& f, std::size_t target_block,
                             const std::vector<const CanonicalGaussian*>&
                                 incoming,
                             std::size_t message_rank,
                             std::size_t* peak_width) const;
  void reset_messages(double eps);

  std::vector<VariableNode> vars_;
  std::vector<FactorNode> factors_;
  std::vector<std::vector<CanonicalGaussian>> msgs_;  // [factor][block]
  std::size_t default_message_rank_ = 0;
  bool messages_initialized_ = false;
};

struct GenbpParams {
  std::size_t ensemble_size = 64;  // N
  double gamma2 = 0.01;            // factor initialization nugget
  double sigma2 = 1e-3;            // conditioning / general inflation nugget
  double eta2 = 0.1;               // conformation nugget
  int outer_iters = 15;
  int resim_every = 10;    // BP sweeps between re-simulations
  int max_total_iters = 150;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  std::size_t message_rank = 0;  // 0 = ensemble size
  double uninformative_eps = 1e-8;
};

struct GenbpResult {
  std::map<std::string, Ensemble> query_ensembles;
  std::map<std::string, MomentsGaussian> query_beliefs;
  int outer_iterations = 0;
  int total_sweeps = 0;
  bool outer_converged = false;
  std::size_t peak_component_width = 0;
  double seconds_simulate = 0.0;
  double seconds_condition = 0.0;
  double seconds_bp = 0.0;
  double seconds_conform = 0.0;
  double seconds_per_message = 0.0;
  nlohmann::json diagnostics;
};

// Full loop: sample (or re-simulate), condition, propagate, conform.
// Deterministic given params.seed.  Numerical failures abort with the outer
// iteration index attached.
GenbpResult run_genbp(const Sem& sem, const std::map<std::string, Vec>& evidence,
                      const GenbpParams& params);

}  // namespace genbp
