#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dst/inference.hpp"
#include "dst/model.hpp"

namespace dst {

struct Dataset {
  std::vector<ObservationSet> sequences;
};

struct EmConfig {
  double e_tol = 1e-6;   // per-sequence mean-field tolerance
  double em_tol = 1e-5;  // relative improvement of the summed bound
  int max_em_iters = 100;
  int max_sweeps = 200;
  bool overrelax = false;
  double eta_init = 1.0;
  double eta_grow = 1.1;
  double eta_shrink = 0.5;
  std::uint64_t seed = 0;
  double covariance_floor = 1e-6;  // relative to the mean data variance
};

// Throws Error(Usage) when a field is out of range.
void check_config(const EmConfig& config);

struct FitReport {
  std::vector<double> bound_per_iter;  // summed over sequences; entry 0 is the starting model
  int iters_run = 0;
  bool converged = false;
  std::vector<double> eta_trace;  // step size used at each iteration, only with overrelax
  int rejected_steps = 0;         // over-relaxed steps that fell back to the plain M-step
};

struct MStepNotes {
  // (leaf, switch state) pairs whose continuous parameters were kept for lack of weight.
  std::vector<std::pair<NodeId, int>> kept_states;
};

// Mean variance of the observed emissions over all leaves and dimensions.
double data_variance_scale(const Dataset& data);

// Data-driven starting point: per-leaf switch states get dynamics regressed
// on contiguous subsets of the data; discrete tables are near-uniform.
Model initialize_params(const Topology& topology, const Dataset& data, std::uint64_t seed,
                        double relative_floor = 1e-6);

// Closed-form maximizer of the expected complete log-likelihood summed over
// sequences; `states[s]` must be the variational state of `data.sequences[s]`.
Model m_step(const Model& model, std::span<const VariationalState> states, const Dataset& data, double floor,
             MStepNotes* notes = nullptr);

// prev + eta * (proposed - prev): log domain for tables, linear for matrices,
// eigenvalue-floored linear blend for covariances.
Model overrelaxed_update(const Model& prev, const Model& proposed, double eta, double floor);

std::pair<Model, FitReport> em_fit(const Model& model, const Dataset& data, const EmConfig& config);

struct Classification {
  std::size_t label = 0;
  bool tie = false;
  std::vector<double> scores;       // NaN where inference failed
  std::vector<std::string> errors;  // empty string where inference succeeded
};

Classification classify(std::span<const Model> models, const ObservationSet& obs, const EmConfig& config);

}  // namespace dst
