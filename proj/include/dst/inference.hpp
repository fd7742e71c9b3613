#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dst/model.hpp"

namespace dst {

// Time-indexed vectors below have length T+1; entry 0 of every per-transition
// quantity (log_trans, pairwise, A_hat, B_hat, Q_hat, cross) is left empty.

/// Unnormalized chain potentials, stored as logs: init(j) and trans_t(j, k)
/// with j the current state and k the previous one.
struct DiscreteChainPotentials {
  Eigen::VectorXd log_init;
  std::vector<Eigen::MatrixXd> log_trans;

  int steps() const { return static_cast<int>(log_trans.size()) - 1; }
  int states() const { return static_cast<int>(log_init.size()); }
};

struct DiscreteChainStats {
  std::vector<Eigen::VectorXd> singleton;
  std::vector<Eigen::MatrixXd> pairwise;  // pairwise[t](j, k) = <s_t(j) s_{t-1}(k)>
  double entropy = 0.0;
  double log_partition = 0.0;
};

/// Q(x_0) = N(mu_init, q_init), Q(x_t | x_{t-1}) = N(A_hat[t] x_{t-1} + B_hat[t], Q_hat[t]).
struct GaussianChainParams {
  Eigen::VectorXd mu_init;
  Eigen::MatrixXd q_init;
  std::vector<Eigen::MatrixXd> A_hat;
  std::vector<Eigen::VectorXd> B_hat;
  std::vector<Eigen::MatrixXd> Q_hat;

  int steps() const { return static_cast<int>(A_hat.size()) - 1; }
};

struct ContinuousChainStats {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> second;  // <x_t x_t'>
  std::vector<Eigen::MatrixXd> cross;   // <x_t x_{t-1}'>
  double entropy = 0.0;
};

struct DiscreteChain {
  DiscreteChainPotentials potentials;
  DiscreteChainStats stats;
};

struct ContinuousChain {
  GaussianChainParams params;
  ContinuousChainStats stats;
};

/// The factorized Q distribution: one discrete chain per node (aggregator
/// state or leaf switch) and one Gaussian chain per leaf.
class VariationalState {
 public:
  VariationalState() = default;
  VariationalState(int steps, std::size_t nodes) : steps_(steps), discrete_(nodes), continuous_(nodes) {}

  int steps() const { return steps_; }
  std::size_t size() const { return discrete_.size(); }

  const DiscreteChain& discrete(NodeId id) const { return discrete_.at(id); }
  const ContinuousChain& continuous(NodeId id) const { return continuous_.at(id).value(); }
  bool has_continuous(NodeId id) const { return continuous_.at(id).has_value(); }

  // Replacing potentials/params refreshes the chain's statistics.
  void set_discrete(NodeId id, DiscreteChainPotentials potentials);
  void set_continuous(NodeId id, GaussianChainParams params);

  // Overwrites potentials without refreshing; evidence_bound refuses stale state.
  void set_discrete_stale(NodeId id, DiscreteChainPotentials potentials);
  bool current() const { return current_; }
  void refresh();

  double bound() const { return bound_; }
  void set_bound(double b) { bound_ = b; }

 private:
  int steps_ = 0;
  std::vector<DiscreteChain> discrete_;
  std::vector<std::optional<ContinuousChain>> continuous_;
  double bound_ = 0.0;
  bool current_ = true;
};

/// Exact marginals of the chain proportional to init(s_0) prod_t trans_t(s_t, s_{t-1}), in log space.
DiscreteChainStats forward_backward(const DiscreteChainPotentials& potentials);

/// Moments of the Gaussian chain by the forward conditioned-Gaussian recursion.
ContinuousChainStats continuous_moments(const GaussianChainParams& params);

VariationalState init_variational(const Model& model, const ObservationSet& obs, std::uint64_t seed);

void update_aggregator_potentials(VariationalState& state, const Model& model, NodeId node);
void update_leaf_switch_potentials(VariationalState& state, const Model& model, NodeId node);
void update_leaf_continuous(VariationalState& state, const Model& model, NodeId node, const ObservationSet& obs);

// Building blocks of the updates, exposed for tests.
DiscreteChainPotentials aggregator_potentials(const VariationalState& state, const Model& model, NodeId node);
DiscreteChainPotentials leaf_switch_potentials(const VariationalState& state, const Model& model, NodeId node);
// With `use_emissions` false every emission term is dropped (pure prior dynamics).
GaussianChainParams leaf_gaussian_params(const VariationalState& state, const Model& model, NodeId node,
                                         const ObservationSet& obs, bool use_emissions = true);

/// B(Q, Theta) = E_Q[log P(S, X, Y)] + H[Q].
double evidence_bound(const Model& model, const VariationalState& state, const ObservationSet& obs);

struct InferenceOptions {
  double tol = 1e-6;
  int max_sweeps = 200;
  int inner_iterations = 1;
  // Evaluate the bound after every single chain update and record it.
  bool track_updates = false;
};

struct VariationalFit {
  VariationalState state;
  std::vector<double> trace;         // bound at start, then after each sweep
  std::vector<double> update_trace;  // only with track_updates
  int sweeps = 0;
  bool converged = false;
};

/// Coordinate ascent until the per-sweep gain drops below `tol`. A non-null
/// `warm` state replaces the random initialization.
VariationalFit fit_variational(const Model& model, const ObservationSet& obs, const InferenceOptions& options,
                               std::uint64_t seed, const VariationalState* warm = nullptr);

// Marginals and moments as a JSON document, for debugging.
std::string dump_state_json(const VariationalState& state);

}  // namespace dst
