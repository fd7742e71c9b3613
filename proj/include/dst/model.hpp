#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <utility>
#include <variant>
#include <vector>

#include "dst/topology.hpp"

namespace dst {

/// Conditional table p(s_t = j | s_{t-1} = k, s_t^{parent} = l), indexed (j, k, l).
class TransitionTable {
 public:
  TransitionTable() = default;
  TransitionTable(int states, int parent_states, double fill = 0.0)
      : states_(states),
        parent_states_(parent_states),
        values_(static_cast<std::size_t>(states) * states * parent_states, fill) {}

  int states() const { return states_; }
  int parent_states() const { return parent_states_; }

  double operator()(int j, int k, int l) const { return values_[offset(j, k, l)]; }
  double& operator()(int j, int k, int l) { return values_[offset(j, k, l)]; }

  friend bool operator==(const TransitionTable&, const TransitionTable&) = default;

 private:
  std::size_t offset(int j, int k, int l) const {
    return (static_cast<std::size_t>(l) * states_ + k) * states_ + j;
  }

  int states_ = 0;
  int parent_states_ = 0;
  std::vector<double> values_;
};

// Discrete part shared by aggregators and leaf switch chains.
// `initial` is K x K_parent with columns summing to one: p(s_0 = j | parent_0 = l).
struct AggregatorParams {
  Eigen::MatrixXd initial;
  TransitionTable transition;
};

struct LeafParams {
  Eigen::MatrixXd initial;
  TransitionTable transition;
  // Per switch state j.
  std::vector<Eigen::VectorXd> mu0;
  std::vector<Eigen::MatrixXd> q0;
  std::vector<Eigen::MatrixXd> A;
  std::vector<Eigen::MatrixXd> Q;
  Eigen::MatrixXd C;  // y_dim x x_dim
  Eigen::MatrixXd R;  // y_dim x y_dim
};

using NodeParams = std::variant<AggregatorParams, LeafParams>;

class Model {
 public:
  // Throws DataError if parameters do not match the topology or violate
  // normalization/positive-definiteness (tables checked to `table_tol`).
  Model(Topology topology, std::vector<NodeParams> params, double table_tol = 1e-9);

  const Topology& topology() const { return topology_; }
  const NodeParams& params(NodeId id) const { return params_.at(id); }
  const AggregatorParams& aggregator(NodeId id) const { return std::get<AggregatorParams>(params_.at(id)); }
  const LeafParams& leaf(NodeId id) const { return std::get<LeafParams>(params_.at(id)); }
  const std::vector<NodeParams>& all_params() const { return params_; }

  const Eigen::MatrixXd& initial_table(NodeId id) const;
  const TransitionTable& transition_table(NodeId id) const;

 private:
  Topology topology_;
  std::vector<NodeParams> params_;
};

// Full check used by the Model constructor; exposed for diagnostics.
void check_params(const Topology& topology, const std::vector<NodeParams>& params, double table_tol);

struct LeafSeries {
  Eigen::MatrixXd y;           // (T+1) x y_dim; rows at unobserved steps are ignored
  std::vector<char> observed;  // length T+1, nonzero = observed
};

struct ObservationSet {
  int steps = 0;  // T; sequences cover t = 0..T
  std::map<NodeId, LeafSeries> leaves;
};

struct HiddenAssignment {
  std::vector<std::vector<int>> states;  // per node, length T+1
  std::map<NodeId, Eigen::MatrixXd> x;   // per leaf, (T+1) x x_dim
};

// Throws DataError naming the leaf and field when `obs` does not fit `topology`.
void check_observations(const Topology& topology, const ObservationSet& obs);

/// log P(S, X, Y); masked emissions are skipped.
double complete_loglik(const Model& model, const HiddenAssignment& assignment, const ObservationSet& obs);

/// Ancestral sample: nodes in preorder, each forward in time.
std::pair<HiddenAssignment, ObservationSet> sample_sequence(const Model& model, int steps, std::uint64_t seed);

// Mixes a base seed with a stream index (splitmix64) so that independent
// streams can be derived from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace dst
