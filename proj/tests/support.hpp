#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "dst/inference.hpp"
#include "dst/model.hpp"

namespace dst::testing {

inline double normal(std::mt19937_64& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

inline Eigen::MatrixXd random_spd(std::mt19937_64& rng, int d, double scale = 1.0) {
  const Eigen::MatrixXd l = random_matrix(rng, d, d);
  return scale * (0.3 * l * l.transpose() / d + uniform(rng, 0.3, 1.0) * Eigen::MatrixXd::Identity(d, d));
}

inline Eigen::MatrixXd random_stable(std::mt19937_64& rng, int d, double radius = 0.9) {
  Eigen::MatrixXd m = random_matrix(rng, d, d);
  const double norm = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
  return m * (uniform(rng, 0.3, radius) / std::max(norm, 1e-9));
}

inline Eigen::MatrixXd random_columns(std::mt19937_64& rng, int k, int kp) {
  Eigen::MatrixXd m(k, kp);
  for (int l = 0; l < kp; ++l) {
    for (int j = 0; j < k; ++j) m(j, l) = uniform(rng, 0.1, 1.0);
    m.col(l) /= m.col(l).sum();
  }
  return m;
}

inline TransitionTable random_transition(std::mt19937_64& rng, int k, int kp) {
  TransitionTable t(k, kp);
  for (int l = 0; l < kp; ++l)
    for (int prev = 0; prev < k; ++prev) {
      double total = 0.0;
      for (int j = 0; j < k; ++j) total += t(j, prev, l) = uniform(rng, 0.1, 1.0);
      for (int j = 0; j < k; ++j) t(j, prev, l) /= total;
    }
  return t;
}

inline LeafParams random_leaf(std::mt19937_64& rng, int k, int kp, int xd, int yd) {
  LeafParams p;
  p.initial = random_columns(rng, k, kp);
  p.transition = random_transition(rng, k, kp);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd mu(xd);
    for (int i = 0; i < xd; ++i) mu[i] = normal(rng);
    p.mu0.push_back(mu);
    p.q0.push_back(random_spd(rng, xd));
    p.A.push_back(random_stable(rng, xd));
    p.Q.push_back(random_spd(rng, xd, 0.5));
  }
  p.C = random_matrix(rng, yd, xd);
  p.R = random_spd(rng, yd, 0.5);
  return p;
}

inline Model random_model(std::mt19937_64& rng, const std::vector<NodeSpec>& nodes) {
  Topology topo(nodes);
  std::vector<NodeParams> params;
  for (NodeId id = 0; id < topo.size(); ++id) {
    const int k = topo.states(id);
    const int kp = topo.parent_states(id);
    if (topo.is_leaf(id))
      params.emplace_back(random_leaf(rng, k, kp, topo.node(id).x_dim, topo.node(id).y_dim));
    else
      params.emplace_back(AggregatorParams{random_columns(rng, k, kp), random_transition(rng, k, kp)});
  }
  return Model(std::move(topo), std::move(params));
}

inline NodeSpec leaf_spec(std::optional<NodeId> parent, int k, int xd = 1, int yd = 1) {
  return NodeSpec{NodeKind::Leaf, parent, k, xd, yd};
}
inline NodeSpec aggregator_spec(std::optional<NodeId> parent, int k) {
  return NodeSpec{NodeKind::Aggregator, parent, k, 0, 0};
}

// One of: lone leaf, aggregator over one leaf, aggregator over two leaves;
// every chain has 1..max_k states.
inline std::vector<NodeSpec> tiny_topology(std::mt19937_64& rng, int max_k = 2, int xd = 1, int yd = 1) {
  auto k = [&] { return std::uniform_int_distribution<int>(1, max_k)(rng); };
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0:
      return {leaf_spec(std::nullopt, k(), xd, yd)};
    case 1:
      return {aggregator_spec(std::nullopt, k()), leaf_spec(0, k(), xd, yd)};
    default:
      return {aggregator_spec(std::nullopt, k()), leaf_spec(0, k(), xd, yd), leaf_spec(0, k(), xd, yd)};
  }
}

// Single-leaf, one-state model (a plain linear dynamical system).
inline Model random_lds(std::mt19937_64& rng, int xd, int yd) {
  return random_model(rng, {leaf_spec(std::nullopt, 1, xd, yd)});
}

inline ObservationSet observe_all(const ObservationSet& obs) { return obs; }

// Brute-force chain marginals by enumerating every path.
struct EnumeratedChain {
  std::vector<Eigen::VectorXd> singleton;
  std::vector<Eigen::MatrixXd> pairwise;
  double entropy = 0.0;
  double log_partition = 0.0;
};

inline EnumeratedChain enumerate_chain(const DiscreteChainPotentials& p) {
  const int k = p.states();
  const int T = p.steps();
  EnumeratedChain out;
  out.singleton.assign(T + 1, Eigen::VectorXd::Zero(k));
  out.pairwise.assign(T + 1, Eigen::MatrixXd::Zero(k, k));
  std::vector<int> path(T + 1, 0);
  std::vector<double> weights;
  std::vector<std::vector<int>> paths;
  while (true) {
    double w = p.log_init[path[0]];
    for (int t = 1; t <= T; ++t) w += p.log_trans[t](path[t], path[t - 1]);
    weights.push_back(std::exp(w));
    paths.push_back(path);
    int pos = 0;
    while (pos <= T && ++path[pos] == k) path[pos++] = 0;
    if (pos > T) break;
  }
  double z = 0.0;
  for (double w : weights) z += w;
  out.log_partition = std::log(z);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double prob = weights[i] / z;
    if (prob > 0.0) out.entropy -= prob * std::log(prob);
    for (int t = 0; t <= T; ++t) out.singleton[t][paths[i][t]] += prob;
    for (int t = 1; t <= T; ++t) out.pairwise[t](paths[i][t], paths[i][t - 1]) += prob;
  }
  return out;
}

inline DiscreteChainPotentials random_potentials(std::mt19937_64& rng, int k, int T, double spread = 1.5) {
  DiscreteChainPotentials p;
  p.log_init.resize(k);
  for (int j = 0; j < k; ++j) p.log_init[j] = spread * normal(rng);
  p.log_trans.assign(T + 1, Eigen::MatrixXd());
  for (int t = 1; t <= T; ++t) p.log_trans[t] = spread * random_matrix(rng, k, k);
  return p;
}

inline GaussianChainParams random_chain(std::mt19937_64& rng, int d, int T) {
  GaussianChainParams p;
  p.mu_init = random_matrix(rng, d, 1);
  p.q_init = random_spd(rng, d);
  p.A_hat.assign(T + 1, Eigen::MatrixXd());
  p.B_hat.assign(T + 1, Eigen::VectorXd());
  p.Q_hat.assign(T + 1, Eigen::MatrixXd());
  for (int t = 1; t <= T; ++t) {
    p.A_hat[t] = random_stable(rng, d, 1.1);
    p.B_hat[t] = random_matrix(rng, d, 1);
    p.Q_hat[t] = random_spd(rng, d);
  }
  return p;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Masks each step of each leaf independently with the given probability.
inline void random_mask(std::mt19937_64& rng, ObservationSet& obs, double p) {
  for (auto& [id, series] : obs.leaves)
    for (auto& flag : series.observed) flag = uniform(rng, 0.0, 1.0) < p ? 0 : 1;
}

}  // namespace dst::testing
