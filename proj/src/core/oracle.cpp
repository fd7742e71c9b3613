#include "dst/oracle.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dst/error.hpp"
#include "dst/linalg.hpp"

namespace dst::oracle {

double switched_kalman_loglik(const LeafParams& leaf, const Eigen::MatrixXd& y, const std::vector<char>& observed,
                              std::span<const int> switch_path) {
  const auto steps = static_cast<int>(switch_path.size());
  if (y.rows() != steps || static_cast<int>(observed.size()) != steps)
    throw DataError("kalman: path, data and mask lengths differ");
  const Eigen::Index dim = leaf.C.cols();
  Eigen::VectorXd mean = leaf.mu0.at(switch_path[0]);
  Eigen::MatrixXd cov = leaf.q0.at(switch_path[0]);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);
  double total = 0.0;
  for (int t = 0; t < steps; ++t) {
    if (t > 0) {
      const int s = switch_path[t];
      mean = leaf.A.at(s) * mean;
      cov = linalg::symmetrize(leaf.A[s] * cov * leaf.A[s].transpose() + leaf.Q[s]);
    }
    if (!observed[t]) continue;
    const Eigen::VectorXd innovation = y.row(t).transpose() - leaf.C * mean;
    const Eigen::MatrixXd s_cov = linalg::symmetrize(leaf.C * cov * leaf.C.transpose() + leaf.R);
    Eigen::LLT<Eigen::MatrixXd> llt(s_cov);
    if (llt.info() != Eigen::Success)
      throw NumericalError("kalman: innovation covariance not positive definite at t=" + std::to_string(t));
    total += linalg::log_normal(innovation, Eigen::VectorXd::Zero(innovation.size()), s_cov);
    const Eigen::MatrixXd gain = llt.solve(leaf.C * cov).transpose();
    mean += gain * innovation;
    // Joseph form keeps the covariance symmetric positive semi-definite.
    const Eigen::MatrixXd i_kc = eye - gain * leaf.C;
    cov = linalg::symmetrize(i_kc * cov * i_kc.transpose() + gain * leaf.R * gain.transpose());
  }
  return total;
}

double kalman_loglik(const LeafParams& leaf, const Eigen::MatrixXd& y, const std::vector<char>& observed) {
  if (leaf.A.size() != 1) throw DataError("kalman_loglik requires a leaf with a single switch state");
  const std::vector<int> path(static_cast<std::size_t>(y.rows()), 0);
  return switched_kalman_loglik(leaf, y, observed, path);
}

double exact_loglik_enumerate(const Model& model, const ObservationSet& obs, const TinyLimits& limits) {
  const Topology& topo = model.topology();
  check_observations(topo, obs);
  const int steps = obs.steps + 1;
  const std::vector<NodeId>& order = topo.preorder();

  double count = 1.0;
  for (NodeId id : order) count *= std::pow(static_cast<double>(topo.states(id)), steps);
  if (count > static_cast<double>(limits.max_total_discrete_paths))
    throw DataError("enumeration would visit " + std::to_string(static_cast<unsigned long long>(count)) +
                    " discrete paths, above the limit of " + std::to_string(limits.max_total_discrete_paths));

  // Mixed-radix counter over (node, t).
  std::vector<std::vector<int>> path(topo.size(), std::vector<int>(steps, 0));
  auto advance = [&]() {
    for (NodeId id : order) {
      for (int t = 0; t < steps; ++t) {
        if (++path[id][t] < topo.states(id)) return true;
        path[id][t] = 0;
      }
    }
    return false;
  };

  double running_max = -std::numeric_limits<double>::infinity();
  double running_sum = 0.0;
  do {
    double lp = 0.0;
    for (NodeId id : order) {
      const auto parent = topo.node(id).parent;
      auto parent_at = [&](int t) { return parent ? path[*parent][t] : 0; };
      lp += linalg::xlogy(1.0, model.initial_table(id)(path[id][0], parent_at(0)));
      const TransitionTable& trans = model.transition_table(id);
      for (int t = 1; t < steps; ++t) lp += linalg::xlogy(1.0, trans(path[id][t], path[id][t - 1], parent_at(t)));
    }
    if (lp == -std::numeric_limits<double>::infinity()) continue;
    for (NodeId id : order) {
      if (!topo.is_leaf(id)) continue;
      const LeafSeries& series = obs.leaves.at(id);
      lp += switched_kalman_loglik(model.leaf(id), series.y, series.observed, path[id]);
    }
    if (lp > running_max) {
      running_sum = running_sum * std::exp(running_max - lp) + 1.0;
      running_max = lp;
    } else {
      running_sum += std::exp(lp - running_max);
    }
  } while (advance());

  if (running_max == -std::numeric_limits<double>::infinity())
    throw NumericalError("enumeration: every discrete path has zero probability");
  return running_max + std::log(running_sum);
}

ContinuousChainStats gaussian_chain_moments_naive(const GaussianChainParams& params, const TinyLimits& limits) {
  const int T = params.steps();
  const auto d = params.mu_init.size();
  const Eigen::Index n = (T + 1) * d;
  if (n > limits.max_joint_gaussian_dim)
    throw DataError("joint Gaussian dimension " + std::to_string(n) + " exceeds the limit of " +
                    std::to_string(limits.max_joint_gaussian_dim));

  // x = L^{-1} (b + e) with L = I - (subdiagonal blocks A_hat[t]) and e ~ N(0, blockdiag(q_init, Q_hat[t])).
  Eigen::MatrixXd lower = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd offsets(n);
  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(n, n);
  offsets.head(d) = params.mu_init;
  noise.topLeftCorner(d, d) = params.q_init;
  for (int t = 1; t <= T; ++t) {
    lower.block(t * d, (t - 1) * d, d, d) = -params.A_hat[t];
    offsets.segment(t * d, d) = params.B_hat[t];
    noise.block(t * d, t * d, d, d) = params.Q_hat[t];
  }
  const Eigen::MatrixXd lower_inv = lower.fullPivLu().inverse();
  const Eigen::VectorXd mean = lower_inv * offsets;
  const Eigen::MatrixXd cov = linalg::symmetrize(lower_inv * noise * lower_inv.transpose());

  ContinuousChainStats stats;
  stats.mean.resize(T + 1);
  stats.second.resize(T + 1);
  stats.cross.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    const Eigen::VectorXd m = mean.segment(t * d, d);
    stats.mean[t] = m;
    stats.second[t] = cov.block(t * d, t * d, d, d) + m * m.transpose();
    if (t > 0)
      stats.cross[t] = cov.block(t * d, (t - 1) * d, d, d) + m * mean.segment((t - 1) * d, d).transpose();
  }
  stats.entropy = 0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi * std::numbers::e) +
                         linalg::log_det_spd(cov, "joint chain covariance"));
  return stats;
}

}  // namespace dst::oracle
