#include <cmath>
#include <limits>
#include <string>

#include "dst/error.hpp"
#include "dst/inference.hpp"
#include "dst/linalg.hpp"

namespace dst {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_potentials(const DiscreteChainPotentials& p) {
  const int k = p.states();
  if (k < 1) throw DataError("chain potentials: empty state space");
  if (p.log_trans.empty()) throw DataError("chain potentials: log_trans must hold T+1 entries");
  auto finite_or_neg_inf = [](double v) { return !std::isnan(v) && v != std::numeric_limits<double>::infinity(); };
  for (int j = 0; j < k; ++j)
    if (!finite_or_neg_inf(p.log_init[j])) throw NumericalError("chain potentials: non-finite initial entry");
  if (p.log_init.maxCoeff() == kNegInf) throw NumericalError("dead chain state: initial potentials are all zero");
  for (int t = 1; t <= p.steps(); ++t) {
    const Eigen::MatrixXd& m = p.log_trans[t];
    if (m.rows() != k || m.cols() != k)
      throw DataError("chain potentials: transition at t=" + std::to_string(t) + " has wrong shape");
    for (int prev = 0; prev < k; ++prev)
      for (int j = 0; j < k; ++j)
        if (!finite_or_neg_inf(m(j, prev)))
          throw NumericalError("chain potentials: non-finite transition entry at t=" + std::to_string(t));
  }
}

}  // namespace

DiscreteChainStats forward_backward(const DiscreteChainPotentials& potentials) {
  check_potentials(potentials);
  const int k = potentials.states();
  const int T = potentials.steps();

  std::vector<Eigen::VectorXd> alpha(T + 1, Eigen::VectorXd(k));
  std::vector<Eigen::VectorXd> beta(T + 1, Eigen::VectorXd::Zero(k));
  alpha[0] = potentials.log_init;
  Eigen::VectorXd scratch(k);
  for (int t = 1; t <= T; ++t) {
    const Eigen::MatrixXd& lt = potentials.log_trans[t];
    for (int j = 0; j < k; ++j) {
      for (int prev = 0; prev < k; ++prev) scratch[prev] = alpha[t - 1][prev] + lt(j, prev);
      alpha[t][j] = linalg::log_sum_exp(scratch);
    }
  }
  for (int t = T; t >= 1; --t) {
    const Eigen::MatrixXd& lt = potentials.log_trans[t];
    for (int prev = 0; prev < k; ++prev) {
      for (int j = 0; j < k; ++j) scratch[j] = lt(j, prev) + beta[t][j];
      beta[t - 1][prev] = linalg::log_sum_exp(scratch);
    }
  }

  DiscreteChainStats stats;
  stats.log_partition = linalg::log_sum_exp(alpha[T]);
  if (!std::isfinite(stats.log_partition))
    throw NumericalError("dead chain state: chain has no path of positive weight");
  const double log_z = stats.log_partition;

  stats.singleton.resize(T + 1);
  stats.pairwise.resize(T + 1);
  for (int t = 0; t <= T; ++t) stats.singleton[t] = (alpha[t] + beta[t]).array().unaryExpr([&](double v) {
    return v == kNegInf ? 0.0 : std::exp(v - log_z);
  });
  for (int t = 1; t <= T; ++t) {
    const Eigen::MatrixXd& lt = potentials.log_trans[t];
    Eigen::MatrixXd pair(k, k);
    for (int j = 0; j < k; ++j)
      for (int prev = 0; prev < k; ++prev) {
        const double v = alpha[t - 1][prev] + lt(j, prev) + beta[t][j];
        pair(j, prev) = v == kNegInf ? 0.0 : std::exp(v - log_z);
      }
    stats.pairwise[t] = std::move(pair);
  }

  // H = log Z - E[log of the unnormalized path weight].
  double expected = 0.0;
  for (int j = 0; j < k; ++j)
    if (stats.singleton[0][j] > 0.0) expected += stats.singleton[0][j] * potentials.log_init[j];
  for (int t = 1; t <= T; ++t)
    for (int j = 0; j < k; ++j)
      for (int prev = 0; prev < k; ++prev)
        if (stats.pairwise[t](j, prev) > 0.0) expected += stats.pairwise[t](j, prev) * potentials.log_trans[t](j, prev);
  stats.entropy = log_z - expected;
  return stats;
}

}  // namespace dst
