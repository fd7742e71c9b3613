#include <cmath>
#include <numbers>

#include "dst/inference.hpp"
#include "dst/linalg.hpp"

namespace dst {

namespace {

double gaussian_entropy(const Eigen::MatrixXd& cov) {
  const double d = static_cast<double>(cov.rows());
  return 0.5 * (d * std::log(2.0 * std::numbers::pi * std::numbers::e) + linalg::log_det_spd(cov, "chain covariance"));
}

}  // namespace

ContinuousChainStats continuous_moments(const GaussianChainParams& params) {
  const int T = params.steps();
  ContinuousChainStats stats;
  stats.mean.resize(T + 1);
  stats.second.resize(T + 1);
  stats.cross.resize(T + 1);

  Eigen::MatrixXd cov = linalg::symmetrize(params.q_init);
  stats.mean[0] = params.mu_init;
  stats.second[0] = cov + params.mu_init * params.mu_init.transpose();
  stats.entropy = gaussian_entropy(params.q_init);
  for (int t = 1; t <= T; ++t) {
    const Eigen::MatrixXd& a = params.A_hat[t];
    const Eigen::VectorXd& b = params.B_hat[t];
    stats.mean[t] = a * stats.mean[t - 1] + b;
    cov = linalg::symmetrize(a * cov * a.transpose() + params.Q_hat[t]);
    stats.second[t] = cov + stats.mean[t] * stats.mean[t].transpose();
    stats.cross[t] = a * stats.second[t - 1] + b * stats.mean[t - 1].transpose();
    stats.entropy += gaussian_entropy(params.Q_hat[t]);
  }
  return stats;
}

}  // namespace dst
