#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dst/inference.hpp"
#include "dst/model.hpp"

// Exact reference computations for small instances. Exponential cost; the
// limits guard against accidental use on real models.
namespace dst::oracle {

struct TinyLimits {
  std::uint64_t max_total_discrete_paths = 100000;
  int max_joint_gaussian_dim = 64;
};

// Kalman-filter log-likelihood of a one-state leaf; masked steps are prediction only.
double kalman_loglik(const LeafParams& leaf, const Eigen::MatrixXd& y, const std::vector<char>& observed);

// Same filter with the switch path fixing (A, Q) per step and (mu0, q0) at t = 0.
double switched_kalman_loglik(const LeafParams& leaf, const Eigen::MatrixXd& y, const std::vector<char>& observed,
                              std::span<const int> switch_path);

// Exact log P(Y) by enumerating every joint discrete path over all chains.
double exact_loglik_enumerate(const Model& model, const ObservationSet& obs, const TinyLimits& limits = {});

// Moments by building the explicit joint Gaussian over x_0..x_T.
ContinuousChainStats gaussian_chain_moments_naive(const GaussianChainParams& params, const TinyLimits& limits = {});

}  // namespace dst::oracle
