#pragma once

#include <Eigen/Dense>
#include <string_view>

namespace dst::linalg {

inline constexpr double kMinEigenvalue = 1e-12;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

double min_eigenvalue(const Eigen::MatrixXd& m);

// Inverse of a symmetric positive-definite matrix. The input is symmetrized
// first; a minimum eigenvalue <= kMinEigenvalue throws NumericalError with `what`.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, std::string_view what);

double log_det_spd(const Eigen::MatrixXd& m, std::string_view what);

// Clamps eigenvalues of the symmetrized matrix from below.
Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double floor);

bool is_spd(const Eigen::MatrixXd& m);

// log N(y | mean, cov).
double log_normal(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

// w * log(p) with 0 * log(0) = 0.
double xlogy(double w, double p);

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace dst::linalg
