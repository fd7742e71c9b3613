#include "dst/linalg.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "dst/error.hpp"

namespace dst::linalg {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double min_eigenvalue(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(m), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

bool is_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) return false;
  if (!m.allFinite()) return false;
  return min_eigenvalue(m) > 0.0;
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, std::string_view what) {
  const Eigen::MatrixXd s = symmetrize(m);
  if (!s.allFinite() || min_eigenvalue(s) <= kMinEigenvalue)
    throw NumericalError("matrix not positive definite: " + std::string(what));
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success)
    throw NumericalError("Cholesky factorization failed: " + std::string(what));
  return symmetrize(llt.solve(Eigen::MatrixXd::Identity(s.rows(), s.cols())));
}

double log_det_spd(const Eigen::MatrixXd& m, std::string_view what) {
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success)
    throw NumericalError("Cholesky factorization failed: " + std::string(what));
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(m));
  Eigen::VectorXd values = eig.eigenvalues().cwiseMax(floor);
  return symmetrize(eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose());
}

double log_normal(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite");
  const Eigen::VectorXd diff = y - mean;
  const Eigen::VectorXd z = llt.matrixL().solve(diff);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(y.size());
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

double xlogy(double w, double p) {
  if (w == 0.0) return 0.0;
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  return w * std::log(p);
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace dst::linalg
