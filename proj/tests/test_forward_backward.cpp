#include <doctest.h>

#include <cmath>
#include <limits>

#include "dst/error.hpp"
#include "dst/inference.hpp"
#include "support.hpp"

using namespace dst;
using namespace dst::testing;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

DiscreteChainPotentials flat(int k, int T) {
  DiscreteChainPotentials p;
  p.log_init = Eigen::VectorXd::Zero(k);
  p.log_trans.assign(T + 1, Eigen::MatrixXd());
  for (int t = 1; t <= T; ++t) p.log_trans[t] = Eigen::MatrixXd::Zero(k, k);
  return p;
}
}  // namespace

TEST_CASE("uniform chain") {
  const auto s = forward_backward(flat(2, 3));
  for (int t = 0; t <= 3; ++t) CHECK(max_abs_diff(s.singleton[t], Eigen::VectorXd::Constant(2, 0.5)) < 1e-15);
  for (int t = 1; t <= 3; ++t) CHECK(max_abs_diff(s.pairwise[t], Eigen::MatrixXd::Constant(2, 2, 0.25)) < 1e-15);
  CHECK(s.entropy == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("delta potentials pin one path") {
  auto p = flat(2, 2);
  p.log_init << 0, kNegInf;
  for (int t = 1; t <= 2; ++t) p.log_trans[t].setConstant(kNegInf);
  p.log_trans[1](1, 0) = 0;
  p.log_trans[2](0, 1) = 0;
  const auto s = forward_backward(p);
  CHECK(s.singleton[0][0] == 1.0);
  CHECK(s.singleton[1][1] == 1.0);
  CHECK(s.singleton[2][0] == 1.0);
  CHECK(s.pairwise[1](1, 0) == 1.0);
  CHECK(s.pairwise[1].sum() == 1.0);
  CHECK(s.pairwise[2](0, 1) == 1.0);
  CHECK(s.entropy == 0.0);
  CHECK(s.log_partition == 0.0);
}

TEST_CASE("marginals match enumeration over every path") {
  std::mt19937_64 rng(1234);
  for (int rep = 0; rep < 30; ++rep) {
    const int k = 1 + rep % 3;
    const int T = rep % 6;
    const auto p = random_potentials(rng, k, T);
    const auto s = forward_backward(p);
    const auto e = enumerate_chain(p);
    for (int t = 0; t <= T; ++t) CHECK(max_abs_diff(s.singleton[t], e.singleton[t]) < 1e-12);
    for (int t = 1; t <= T; ++t) CHECK(max_abs_diff(s.pairwise[t], e.pairwise[t]) < 1e-12);
    CHECK(std::abs(s.entropy - e.entropy) < 1e-12);
    CHECK(std::abs(s.log_partition - e.log_partition) < 1e-12);
  }
}

TEST_CASE("three states over four steps") {
  std::mt19937_64 rng(99);
  const auto p = random_potentials(rng, 3, 4);
  const auto s = forward_backward(p);
  const auto e = enumerate_chain(p);
  for (int t = 0; t <= 4; ++t) CHECK(max_abs_diff(s.singleton[t], e.singleton[t]) < 1e-12);
  for (int t = 1; t <= 4; ++t) {
    CHECK(max_abs_diff(s.pairwise[t], e.pairwise[t]) < 1e-12);
    CHECK(max_abs_diff(s.pairwise[t].rowwise().sum(), s.singleton[t]) < 1e-12);
    CHECK(max_abs_diff(s.pairwise[t].colwise().sum().transpose(), s.singleton[t - 1]) < 1e-12);
  }
}

TEST_CASE("huge potentials stay finite") {
  auto p = flat(2, 50);
  p.log_init << 800, -800;
  for (int t = 1; t <= 50; ++t) p.log_trans[t] << 900, -900, 700, 1000;
  const auto s = forward_backward(p);
  CHECK(std::isfinite(s.log_partition));
  CHECK(std::isfinite(s.entropy));
  for (const auto& v : s.singleton) CHECK(std::abs(v.sum() - 1.0) < 1e-12);
}

TEST_CASE("dead states are errors") {
  auto p = flat(2, 2);
  p.log_init.setConstant(kNegInf);
  CHECK_THROWS_AS(forward_backward(p), NumericalError);
  p = flat(2, 2);
  p.log_trans[2].setConstant(kNegInf);
  CHECK_THROWS_AS(forward_backward(p), NumericalError);
  p = flat(2, 2);
  p.log_trans[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward_backward(p), NumericalError);
}
