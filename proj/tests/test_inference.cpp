#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>

#include "dst/error.hpp"
#include "dst/inference.hpp"
#include "dst/oracle.hpp"
#include "support.hpp"

using namespace dst;
using namespace dst::testing;

namespace {

const std::vector<NodeSpec> kTinyDst{aggregator_spec(std::nullopt, 2), leaf_spec(0, 2), leaf_spec(0, 2)};

DiscreteChainStats prior_chain(const Model& model, NodeId id) {
  DiscreteChainPotentials p;
  const int T = 3;
  p.log_init = model.initial_table(id).col(0).array().log();
  p.log_trans.assign(T + 1, Eigen::MatrixXd());
  const TransitionTable& tab = model.transition_table(id);
  for (int t = 1; t <= T; ++t) {
    p.log_trans[t].resize(tab.states(), tab.states());
    for (int j = 0; j < tab.states(); ++j)
      for (int k = 0; k < tab.states(); ++k) p.log_trans[t](j, k) = std::log(tab(j, k, 0));
  }
  return forward_backward(p);
}

void check_update_keeps_bound(VariationalState& state, const Model& model, const ObservationSet& obs,
                              const std::function<void()>& update) {
  const double before = evidence_bound(model, state, obs);
  update();
  const double after = evidence_bound(model, state, obs);
  CHECK(after >= before - 1e-9);
}

std::vector<int> rotate_perm(int k) {
  std::vector<int> perm(k);
  for (int j = 0; j < k; ++j) perm[j] = (j + 1) % k;
  return perm;
}

LeafParams permute_leaf(const LeafParams& p, const std::vector<int>& perm) {
  LeafParams q = p;
  const int k = static_cast<int>(perm.size());
  for (int j = 0; j < k; ++j) {
    q.initial.row(perm[j]) = p.initial.row(j);
    q.mu0[perm[j]] = p.mu0[j];
    q.q0[perm[j]] = p.q0[j];
    q.A[perm[j]] = p.A[j];
    q.Q[perm[j]] = p.Q[j];
    for (int prev = 0; prev < k; ++prev)
      for (int l = 0; l < p.transition.parent_states(); ++l)
        q.transition(perm[j], perm[prev], l) = p.transition(j, prev, l);
  }
  return q;
}

DiscreteChainPotentials permute_potentials(const DiscreteChainPotentials& p, const std::vector<int>& perm) {
  DiscreteChainPotentials q = p;
  const int k = p.states();
  for (int j = 0; j < k; ++j) q.log_init[perm[j]] = p.log_init[j];
  for (int t = 1; t <= p.steps(); ++t)
    for (int j = 0; j < k; ++j)
      for (int prev = 0; prev < k; ++prev) q.log_trans[t](perm[j], perm[prev]) = p.log_trans[t](j, prev);
  return q;
}

}  // namespace

TEST_CASE("initialization with one-state chains") {
  std::mt19937_64 rng(1);
  const Model m = random_model(rng, {aggregator_spec(std::nullopt, 1), leaf_spec(0, 1), leaf_spec(0, 1, 2, 2)});
  const auto obs = sample_sequence(m, 6, 4).second;
  const auto state = init_variational(m, obs, 17);
  for (NodeId id = 0; id < 3; ++id)
    for (const auto& v : state.discrete(id).stats.singleton) CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::isfinite(state.bound()));
}

TEST_CASE("initial stats are normalized and seeds matter") {
  std::mt19937_64 rng(2);
  const Model m = random_model(rng, kTinyDst);
  const auto obs = sample_sequence(m, 5, 4).second;
  const auto a = init_variational(m, obs, 1);
  const auto b = init_variational(m, obs, 2);
  for (NodeId id = 0; id < 3; ++id) {
    const auto& s = a.discrete(id).stats;
    for (const auto& v : s.singleton) CHECK(std::abs(v.sum() - 1.0) < 1e-12);
    for (int t = 1; t <= 5; ++t) {
      CHECK(max_abs_diff(s.pairwise[t].rowwise().sum(), s.singleton[t]) < 1e-12);
      CHECK(max_abs_diff(s.pairwise[t].colwise().sum().transpose(), s.singleton[t - 1]) < 1e-12);
    }
  }
  CHECK(a.discrete(1).potentials.log_init != b.discrete(1).potentials.log_init);
  CHECK(std::isfinite(a.bound()));
  CHECK(std::isfinite(b.bound()));
}

TEST_CASE("root update with uninformative children reduces to the prior") {
  std::mt19937_64 rng(3);
  Model base = random_model(rng, {aggregator_spec(std::nullopt, 2), leaf_spec(0, 2)});
  std::vector<NodeParams> params = base.all_params();
  auto& leaf = std::get<LeafParams>(params[1]);
  leaf.initial.setConstant(0.5);
  leaf.transition = TransitionTable(2, 2, 0.5);
  const Model m(base.topology(), params);
  const auto obs = sample_sequence(m, 3, 5).second;
  auto state = init_variational(m, obs, 6);
  update_aggregator_potentials(state, m, 0);
  const auto expected = prior_chain(m, 0);
  for (int t = 0; t <= 3; ++t)
    CHECK(max_abs_diff(state.discrete(0).stats.singleton[t], expected.singleton[t]) < 1e-12);
  for (int t = 1; t <= 3; ++t)
    CHECK(max_abs_diff(state.discrete(0).stats.pairwise[t], expected.pairwise[t]) < 1e-12);
}

TEST_CASE("one-state chain update leaves stats unchanged") {
  std::mt19937_64 rng(4);
  const Model m = random_model(rng, {aggregator_spec(std::nullopt, 1), leaf_spec(0, 1)});
  const auto obs = sample_sequence(m, 4, 1).second;
  auto state = init_variational(m, obs, 2);
  update_aggregator_potentials(state, m, 0);
  update_leaf_switch_potentials(state, m, 1);
  for (NodeId id : {NodeId{0}, NodeId{1}})
    for (const auto& v : state.discrete(id).stats.singleton) CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("every single chain update is non-decreasing") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Model m = random_model(rng, kTinyDst);
    const auto obs = sample_sequence(m, 2, rep).second;
    auto state = init_variational(m, obs, rep);
    for (int sweep = 0; sweep < 3; ++sweep) {
      for (NodeId leaf : {NodeId{1}, NodeId{2}}) {
        check_update_keeps_bound(state, m, obs, [&] { update_leaf_continuous(state, m, leaf, obs); });
        check_update_keeps_bound(state, m, obs, [&] { update_leaf_switch_potentials(state, m, leaf); });
      }
      check_update_keeps_bound(state, m, obs, [&] { update_aggregator_potentials(state, m, 0); });
    }
  }
}

TEST_CASE("identical switch dynamics reduce to a pure HMM update") {
  std::mt19937_64 rng(6);
  Model base = random_model(rng, {aggregator_spec(std::nullopt, 2), leaf_spec(0, 2, 2, 2)});
  std::vector<NodeParams> params = base.all_params();
  auto& leaf = std::get<LeafParams>(params[1]);
  leaf.mu0[1] = leaf.mu0[0];
  leaf.q0[1] = leaf.q0[0];
  leaf.A[1] = leaf.A[0];
  leaf.Q[1] = leaf.Q[0];
  const Model m(base.topology(), params);
  const auto obs = sample_sequence(m, 4, 3).second;
  auto state = init_variational(m, obs, 8);
  update_leaf_continuous(state, m, 1, obs);
  const auto& parent = state.discrete(0).stats.singleton;
  DiscreteChainPotentials hmm;
  hmm.log_init = Eigen::VectorXd::Zero(2);
  hmm.log_trans.assign(5, Eigen::MatrixXd());
  for (int j = 0; j < 2; ++j)
    for (int l = 0; l < 2; ++l) hmm.log_init[j] += parent[0][l] * std::log(leaf.initial(j, l));
  for (int t = 1; t <= 4; ++t) {
    hmm.log_trans[t] = Eigen::MatrixXd::Zero(2, 2);
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) hmm.log_trans[t](j, k) += parent[t][l] * std::log(leaf.transition(j, k, l));
  }
  const auto expected = forward_backward(hmm);
  const auto actual = forward_backward(leaf_switch_potentials(state, m, 1));
  for (int t = 0; t <= 4; ++t) CHECK(max_abs_diff(actual.singleton[t], expected.singleton[t]) < 1e-10);
  for (int t = 1; t <= 4; ++t) CHECK(max_abs_diff(actual.pairwise[t], expected.pairwise[t]) < 1e-10);
}

TEST_CASE("single-state leaf reaches the Kalman likelihood quickly") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 6; ++rep) {
    const Model m = random_lds(rng, 1 + rep % 3, 1 + (rep / 2) % 3);
    const auto obs = sample_sequence(m, 5 + 4 * rep, rep).second;
    InferenceOptions opt;
    opt.max_sweeps = 3;
    const auto fit = fit_variational(m, obs, opt, rep);
    const auto& s = obs.leaves.at(0);
    CHECK(std::abs(fit.state.bound() - oracle::kalman_loglik(m.leaf(0), s.y, s.observed)) < 1e-6);
  }
}

TEST_CASE("single observation, unit parameters") {
  LeafParams p;
  p.initial = Eigen::MatrixXd::Ones(1, 1);
  p.transition = TransitionTable(1, 1, 1.0);
  p.mu0 = {Eigen::VectorXd::Zero(1)};
  p.q0 = p.A = p.Q = {Eigen::MatrixXd::Ones(1, 1)};
  p.C = p.R = Eigen::MatrixXd::Ones(1, 1);
  const Model m(Topology({leaf_spec(std::nullopt, 1)}), {p});
  const ObservationSet obs{0, {{0, LeafSeries{Eigen::MatrixXd::Zero(1, 1), {1}}}}};
  const auto fit = fit_variational(m, obs, {}, 0);
  CHECK(fit.state.bound() == doctest::Approx(-0.5 * std::log(4.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(fit.state.bound() == doctest::Approx(-1.265512).epsilon(1e-6));
}

TEST_CASE("without evidence the chain follows the prior") {
  std::mt19937_64 rng(8);
  const Model m = random_lds(rng, 2, 1);
  const int T = 12;
  ObservationSet obs{T, {{0, LeafSeries{Eigen::MatrixXd::Zero(T + 1, 1), std::vector<char>(T + 1, 0)}}}};
  const auto fit = fit_variational(m, obs, {}, 0);
  const LeafParams& p = m.leaf(0);
  const auto& c = fit.state.continuous(0);
  Eigen::VectorXd mean = p.mu0[0];
  Eigen::MatrixXd cov = p.q0[0];
  for (int t = 0; t <= T; ++t) {
    if (t > 0) {
      mean = p.A[0] * mean;
      cov = p.A[0] * cov * p.A[0].transpose() + p.Q[0];
      CHECK(max_abs_diff(c.params.Q_hat[t], p.Q[0]) < 1e-8);
    }
    CHECK(max_abs_diff(c.stats.mean[t], mean) < 1e-8);
    CHECK(max_abs_diff(c.stats.second[t] - c.stats.mean[t] * c.stats.mean[t].transpose(), cov) < 1e-8);
  }
  CHECK(std::abs(fit.state.bound()) < 1e-8);
}

TEST_CASE("sweep limit and trace length") {
  std::mt19937_64 rng(9);
  const Model m = random_model(rng, kTinyDst);
  const auto obs = sample_sequence(m, 4, 0).second;
  InferenceOptions opt;
  opt.max_sweeps = 1;
  opt.tol = 1e-300;
  const auto fit = fit_variational(m, obs, opt, 0);
  CHECK(fit.sweeps == 1);
  CHECK(fit.trace.size() == 2);
}

TEST_CASE("traces never decrease") {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    const Model m = random_model(rng, tiny_topology(rng));
    const auto obs = sample_sequence(m, 1 + rep % 6, rep).second;
    InferenceOptions opt;
    opt.track_updates = true;
    opt.tol = 1e-10;
    const auto fit = fit_variational(m, obs, opt, rep);
    for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] >= fit.trace[i - 1] - 1e-9);
    for (std::size_t i = 1; i < fit.update_trace.size(); ++i)
      CHECK(fit.update_trace[i] >= fit.update_trace[i - 1] - 1e-9);
  }
}

TEST_CASE("converged bound stays below the exact likelihood") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 8; ++rep) {
    const Model m = random_model(rng, {aggregator_spec(std::nullopt, 2), leaf_spec(0, 2)});
    const auto obs = sample_sequence(m, 2, rep).second;
    InferenceOptions opt;
    opt.tol = 1e-10;
    const auto fit = fit_variational(m, obs, opt, rep);
    CHECK(fit.state.bound() <= oracle::exact_loglik_enumerate(m, obs) + 1e-9);
  }
}

TEST_CASE("relabeling switch states leaves the bound unchanged") {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    const Model m = random_model(rng, {aggregator_spec(std::nullopt, 2), leaf_spec(0, 3), leaf_spec(0, 2)});
    const auto obs = sample_sequence(m, 5, rep).second;
    const auto perm = rotate_perm(3);
    std::vector<NodeParams> params = m.all_params();
    params[1] = permute_leaf(m.leaf(1), perm);
    const Model pm(m.topology(), params);
    const auto warm = init_variational(m, obs, rep);
    VariationalState pwarm = warm;
    pwarm.set_discrete(1, permute_potentials(warm.discrete(1).potentials, perm));
    InferenceOptions opt;
    opt.tol = 1e-12;
    opt.max_sweeps = 100;
    const auto a = fit_variational(m, obs, opt, 0, &warm);
    const auto b = fit_variational(pm, obs, opt, 0, &pwarm);
    CHECK(std::abs(a.state.bound() - b.state.bound()) < 1e-9);
  }
}

TEST_CASE("stale state is refused") {
  std::mt19937_64 rng(13);
  const Model m = random_model(rng, kTinyDst);
  const auto obs = sample_sequence(m, 3, 0).second;
  auto state = init_variational(m, obs, 0);
  auto pot = state.discrete(0).potentials;
  pot.log_init[0] += 1.0;
  state.set_discrete_stale(0, pot);
  CHECK_FALSE(state.current());
  CHECK_THROWS(evidence_bound(m, state, obs));
  state.refresh();
  CHECK(std::isfinite(evidence_bound(m, state, obs)));
}

TEST_CASE("state dump is JSON with every chain") {
  std::mt19937_64 rng(14);
  const Model m = random_model(rng, kTinyDst);
  const auto obs = sample_sequence(m, 2, 0).second;
  const std::string dump = dump_state_json(init_variational(m, obs, 0));
  CHECK(dump.find("\"singleton\"") != std::string::npos);
  CHECK(dump.find("\"x_second\"") != std::string::npos);
}
