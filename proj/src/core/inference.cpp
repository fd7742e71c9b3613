#include "dst/inference.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "dst/error.hpp"
#include "dst/linalg.hpp"

namespace dst {

using linalg::xlogy;

void VariationalState::set_discrete(NodeId id, DiscreteChainPotentials potentials) {
  DiscreteChain& chain = discrete_.at(id);
  chain.stats = forward_backward(potentials);
  chain.potentials = std::move(potentials);
}

void VariationalState::set_discrete_stale(NodeId id, DiscreteChainPotentials potentials) {
  discrete_.at(id).potentials = std::move(potentials);
  current_ = false;
}

void VariationalState::set_continuous(NodeId id, GaussianChainParams params) {
  ContinuousChain chain;
  chain.stats = continuous_moments(params);
  chain.params = std::move(params);
  continuous_.at(id) = std::move(chain);
}

void VariationalState::refresh() {
  for (DiscreteChain& chain : discrete_) chain.stats = forward_backward(chain.potentials);
  for (auto& chain : continuous_)
    if (chain) chain->stats = continuous_moments(chain->params);
  current_ = true;
}

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::VectorXd parent_belief(const VariationalState& state, const Topology& topo, NodeId node, int t) {
  const auto parent = topo.node(node).parent;
  if (!parent) return Eigen::VectorXd::Ones(1);
  return state.discrete(*parent).stats.singleton[t];
}

// Per-switch-state inverses and log-determinants of a leaf's model covariances.
struct LeafCache {
  std::vector<Eigen::MatrixXd> q0_inv, Q_inv, Q_inv_A, At_Q_inv_A;
  std::vector<double> q0_logdet, Q_logdet;
  Eigen::MatrixXd R_inv, Ct_R_inv, Ct_R_inv_C;
  double R_logdet = 0.0;

  LeafCache(const LeafParams& p, NodeId id) {
    const std::string where = "leaf " + std::to_string(id);
    for (std::size_t j = 0; j < p.A.size(); ++j) {
      q0_inv.push_back(linalg::spd_inverse(p.q0[j], "q0 of " + where));
      q0_logdet.push_back(linalg::log_det_spd(p.q0[j], "q0 of " + where));
      Q_inv.push_back(linalg::spd_inverse(p.Q[j], "Q of " + where));
      Q_logdet.push_back(linalg::log_det_spd(p.Q[j], "Q of " + where));
      Q_inv_A.push_back(Q_inv.back() * p.A[j]);
      At_Q_inv_A.push_back(linalg::symmetrize(p.A[j].transpose() * Q_inv_A.back()));
    }
    R_inv = linalg::spd_inverse(p.R, "R of " + where);
    R_logdet = linalg::log_det_spd(p.R, "R of " + where);
    Ct_R_inv = p.C.transpose() * R_inv;
    Ct_R_inv_C = linalg::symmetrize(Ct_R_inv * p.C);
  }
};

// E_Q[log N(x_0 | mu_j, q_j)].
double expected_initial_logpdf(const LeafParams& p, const LeafCache& c, int j, const ContinuousChainStats& s) {
  const Eigen::VectorXd& mu = p.mu0[j];
  const Eigen::VectorXd& m = s.mean[0];
  const Eigen::MatrixXd outer = s.second[0] - m * mu.transpose() - mu * m.transpose() + mu * mu.transpose();
  const double d = static_cast<double>(mu.size());
  return -0.5 * (d * kLog2Pi + c.q0_logdet[j] + (c.q0_inv[j] * outer).trace());
}

// E_Q[log N(x_t | A_j x_{t-1}, Q_j)], t >= 1.
double expected_transition_logpdf(const LeafParams& p, const LeafCache& c, int j, const ContinuousChainStats& s,
                                  int t) {
  const Eigen::MatrixXd& a = p.A[j];
  const Eigen::MatrixXd outer = s.second[t] - a * s.cross[t].transpose() - s.cross[t] * a.transpose() +
                                a * s.second[t - 1] * a.transpose();
  const double d = static_cast<double>(a.rows());
  return -0.5 * (d * kLog2Pi + c.Q_logdet[j] + (c.Q_inv[j] * outer).trace());
}

// E_Q[log N(y_t | C x_t, R)].
double expected_emission_logpdf(const LeafParams& p, const LeafCache& c, const Eigen::VectorXd& y,
                                const ContinuousChainStats& s, int t) {
  const Eigen::VectorXd cm = p.C * s.mean[t];
  const Eigen::MatrixXd outer =
      y * y.transpose() - cm * y.transpose() - y * cm.transpose() + p.C * s.second[t] * p.C.transpose();
  const double d = static_cast<double>(y.size());
  return -0.5 * (d * kLog2Pi + c.R_logdet + (c.R_inv * outer).trace());
}

// Expected log-probability of a node's own discrete chain under its parent's beliefs.
double expected_discrete_logprob(const VariationalState& state, const Model& model, NodeId id) {
  const Topology& topo = model.topology();
  const DiscreteChainStats& s = state.discrete(id).stats;
  const Eigen::MatrixXd& init = model.initial_table(id);
  const TransitionTable& trans = model.transition_table(id);
  const int k = topo.states(id);
  const int kp = topo.parent_states(id);
  double total = 0.0;
  Eigen::VectorXd par = parent_belief(state, topo, id, 0);
  for (int j = 0; j < k; ++j)
    for (int l = 0; l < kp; ++l) total += xlogy(s.singleton[0][j] * par[l], init(j, l));
  for (int t = 1; t <= state.steps(); ++t) {
    par = parent_belief(state, topo, id, t);
    for (int l = 0; l < kp; ++l)
      for (int prev = 0; prev < k; ++prev)
        for (int j = 0; j < k; ++j) total += xlogy(s.pairwise[t](j, prev) * par[l], trans(j, prev, l));
  }
  return total;
}

void check_state_shape(const VariationalState& state, const Model& model) {
  if (state.size() != model.topology().size())
    throw DataError("variational state does not match the model topology");
}

}  // namespace

DiscreteChainPotentials aggregator_potentials(const VariationalState& state, const Model& model, NodeId node) {
  const Topology& topo = model.topology();
  if (topo.is_leaf(node)) throw DataError("node " + std::to_string(node) + " is not an aggregator");
  check_state_shape(state, model);
  const int k = topo.states(node);
  const int kp = topo.parent_states(node);
  const int T = state.steps();
  const AggregatorParams& params = model.aggregator(node);

  DiscreteChainPotentials pot;
  pot.log_init = Eigen::VectorXd::Zero(k);
  pot.log_trans.assign(T + 1, Eigen::MatrixXd());
  const Eigen::VectorXd par0 = parent_belief(state, topo, node, 0);
  for (int j = 0; j < k; ++j)
    for (int l = 0; l < kp; ++l) pot.log_init[j] += xlogy(par0[l], params.initial(j, l));
  for (NodeId child : topo.children(node)) {
    // Each child's conditional table is indexed by this chain's state in its last slot.
    const Eigen::MatrixXd& cinit = model.initial_table(child);
    const Eigen::VectorXd& cs0 = state.discrete(child).stats.singleton[0];
    for (int j = 0; j < k; ++j)
      for (int h = 0; h < topo.states(child); ++h) pot.log_init[j] += xlogy(cs0[h], cinit(h, j));
  }

  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd lt = Eigen::MatrixXd::Zero(k, k);
    const Eigen::VectorXd par = parent_belief(state, topo, node, t);
    for (int prev = 0; prev < k; ++prev)
      for (int j = 0; j < k; ++j)
        for (int l = 0; l < kp; ++l) lt(j, prev) += xlogy(par[l], params.transition(j, prev, l));
    Eigen::VectorXd child_terms = Eigen::VectorXd::Zero(k);
    for (NodeId child : topo.children(node)) {
      const TransitionTable& ctrans = model.transition_table(child);
      const Eigen::MatrixXd& pair = state.discrete(child).stats.pairwise[t];
      const int kc = topo.states(child);
      for (int j = 0; j < k; ++j)
        for (int h = 0; h < kc; ++h)
          for (int i = 0; i < kc; ++i) child_terms[j] += xlogy(pair(h, i), ctrans(h, i, j));
    }
    lt.colwise() += child_terms;
    pot.log_trans[t] = std::move(lt);
  }
  return pot;
}

DiscreteChainPotentials leaf_switch_potentials(const VariationalState& state, const Model& model, NodeId node) {
  const Topology& topo = model.topology();
  if (!topo.is_leaf(node)) throw DataError("node " + std::to_string(node) + " is not a leaf");
  check_state_shape(state, model);
  const int k = topo.states(node);
  const int kp = topo.parent_states(node);
  const int T = state.steps();
  const LeafParams& params = model.leaf(node);
  const LeafCache cache(params, node);
  const ContinuousChainStats& xs = state.continuous(node).stats;

  DiscreteChainPotentials pot;
  pot.log_init = Eigen::VectorXd::Zero(k);
  pot.log_trans.assign(T + 1, Eigen::MatrixXd());
  const Eigen::VectorXd par0 = parent_belief(state, topo, node, 0);
  for (int j = 0; j < k; ++j) {
    for (int l = 0; l < kp; ++l) pot.log_init[j] += xlogy(par0[l], params.initial(j, l));
    pot.log_init[j] += expected_initial_logpdf(params, cache, j, xs);
  }
  for (int t = 1; t <= T; ++t) {
    Eigen::MatrixXd lt = Eigen::MatrixXd::Zero(k, k);
    const Eigen::VectorXd par = parent_belief(state, topo, node, t);
    for (int prev = 0; prev < k; ++prev)
      for (int j = 0; j < k; ++j)
        for (int l = 0; l < kp; ++l) lt(j, prev) += xlogy(par[l], params.transition(j, prev, l));
    for (int j = 0; j < k; ++j) lt.row(j).array() += expected_transition_logpdf(params, cache, j, xs, t);
    pot.log_trans[t] = std::move(lt);
  }
  return pot;
}

GaussianChainParams leaf_gaussian_params(const VariationalState& state, const Model& model, NodeId node,
                                         const ObservationSet& obs, bool use_emissions) {
  const Topology& topo = model.topology();
  if (!topo.is_leaf(node)) throw DataError("node " + std::to_string(node) + " is not a leaf");
  check_state_shape(state, model);
  const int k = topo.states(node);
  const int T = state.steps();
  const int dim = topo.node(node).x_dim;
  const LeafParams& params = model.leaf(node);
  const LeafCache cache(params, node);
  const std::vector<Eigen::VectorXd>& w = state.discrete(node).stats.singleton;
  const LeafSeries* series = nullptr;
  if (use_emissions) {
    if (obs.steps != T) throw DataError("observations length does not match the variational state");
    series = &obs.leaves.at(node);
  }
  auto observed = [&](int t) { return series && series->observed[t]; };

  GaussianChainParams out;
  out.A_hat.assign(T + 1, Eigen::MatrixXd());
  out.B_hat.assign(T + 1, Eigen::VectorXd());
  out.Q_hat.assign(T + 1, Eigen::MatrixXd());
  std::vector<Eigen::MatrixXd> coupling(T + 1);  // sum_j w_t(j) Q_j^{-1} A_j

  // Precision and linear terms still to be absorbed from the step after t.
  auto lookahead = [&](int t, Eigen::MatrixXd& prec, Eigen::VectorXd& lin) {
    if (t >= T) return;
    for (int j = 0; j < k; ++j) prec += w[t + 1][j] * cache.At_Q_inv_A[j];
    prec -= coupling[t + 1].transpose() * out.Q_hat[t + 1] * coupling[t + 1];
    lin += coupling[t + 1].transpose() * out.B_hat[t + 1];
  };

  for (int t = T; t >= 1; --t) {
    Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd lin = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd coup = Eigen::MatrixXd::Zero(dim, dim);
    for (int j = 0; j < k; ++j) {
      prec += w[t][j] * cache.Q_inv[j];
      coup += w[t][j] * cache.Q_inv_A[j];
    }
    if (observed(t)) {
      prec += cache.Ct_R_inv_C;
      lin += cache.Ct_R_inv * series->y.row(t).transpose();
    }
    lookahead(t, prec, lin);
    out.Q_hat[t] = linalg::spd_inverse(prec, "variational precision of leaf " + std::to_string(node) +
                                                 " at t=" + std::to_string(t));
    out.A_hat[t] = out.Q_hat[t] * coup;
    out.B_hat[t] = out.Q_hat[t] * lin;
    coupling[t] = std::move(coup);
  }

  Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd lin = Eigen::VectorXd::Zero(dim);
  for (int j = 0; j < k; ++j) {
    prec += w[0][j] * cache.q0_inv[j];
    lin += w[0][j] * (cache.q0_inv[j] * params.mu0[j]);
  }
  if (observed(0)) {
    prec += cache.Ct_R_inv_C;
    lin += cache.Ct_R_inv * series->y.row(0).transpose();
  }
  lookahead(0, prec, lin);
  out.q_init = linalg::spd_inverse(prec, "variational precision of leaf " + std::to_string(node) + " at t=0");
  out.mu_init = out.q_init * lin;
  return out;
}

void update_aggregator_potentials(VariationalState& state, const Model& model, NodeId node) {
  state.set_discrete(node, aggregator_potentials(state, model, node));
}

void update_leaf_switch_potentials(VariationalState& state, const Model& model, NodeId node) {
  state.set_discrete(node, leaf_switch_potentials(state, model, node));
}

void update_leaf_continuous(VariationalState& state, const Model& model, NodeId node, const ObservationSet& obs) {
  state.set_continuous(node, leaf_gaussian_params(state, model, node, obs, true));
}

double evidence_bound(const Model& model, const VariationalState& state, const ObservationSet& obs) {
  if (!state.current()) throw NumericalError("evidence bound requested on stale variational statistics");
  check_state_shape(state, model);
  const Topology& topo = model.topology();
  if (obs.steps != state.steps()) throw DataError("observations length does not match the variational state");
  double total = 0.0;
  for (NodeId id : topo.preorder()) {
    const DiscreteChain& chain = state.discrete(id);
    total += expected_discrete_logprob(state, model, id) + chain.stats.entropy;
    if (!topo.is_leaf(id)) continue;

    const LeafParams& params = model.leaf(id);
    const LeafCache cache(params, id);
    const ContinuousChain& cont = state.continuous(id);
    const ContinuousChainStats& xs = cont.stats;
    const std::vector<Eigen::VectorXd>& w = chain.stats.singleton;
    const LeafSeries& series = obs.leaves.at(id);
    for (int j = 0; j < topo.states(id); ++j) {
      if (w[0][j] > 0.0) total += w[0][j] * expected_initial_logpdf(params, cache, j, xs);
      for (int t = 1; t <= state.steps(); ++t)
        if (w[t][j] > 0.0) total += w[t][j] * expected_transition_logpdf(params, cache, j, xs, t);
    }
    for (int t = 0; t <= state.steps(); ++t)
      if (series.observed[t]) total += expected_emission_logpdf(params, cache, series.y.row(t).transpose(), xs, t);
    total += xs.entropy;
  }
  return total;
}

VariationalState init_variational(const Model& model, const ObservationSet& obs, std::uint64_t seed) {
  const Topology& topo = model.topology();
  check_observations(topo, obs);
  const int T = obs.steps;
  VariationalState state(T, topo.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);

  for (NodeId id = 0; id < topo.size(); ++id) {
    const int k = topo.states(id);
    const int kp = topo.parent_states(id);
    const Eigen::MatrixXd& init = model.initial_table(id);
    const TransitionTable& trans = model.transition_table(id);
    DiscreteChainPotentials pot;
    pot.log_init.resize(k);
    pot.log_trans.assign(T + 1, Eigen::MatrixXd());
    for (int j = 0; j < k; ++j) pot.log_init[j] = std::log(init.row(j).mean()) + jitter(rng);
    for (int t = 1; t <= T; ++t) {
      Eigen::MatrixXd lt(k, k);
      for (int prev = 0; prev < k; ++prev)
        for (int j = 0; j < k; ++j) {
          double avg = 0.0;
          for (int l = 0; l < kp; ++l) avg += trans(j, prev, l);
          lt(j, prev) = std::log(avg / kp) + jitter(rng);
        }
      pot.log_trans[t] = std::move(lt);
    }
    state.set_discrete(id, std::move(pot));
  }
  for (NodeId id : topo.leaves()) state.set_continuous(id, leaf_gaussian_params(state, model, id, obs, false));
  state.set_bound(evidence_bound(model, state, obs));
  return state;
}

namespace {

void check_monotone(double before, double after, const char* what) {
  if (after < before - 1e-6 * (1.0 + std::abs(before)))
    throw NumericalError(std::string("mean-field monotonicity violated (") + what + ")");
}

}  // namespace

VariationalFit fit_variational(const Model& model, const ObservationSet& obs, const InferenceOptions& options,
                               std::uint64_t seed, const VariationalState* warm) {
  if (!(options.tol > 0.0)) throw Error(ErrorKind::Usage, "inference tolerance must be positive");
  if (options.max_sweeps < 1) throw Error(ErrorKind::Usage, "max_sweeps must be at least 1");
  const Topology& topo = model.topology();
  check_observations(topo, obs);

  VariationalFit fit;
  if (warm) {
    if (warm->steps() != obs.steps || warm->size() != topo.size())
      throw DataError("warm-start state does not match the observations");
    fit.state = *warm;
    if (!fit.state.current()) fit.state.refresh();
  } else {
    fit.state = init_variational(model, obs, seed);
  }

  double last = evidence_bound(model, fit.state, obs);
  fit.trace.push_back(last);
  if (options.track_updates) fit.update_trace.push_back(last);
  auto after_update = [&] {
    if (!options.track_updates) return;
    const double b = evidence_bound(model, fit.state, obs);
    check_monotone(fit.update_trace.back(), b, "chain update");
    fit.update_trace.push_back(b);
  };

  const std::vector<NodeId> leaves = topo.leaves();
  const std::vector<NodeId> aggregators = topo.aggregators_deepest_first();
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    for (NodeId leaf : leaves) {
      for (int it = 0; it < options.inner_iterations; ++it) {
        update_leaf_continuous(fit.state, model, leaf, obs);
        after_update();
        update_leaf_switch_potentials(fit.state, model, leaf);
        after_update();
      }
    }
    for (NodeId agg : aggregators) {
      for (int it = 0; it < options.inner_iterations; ++it) {
        update_aggregator_potentials(fit.state, model, agg);
        after_update();
      }
    }
    const double b = evidence_bound(model, fit.state, obs);
    check_monotone(last, b, "sweep");
    fit.trace.push_back(b);
    ++fit.sweeps;
    const double gain = b - last;
    last = b;
    if (gain < options.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.state.set_bound(last);
  return fit;
}

namespace {

nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

std::string dump_state_json(const VariationalState& state) {
  nlohmann::json doc;
  doc["T"] = state.steps();
  doc["bound"] = state.bound();
  doc["current"] = state.current();
  nlohmann::json chains = nlohmann::json::object();
  for (NodeId id = 0; id < state.size(); ++id) {
    const DiscreteChainStats& s = state.discrete(id).stats;
    nlohmann::json node;
    nlohmann::json singleton = nlohmann::json::array();
    for (const auto& v : s.singleton) singleton.push_back(to_json(v));
    nlohmann::json pairwise = nlohmann::json::array();
    for (std::size_t t = 1; t < s.pairwise.size(); ++t) pairwise.push_back(to_json(s.pairwise[t]));
    node["singleton"] = std::move(singleton);
    node["pairwise"] = std::move(pairwise);
    node["entropy"] = s.entropy;
    node["log_partition"] = s.log_partition;
    if (state.has_continuous(id)) {
      const ContinuousChainStats& xs = state.continuous(id).stats;
      nlohmann::json mean = nlohmann::json::array(), second = nlohmann::json::array(),
                     cross = nlohmann::json::array();
      for (const auto& m : xs.mean) mean.push_back(to_json(m));
      for (const auto& m : xs.second) second.push_back(to_json(m));
      for (std::size_t t = 1; t < xs.cross.size(); ++t) cross.push_back(to_json(xs.cross[t]));
      node["x_mean"] = std::move(mean);
      node["x_second"] = std::move(second);
      node["x_cross"] = std::move(cross);
      node["x_entropy"] = xs.entropy;
    }
    chains[std::to_string(id)] = std::move(node);
  }
  doc["chains"] = std::move(chains);
  return doc.dump(2);
}

}  // namespace dst
