#include "dst/model.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "dst/error.hpp"
#include "dst/linalg.hpp"

namespace dst {

namespace {

std::string node_path(NodeId id, const std::string& field) {
  return "params." + std::to_string(id) + "." + field;
}

void check_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream msg;
    msg << path << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
    throw DataError(msg.str());
  }
  if (!m.allFinite()) throw DataError(path + ": non-finite entry");
}

void check_initial(const Eigen::MatrixXd& initial, int k, int kp, NodeId id, const std::string& name,
                   double tol) {
  check_shape(initial, k, kp, node_path(id, name));
  for (int l = 0; l < kp; ++l) {
    if ((initial.col(l).array() < 0.0).any())
      throw DataError(node_path(id, name) + ": negative probability in column " + std::to_string(l));
    const double sum = initial.col(l).sum();
    if (std::abs(sum - 1.0) > tol) {
      std::ostringstream msg;
      msg << node_path(id, name) << ": column " << l << " sums to " << sum << ", not 1";
      throw DataError(msg.str());
    }
  }
}

void check_transition(const TransitionTable& table, int k, int kp, NodeId id, const std::string& name,
                      double tol) {
  if (table.states() != k || table.parent_states() != kp) {
    std::ostringstream msg;
    msg << node_path(id, name) << ": expected " << k << "x" << k << "x" << kp << " table, got "
        << table.states() << "x" << table.states() << "x" << table.parent_states();
    throw DataError(msg.str());
  }
  for (int l = 0; l < kp; ++l) {
    for (int prev = 0; prev < k; ++prev) {
      double sum = 0.0;
      for (int j = 0; j < k; ++j) {
        const double p = table(j, prev, l);
        if (!std::isfinite(p) || p < 0.0)
          throw DataError(node_path(id, name) + ": invalid probability at [" + std::to_string(j) + "][" +
                          std::to_string(prev) + "][" + std::to_string(l) + "]");
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) {
        std::ostringstream msg;
        msg << node_path(id, name) << ": slice [*][" << prev << "][" << l << "] sums to " << sum << ", not 1";
        throw DataError(msg.str());
      }
    }
  }
}

void check_covariance(const Eigen::MatrixXd& m, Eigen::Index dim, const std::string& path) {
  check_shape(m, dim, dim, path);
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) throw DataError(path + ": not symmetric");
  if (linalg::min_eigenvalue(m) <= 0.0) throw DataError(path + ": not positive definite");
}

}  // namespace

void check_params(const Topology& topology, const std::vector<NodeParams>& params, double table_tol) {
  if (params.size() != topology.size())
    throw DataError("params: expected " + std::to_string(topology.size()) + " nodes, got " +
                    std::to_string(params.size()));
  for (NodeId id = 0; id < topology.size(); ++id) {
    const NodeSpec& spec = topology.node(id);
    const int k = spec.num_states;
    const int kp = topology.parent_states(id);
    if (spec.kind == NodeKind::Aggregator) {
      const auto* agg = std::get_if<AggregatorParams>(&params[id]);
      if (!agg) throw DataError(node_path(id, "") + ": expected aggregator parameters");
      check_initial(agg->initial, k, kp, id, "phi0", table_tol);
      check_transition(agg->transition, k, kp, id, "phi", table_tol);
      continue;
    }
    const auto* leaf = std::get_if<LeafParams>(&params[id]);
    if (!leaf) throw DataError(node_path(id, "") + ": expected leaf parameters");
    check_initial(leaf->initial, k, kp, id, "psi0", table_tol);
    check_transition(leaf->transition, k, kp, id, "psi", table_tol);
    const auto count = static_cast<std::size_t>(k);
    if (leaf->mu0.size() != count || leaf->q0.size() != count || leaf->A.size() != count ||
        leaf->Q.size() != count)
      throw DataError(node_path(id, "") + ": per-state parameter lists must have " + std::to_string(k) +
                      " entries");
    for (int j = 0; j < k; ++j) {
      const std::string idx = "[" + std::to_string(j) + "]";
      if (leaf->mu0[j].size() != spec.x_dim || !leaf->mu0[j].allFinite())
        throw DataError(node_path(id, "mu0" + idx) + ": expected finite vector of length " +
                        std::to_string(spec.x_dim));
      check_covariance(leaf->q0[j], spec.x_dim, node_path(id, "q0" + idx));
      check_shape(leaf->A[j], spec.x_dim, spec.x_dim, node_path(id, "A" + idx));
      check_covariance(leaf->Q[j], spec.x_dim, node_path(id, "Q" + idx));
    }
    check_shape(leaf->C, spec.y_dim, spec.x_dim, node_path(id, "C"));
    check_covariance(leaf->R, spec.y_dim, node_path(id, "R"));
  }
}

Model::Model(Topology topology, std::vector<NodeParams> params, double table_tol)
    : topology_(std::move(topology)), params_(std::move(params)) {
  check_params(topology_, params_, table_tol);
}

const Eigen::MatrixXd& Model::initial_table(NodeId id) const {
  return std::visit([](const auto& p) -> const Eigen::MatrixXd& { return p.initial; }, params_.at(id));
}

const TransitionTable& Model::transition_table(NodeId id) const {
  return std::visit([](const auto& p) -> const TransitionTable& { return p.transition; }, params_.at(id));
}

void check_observations(const Topology& topology, const ObservationSet& obs) {
  if (obs.steps < 0) throw DataError("observations: T must be nonnegative");
  const auto rows = static_cast<Eigen::Index>(obs.steps) + 1;
  for (NodeId id : topology.leaves()) {
    const auto it = obs.leaves.find(id);
    const std::string path = "leaves." + std::to_string(id);
    if (it == obs.leaves.end()) throw DataError(path + ": missing leaf sequence");
    const LeafSeries& series = it->second;
    if (series.y.rows() != rows || series.y.cols() != topology.node(id).y_dim) {
      std::ostringstream msg;
      msg << path << ".y: expected " << rows << "x" << topology.node(id).y_dim << ", got " << series.y.rows()
          << "x" << series.y.cols();
      throw DataError(msg.str());
    }
    if (series.observed.size() != static_cast<std::size_t>(rows))
      throw DataError(path + ".observed: expected length " + std::to_string(rows));
    for (Eigen::Index t = 0; t < rows; ++t)
      if (series.observed[t] && !series.y.row(t).allFinite())
        throw DataError(path + ".y: non-finite observed value at t=" + std::to_string(t));
  }
  for (const auto& [id, series] : obs.leaves) {
    if (id >= topology.size() || !topology.is_leaf(id))
      throw DataError("leaves." + std::to_string(id) + ": not a leaf of the topology");
  }
}

double complete_loglik(const Model& model, const HiddenAssignment& assignment, const ObservationSet& obs) {
  const Topology& topo = model.topology();
  check_observations(topo, obs);
  const int T = obs.steps;
  if (assignment.states.size() != topo.size()) throw DataError("assignment.s: wrong number of nodes");
  for (NodeId id = 0; id < topo.size(); ++id) {
    const auto& s = assignment.states[id];
    if (s.size() != static_cast<std::size_t>(T + 1))
      throw DataError("assignment.s." + std::to_string(id) + ": expected length " + std::to_string(T + 1));
    for (int v : s)
      if (v < 0 || v >= topo.states(id))
        throw DataError("assignment.s." + std::to_string(id) + ": state out of range");
  }

  double total = 0.0;
  for (NodeId id = 0; id < topo.size(); ++id) {
    const auto& s = assignment.states[id];
    const auto parent = topo.node(id).parent;
    auto parent_at = [&](int t) { return parent ? assignment.states[*parent][t] : 0; };
    const Eigen::MatrixXd& init = model.initial_table(id);
    const TransitionTable& trans = model.transition_table(id);
    total += linalg::xlogy(1.0, init(s[0], parent_at(0)));
    for (int t = 1; t <= T; ++t) total += linalg::xlogy(1.0, trans(s[t], s[t - 1], parent_at(t)));
    if (!topo.is_leaf(id)) continue;

    const LeafParams& leaf = model.leaf(id);
    const auto xit = assignment.x.find(id);
    if (xit == assignment.x.end()) throw DataError("assignment.x." + std::to_string(id) + ": missing");
    const Eigen::MatrixXd& x = xit->second;
    if (x.rows() != T + 1 || x.cols() != topo.node(id).x_dim)
      throw DataError("assignment.x." + std::to_string(id) + ": wrong shape");
    const LeafSeries& series = obs.leaves.at(id);
    total += linalg::log_normal(x.row(0).transpose(), leaf.mu0[s[0]], leaf.q0[s[0]]);
    for (int t = 1; t <= T; ++t)
      total += linalg::log_normal(x.row(t).transpose(), leaf.A[s[t]] * x.row(t - 1).transpose(), leaf.Q[s[t]]);
    for (int t = 0; t <= T; ++t)
      if (series.observed[t])
        total += linalg::log_normal(series.y.row(t).transpose(), leaf.C * x.row(t).transpose(), leaf.R);
  }
  return total;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  int categorical(const Eigen::Ref<const Eigen::VectorXd>& probs) {
    const double u = uniform_(rng_);
    double acc = 0.0;
    int last_positive = 0;
    for (Eigen::Index j = 0; j < probs.size(); ++j) {
      if (probs[j] > 0.0) last_positive = static_cast<int>(j);
      acc += probs[j];
      if (u < acc && probs[j] > 0.0) return static_cast<int>(j);
    }
    return last_positive;
  }

  Eigen::VectorXd gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const std::string& what) {
    Eigen::LLT<Eigen::MatrixXd> llt(linalg::symmetrize(cov));
    if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite at draw: " + what);
    Eigen::VectorXd z(mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal_(rng_);
    return mean + llt.matrixL() * z;
  }

 private:
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace

std::pair<HiddenAssignment, ObservationSet> sample_sequence(const Model& model, int steps, std::uint64_t seed) {
  if (steps < 0) throw DataError("sample: T must be nonnegative");
  const Topology& topo = model.topology();
  Sampler sampler(seed);
  HiddenAssignment hidden;
  ObservationSet obs;
  obs.steps = steps;
  hidden.states.assign(topo.size(), std::vector<int>(steps + 1, 0));

  for (NodeId id : topo.preorder()) {
    auto& s = hidden.states[id];
    const auto parent = topo.node(id).parent;
    auto parent_at = [&](int t) { return parent ? hidden.states[*parent][t] : 0; };
    const Eigen::MatrixXd& init = model.initial_table(id);
    const TransitionTable& trans = model.transition_table(id);
    const int k = topo.states(id);
    const bool leaf = topo.is_leaf(id);
    const LeafParams* lp = leaf ? &model.leaf(id) : nullptr;
    Eigen::MatrixXd x;
    LeafSeries series;
    if (leaf) {
      x.resize(steps + 1, topo.node(id).x_dim);
      series.y.resize(steps + 1, topo.node(id).y_dim);
      series.observed.assign(steps + 1, 1);
    }
    Eigen::VectorXd column(k);
    for (int t = 0; t <= steps; ++t) {
      if (t == 0) {
        s[0] = sampler.categorical(init.col(parent_at(0)));
      } else {
        for (int j = 0; j < k; ++j) column[j] = trans(j, s[t - 1], parent_at(t));
        s[t] = sampler.categorical(column);
      }
      if (!leaf) continue;
      const std::string where = "node " + std::to_string(id) + " state " + std::to_string(s[t]);
      if (t == 0)
        x.row(0) = sampler.gaussian(lp->mu0[s[0]], lp->q0[s[0]], "q0 of " + where).transpose();
      else
        x.row(t) = sampler.gaussian(lp->A[s[t]] * x.row(t - 1).transpose(), lp->Q[s[t]], "Q of " + where)
                       .transpose();
      series.y.row(t) =
          sampler.gaussian(lp->C * x.row(t).transpose(), lp->R, "R of node " + std::to_string(id)).transpose();
    }
    if (leaf) {
      hidden.x.emplace(id, std::move(x));
      obs.leaves.emplace(id, std::move(series));
    }
  }
  return {std::move(hidden), std::move(obs)};
}

}  // namespace dst
