#include "dst/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "dst/error.hpp"
#include "dst/linalg.hpp"

namespace dst {

namespace {

constexpr double kMinStateWeight = 1e-8;

Eigen::VectorXd parent_singleton(const VariationalState& state, const Topology& topo, NodeId id, int t) {
  const auto parent = topo.node(id).parent;
  if (!parent) return Eigen::VectorXd::Ones(1);
  return state.discrete(*parent).stats.singleton[t];
}

void normalize_columns(Eigen::MatrixXd& counts, const Eigen::MatrixXd& fallback) {
  for (Eigen::Index l = 0; l < counts.cols(); ++l) {
    const double total = counts.col(l).sum();
    if (total > 0.0 && std::isfinite(total))
      counts.col(l) /= total;
    else
      counts.col(l) = fallback.col(l);
  }
}

void normalize_slices(TransitionTable& counts, const TransitionTable& fallback) {
  const int k = counts.states();
  for (int l = 0; l < counts.parent_states(); ++l)
    for (int prev = 0; prev < k; ++prev) {
      double total = 0.0;
      for (int j = 0; j < k; ++j) total += counts(j, prev, l);
      for (int j = 0; j < k; ++j)
        counts(j, prev, l) = total > 0.0 && std::isfinite(total) ? counts(j, prev, l) / total : fallback(j, prev, l);
    }
}

Eigen::MatrixXd solve_right(const Eigen::MatrixXd& numer, const Eigen::MatrixXd& normal, const std::string& what) {
  // numer * normal^{-1} for a symmetric positive-definite normal matrix.
  const Eigen::MatrixXd sym = linalg::symmetrize(normal);
  const double scale = std::max(1.0, sym.diagonal().cwiseAbs().maxCoeff());
  if (!sym.allFinite() || linalg::min_eigenvalue(sym) <= linalg::kMinEigenvalue * scale)
    throw NumericalError("singular regression normal matrix: " + what);
  return sym.llt().solve(numer.transpose()).transpose();
}

void uniform_jitter(Eigen::MatrixXd& table, std::mt19937_64& rng, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  for (Eigen::Index l = 0; l < table.cols(); ++l)
    for (Eigen::Index j = 0; j < table.rows(); ++j) table(j, l) = std::exp(u(rng));
  for (Eigen::Index l = 0; l < table.cols(); ++l) table.col(l) /= table.col(l).sum();
}

void uniform_jitter(TransitionTable& table, std::mt19937_64& rng, double half_width) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  const int k = table.states();
  for (int l = 0; l < table.parent_states(); ++l)
    for (int prev = 0; prev < k; ++prev) {
      double total = 0.0;
      for (int j = 0; j < k; ++j) total += table(j, prev, l) = std::exp(u(rng));
      for (int j = 0; j < k; ++j) table(j, prev, l) /= total;
    }
}

// One observed row of the concatenated training data of a leaf.
struct RowRef {
  std::size_t sequence;
  int t;
};

}  // namespace

void check_config(const EmConfig& c) {
  if (!(c.e_tol > 0.0) || !(c.em_tol > 0.0)) throw Error(ErrorKind::Usage, "tolerances must be positive");
  if (c.max_em_iters < 0) throw Error(ErrorKind::Usage, "max_em_iters must be nonnegative");
  if (c.max_sweeps < 1) throw Error(ErrorKind::Usage, "max_sweeps must be at least 1");
  if (!(c.eta_init >= 1.0) || !(c.eta_grow > 1.0) || !(c.eta_shrink > 0.0 && c.eta_shrink < 1.0))
    throw Error(ErrorKind::Usage, "over-relaxation schedule requires eta_init >= 1, eta_grow > 1 > eta_shrink > 0");
  if (!(c.covariance_floor > 0.0)) throw Error(ErrorKind::Usage, "covariance floor must be positive");
}

double data_variance_scale(const Dataset& data) {
  double total = 0.0;
  int dims = 0;
  std::map<NodeId, std::vector<Eigen::VectorXd>> rows;
  for (const ObservationSet& obs : data.sequences)
    for (const auto& [id, series] : obs.leaves)
      for (Eigen::Index t = 0; t < series.y.rows(); ++t)
        if (series.observed[t]) rows[id].push_back(series.y.row(t).transpose());
  for (const auto& [id, ys] : rows) {
    if (ys.size() < 2) continue;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(ys.front().size());
    for (const auto& y : ys) mean += y;
    mean /= static_cast<double>(ys.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(mean.size());
    for (const auto& y : ys) var += (y - mean).cwiseAbs2();
    var /= static_cast<double>(ys.size());
    total += var.sum();
    dims += static_cast<int>(var.size());
  }
  const double scale = dims > 0 ? total / dims : 0.0;
  return scale > 0.0 && std::isfinite(scale) ? scale : 1.0;
}

Model initialize_params(const Topology& topology, const Dataset& data, std::uint64_t seed, double relative_floor) {
  if (data.sequences.empty()) throw DataError("initialization needs at least one sequence");
  for (const ObservationSet& obs : data.sequences) check_observations(topology, obs);
  const double floor = relative_floor * data_variance_scale(data);
  std::mt19937_64 rng(seed);

  std::vector<NodeParams> params;
  for (NodeId id = 0; id < topology.size(); ++id) {
    const int k = topology.states(id);
    const int kp = topology.parent_states(id);
    Eigen::MatrixXd initial(k, kp);
    TransitionTable transition(k, kp);
    uniform_jitter(initial, rng, 0.05);
    uniform_jitter(transition, rng, 0.05);
    if (!topology.is_leaf(id)) {
      params.emplace_back(AggregatorParams{std::move(initial), std::move(transition)});
      continue;
    }

    const int xd = topology.node(id).x_dim;
    const int yd = topology.node(id).y_dim;
    const std::string leaf_name = "leaf " + std::to_string(id);
    std::vector<RowRef> rows;
    for (std::size_t s = 0; s < data.sequences.size(); ++s) {
      const LeafSeries& series = data.sequences[s].leaves.at(id);
      for (int t = 0; t <= data.sequences[s].steps; ++t)
        if (series.observed[t]) rows.push_back({s, t});
    }
    if (rows.size() < static_cast<std::size_t>(k))
      throw DataError(leaf_name + ": fewer observed steps than switch states");
    auto y_at = [&](const RowRef& r) -> Eigen::VectorXd {
      return data.sequences[r.sequence].leaves.at(id).y.row(r.t).transpose();
    };

    // Continuous-state proxy: x = y when dimensions agree, principal
    // directions when x is smaller, delay embedding when x is larger.
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(yd, xd);
    Eigen::MatrixXd project;  // x = project * y (xd < yd)
    if (xd <= yd) {
      if (xd == yd) {
        C.setIdentity();
      } else {
        Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(yd, yd);
        for (const RowRef& r : rows) moment += y_at(r) * y_at(r).transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(moment / static_cast<double>(rows.size()));
        C = eig.eigenvectors().rightCols(xd).rowwise().reverse();
      }
      project = C.transpose();
    } else {
      C.leftCols(yd).setIdentity();
    }
    std::vector<Eigen::VectorXd> proxy(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (xd <= yd) {
        proxy[r] = project * y_at(rows[r]);
        continue;
      }
      Eigen::VectorXd x(xd);
      std::size_t src = r;
      for (int filled = 0; filled < xd; filled += yd) {
        const int take = std::min(yd, xd - filled);
        x.segment(filled, take) = y_at(rows[src]).head(take);
        if (src > 0 && rows[src - 1].sequence == rows[src].sequence) --src;
      }
      proxy[r] = std::move(x);
    }

    LeafParams leaf;
    leaf.initial = std::move(initial);
    leaf.transition = std::move(transition);
    const std::size_t n = rows.size();
    for (int j = 0; j < k; ++j) {
      const std::size_t begin = j * n / k;
      const std::size_t end = (j + 1) * n / k;
      const std::string where = leaf_name + " state " + std::to_string(j);
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(xd);
      for (std::size_t r = begin; r < end; ++r) mean += proxy[r];
      mean /= static_cast<double>(end - begin);
      Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(xd, xd);
      double power = 0.0;
      for (std::size_t r = begin; r < end; ++r) {
        cov += (proxy[r] - mean) * (proxy[r] - mean).transpose();
        power += proxy[r].squaredNorm();
      }
      cov /= static_cast<double>(end - begin);
      power /= static_cast<double>(end - begin);
      if (linalg::min_eigenvalue(cov) <= 1e-12 * (1.0 + power))
        throw DataError("degenerate regression for " + where + ": proxy data has zero variance");

      Eigen::MatrixXd sxx = Eigen::MatrixXd::Zero(xd, xd);
      Eigen::MatrixXd sxy = Eigen::MatrixXd::Zero(xd, xd);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t r = begin + 1; r < end; ++r) {
        if (rows[r].sequence != rows[r - 1].sequence || rows[r].t != rows[r - 1].t + 1) continue;
        pairs.emplace_back(r - 1, r);
        sxx += proxy[r - 1] * proxy[r - 1].transpose();
        sxy += proxy[r] * proxy[r - 1].transpose();
      }
      if (pairs.size() < static_cast<std::size_t>(xd + 1))
        throw DataError("subset too short for regression: " + where + " has " + std::to_string(pairs.size()) +
                        " consecutive pairs");
      Eigen::MatrixXd a;
      try {
        a = solve_right(sxy, sxx, where);
      } catch (const NumericalError& e) {
        throw DataError(std::string("degenerate regression: ") + e.what());
      }
      Eigen::MatrixXd q = Eigen::MatrixXd::Zero(xd, xd);
      for (const auto& [prev, cur] : pairs) {
        const Eigen::VectorXd e = proxy[cur] - a * proxy[prev];
        q += e * e.transpose();
      }
      q /= static_cast<double>(pairs.size());
      leaf.mu0.push_back(mean);
      leaf.q0.push_back(linalg::floor_eigenvalues(cov, floor));
      leaf.A.push_back(std::move(a));
      leaf.Q.push_back(linalg::floor_eigenvalues(q, floor));
    }

    // Emission noise: projection residual plus a tenth of the per-dimension
    // data variance, so the initial model leaves room for observation noise.
    Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(yd, yd);
    Eigen::VectorXd ymean = Eigen::VectorXd::Zero(yd);
    for (std::size_t r = 0; r < n; ++r) {
      const Eigen::VectorXd y = y_at(rows[r]);
      const Eigen::VectorXd e = y - C * proxy[r];
      resid += e * e.transpose();
      ymean += y;
    }
    resid /= static_cast<double>(n);
    ymean /= static_cast<double>(n);
    Eigen::VectorXd yvar = Eigen::VectorXd::Zero(yd);
    for (std::size_t r = 0; r < n; ++r) yvar += (y_at(rows[r]) - ymean).cwiseAbs2();
    yvar /= static_cast<double>(n);
    leaf.C = std::move(C);
    leaf.R = linalg::floor_eigenvalues(resid + Eigen::MatrixXd(0.1 * yvar.asDiagonal()), floor);
    params.emplace_back(std::move(leaf));
  }
  return Model(topology, std::move(params));
}

Model m_step(const Model& model, std::span<const VariationalState> states, const Dataset& data, double floor,
             MStepNotes* notes) {
  const Topology& topo = model.topology();
  if (states.size() != data.sequences.size()) throw DataError("m_step: one variational state per sequence required");
  if (!(floor > 0.0)) throw Error(ErrorKind::Usage, "covariance floor must be positive");
  std::vector<NodeParams> out;
  for (NodeId id = 0; id < topo.size(); ++id) {
    const int k = topo.states(id);
    const int kp = topo.parent_states(id);
    Eigen::MatrixXd init_counts = Eigen::MatrixXd::Zero(k, kp);
    TransitionTable trans_counts(k, kp, 0.0);
    for (const VariationalState& state : states) {
      const DiscreteChainStats& s = state.discrete(id).stats;
      init_counts += s.singleton[0] * parent_singleton(state, topo, id, 0).transpose();
      for (int t = 1; t <= state.steps(); ++t) {
        const Eigen::VectorXd par = parent_singleton(state, topo, id, t);
        for (int l = 0; l < kp; ++l)
          for (int prev = 0; prev < k; ++prev)
            for (int j = 0; j < k; ++j) trans_counts(j, prev, l) += s.pairwise[t](j, prev) * par[l];
      }
    }
    normalize_columns(init_counts, model.initial_table(id));
    normalize_slices(trans_counts, model.transition_table(id));
    if (!topo.is_leaf(id)) {
      out.emplace_back(AggregatorParams{std::move(init_counts), std::move(trans_counts)});
      continue;
    }

    const LeafParams& old = model.leaf(id);
    LeafParams leaf = old;
    leaf.initial = std::move(init_counts);
    leaf.transition = std::move(trans_counts);
    const int xd = topo.node(id).x_dim;
    const int yd = topo.node(id).y_dim;
    const std::string leaf_name = "leaf " + std::to_string(id);

    for (int j = 0; j < k; ++j) {
      double w0 = 0.0, w = 0.0;
      Eigen::VectorXd m0 = Eigen::VectorXd::Zero(xd);
      Eigen::MatrixXd s0 = Eigen::MatrixXd::Zero(xd, xd);
      Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(xd, xd);
      Eigen::MatrixXd prev_second = Eigen::MatrixXd::Zero(xd, xd);
      Eigen::MatrixXd cur_second = Eigen::MatrixXd::Zero(xd, xd);
      for (const VariationalState& state : states) {
        const Eigen::VectorXd& s0w = state.discrete(id).stats.singleton[0];
        const ContinuousChainStats& xs = state.continuous(id).stats;
        w0 += s0w[j];
        m0 += s0w[j] * xs.mean[0];
        s0 += s0w[j] * xs.second[0];
        for (int t = 1; t <= state.steps(); ++t) {
          const double wt = state.discrete(id).stats.singleton[t][j];
          w += wt;
          cross += wt * xs.cross[t];
          prev_second += wt * xs.second[t - 1];
          cur_second += wt * xs.second[t];
        }
      }
      const std::string where = leaf_name + " state " + std::to_string(j);
      bool kept = false;
      if (w0 >= kMinStateWeight) {
        const Eigen::VectorXd mu = m0 / w0;
        leaf.mu0[j] = mu;
        leaf.q0[j] = linalg::floor_eigenvalues(s0 / w0 - mu * mu.transpose(), floor);
      } else {
        kept = true;
      }
      if (w >= kMinStateWeight) {
        const Eigen::MatrixXd a = solve_right(cross, prev_second, where);
        const Eigen::MatrixXd q =
            (cur_second - a * cross.transpose() - cross * a.transpose() + a * prev_second * a.transpose()) / w;
        leaf.A[j] = a;
        leaf.Q[j] = linalg::floor_eigenvalues(q, floor);
      } else {
        kept = true;
      }
      if (kept && notes) notes->kept_states.emplace_back(id, j);
    }

    Eigen::MatrixXd yx = Eigen::MatrixXd::Zero(yd, xd);
    Eigen::MatrixXd xx = Eigen::MatrixXd::Zero(xd, xd);
    Eigen::MatrixXd yy = Eigen::MatrixXd::Zero(yd, yd);
    double count = 0.0;
    for (std::size_t s = 0; s < states.size(); ++s) {
      const LeafSeries& series = data.sequences[s].leaves.at(id);
      const ContinuousChainStats& xs = states[s].continuous(id).stats;
      for (int t = 0; t <= states[s].steps(); ++t) {
        if (!series.observed[t]) continue;
        const Eigen::VectorXd y = series.y.row(t).transpose();
        yx += y * xs.mean[t].transpose();
        xx += xs.second[t];
        yy += y * y.transpose();
        count += 1.0;
      }
    }
    if (count > 0.0) {
      const Eigen::MatrixXd c = solve_right(yx, xx, leaf_name + " emission");
      const Eigen::MatrixXd r =
          (yy - c * yx.transpose() - yx * c.transpose() + c * xx * c.transpose()) / count;
      leaf.C = c;
      leaf.R = linalg::floor_eigenvalues(r, floor);
    }
    out.emplace_back(std::move(leaf));
  }
  return Model(topo, std::move(out));
}

namespace {

double blend_probability(double prev, double proposed, double eta) {
  if (prev <= 0.0 || proposed <= 0.0) return proposed;
  return std::exp(std::log(prev) + eta * (std::log(proposed) - std::log(prev)));
}

template <class M>
M blend(const M& prev, const M& proposed, double eta) {
  return prev + eta * (proposed - prev);
}

}  // namespace

Model overrelaxed_update(const Model& prev, const Model& proposed, double eta, double floor) {
  const Topology& topo = proposed.topology();
  if (!(prev.topology() == topo)) throw DataError("over-relaxation requires models with the same topology");
  if (!(eta >= 1.0)) throw Error(ErrorKind::Usage, "over-relaxation step must be >= 1");
  std::vector<NodeParams> out;
  for (NodeId id = 0; id < topo.size(); ++id) {
    const int k = topo.states(id);
    const int kp = topo.parent_states(id);
    const Eigen::MatrixXd& pi = prev.initial_table(id);
    const Eigen::MatrixXd& qi = proposed.initial_table(id);
    Eigen::MatrixXd init(k, kp);
    for (int l = 0; l < kp; ++l)
      for (int j = 0; j < k; ++j) init(j, l) = blend_probability(pi(j, l), qi(j, l), eta);
    normalize_columns(init, qi);
    const TransitionTable& pt = prev.transition_table(id);
    const TransitionTable& qt = proposed.transition_table(id);
    TransitionTable trans(k, kp);
    for (int l = 0; l < kp; ++l)
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < k; ++j) trans(j, p, l) = blend_probability(pt(j, p, l), qt(j, p, l), eta);
    normalize_slices(trans, qt);
    if (!topo.is_leaf(id)) {
      out.emplace_back(AggregatorParams{std::move(init), std::move(trans)});
      continue;
    }
    const LeafParams& a = prev.leaf(id);
    const LeafParams& b = proposed.leaf(id);
    LeafParams leaf;
    leaf.initial = std::move(init);
    leaf.transition = std::move(trans);
    for (int j = 0; j < k; ++j) {
      leaf.mu0.push_back(blend(a.mu0[j], b.mu0[j], eta));
      leaf.q0.push_back(linalg::floor_eigenvalues(blend(a.q0[j], b.q0[j], eta), floor));
      leaf.A.push_back(blend(a.A[j], b.A[j], eta));
      leaf.Q.push_back(linalg::floor_eigenvalues(blend(a.Q[j], b.Q[j], eta), floor));
    }
    leaf.C = blend(a.C, b.C, eta);
    leaf.R = linalg::floor_eigenvalues(blend(a.R, b.R, eta), floor);
    out.emplace_back(std::move(leaf));
  }
  return Model(topo, std::move(out));
}

namespace {

struct EStep {
  std::vector<VariationalState> states;
  double total = 0.0;
};

EStep run_estep(const Model& model, const Dataset& data, const EmConfig& config,
                const std::vector<VariationalState>* warm) {
  InferenceOptions options;
  options.tol = config.e_tol;
  options.max_sweeps = config.max_sweeps;
  EStep out;
  for (std::size_t s = 0; s < data.sequences.size(); ++s) {
    VariationalFit fit = fit_variational(model, data.sequences[s], options, derive_seed(config.seed, s),
                                         warm ? &(*warm)[s] : nullptr);
    out.total += fit.trace.back();
    out.states.push_back(std::move(fit.state));
  }
  return out;
}

}  // namespace

std::pair<Model, FitReport> em_fit(const Model& model, const Dataset& data, const EmConfig& config) {
  check_config(config);
  for (const ObservationSet& obs : data.sequences) check_observations(model.topology(), obs);
  FitReport report;
  if (config.max_em_iters == 0) return {model, report};
  if (data.sequences.empty()) throw DataError("training needs at least one sequence");

  const double floor = config.covariance_floor * data_variance_scale(data);
  Model current = model;
  EStep estep = run_estep(current, data, config, nullptr);
  report.bound_per_iter.push_back(estep.total);
  double eta = config.eta_init;

  for (int iter = 0; iter < config.max_em_iters; ++iter) {
    const double before = estep.total;
    Model proposed = m_step(current, estep.states, data, floor);
    if (config.overrelax) {
      report.eta_trace.push_back(eta);
      EStep plain = run_estep(proposed, data, config, &estep.states);
      bool accepted = false;
      if (eta > 1.0) {
        try {
          Model candidate = overrelaxed_update(current, proposed, eta, floor);
          EStep stretched = run_estep(candidate, data, config, &estep.states);
          if (stretched.total >= plain.total) {
            current = std::move(candidate);
            estep = std::move(stretched);
            accepted = true;
          }
        } catch (const Error&) {
          // An infeasible extrapolation counts as a rejected step.
        }
      }
      if (accepted || eta == 1.0) {
        eta *= config.eta_grow;
      } else {
        eta = std::max(1.0, eta * config.eta_shrink);
        ++report.rejected_steps;
      }
      if (!accepted) {
        current = std::move(proposed);
        estep = std::move(plain);
      }
    } else {
      estep = run_estep(proposed, data, config, &estep.states);
      current = std::move(proposed);
    }
    ++report.iters_run;
    report.bound_per_iter.push_back(estep.total);
    if (estep.total < before - 1e-6 * (1.0 + std::abs(before)))
      throw NumericalError("EM monotonicity violated: summed bound fell from " + std::to_string(before) + " to " +
                           std::to_string(estep.total));
    const double gain = (estep.total - before) / std::max(std::abs(before), 1e-300);
    if (gain < config.em_tol) {
      report.converged = true;
      break;
    }
  }
  return {std::move(current), std::move(report)};
}

Classification classify(std::span<const Model> models, const ObservationSet& obs, const EmConfig& config) {
  check_config(config);
  if (models.empty()) throw Error(ErrorKind::Usage, "classify needs at least one model");
  InferenceOptions options;
  options.tol = config.e_tol;
  options.max_sweeps = config.max_sweeps;
  Classification out;
  for (const Model& model : models) {
    try {
      const VariationalFit fit = fit_variational(model, obs, options, config.seed);
      out.scores.push_back(fit.trace.back());
      out.errors.emplace_back();
    } catch (const Error& e) {
      out.scores.push_back(std::numeric_limits<double>::quiet_NaN());
      out.errors.emplace_back(e.what());
    }
  }
  bool found = false;
  for (std::size_t m = 0; m < out.scores.size(); ++m) {
    if (!std::isfinite(out.scores[m])) continue;
    if (!found || out.scores[m] > out.scores[out.label]) {
      out.label = m;
      found = true;
    }
  }
  if (!found) throw NumericalError("classification failed: inference failed under every model (" + out.errors[0] + ")");
  const double best = out.scores[out.label];
  for (std::size_t m = 0; m < out.scores.size(); ++m)
    if (m != out.label && std::isfinite(out.scores[m]) && std::abs(out.scores[m] - best) <= 1e-9 * (1.0 + std::abs(best)))
      out.tie = true;
  return out;
}

}  // namespace dst
