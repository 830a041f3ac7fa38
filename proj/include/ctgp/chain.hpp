/// \file chain.hpp
/// Linear-Gaussian batch estimation over a temporal chain.
///
/// build_chain populates the factor graph (prior + discretized motion +
/// measurement factors); solve_chain runs the elimination algorithm in
/// temporal order, which is exactly the block-tridiagonal solve, and a
/// backward pass recovers means, marginal covariances, and the consecutive
/// cross-covariances needed for querying. rts_smooth implements the
/// classical forward/backward smoother independently as a cross-check.

#pragma once

#include "ctgp/gaussian.hpp"
#include "ctgp/lti_prior.hpp"

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

namespace ctgp {

/// A time at which the state is an explicit optimization variable.
struct Knot {
  Key key;
  double time;
  int dim;
};

/// Linear measurement y = C x(t_k) + n, n ~ N(0, R), attached to a knot.
struct MeasurementFactor {
  Key key;
  Eigen::MatrixXd C;
  Eigen::MatrixXd R;
  Eigen::VectorXd y;
};

/// Measurement carrying its own timestamp, before attachment to a knot.
struct TimedMeasurement {
  double time;
  Eigen::MatrixXd C;
  Eigen::MatrixXd R;
  Eigen::VectorXd y;
};

/// Tolerance for matching a measurement (or query) time to a knot time.
inline constexpr double kTimeSnapTol = 1e-9;

/// Factor graph over a temporal chain of knots.
struct ChainProblem {
  std::vector<Knot> knots;
  GaussianFactorGraph graph;

  int index_of(Key key) const {
    for (std::size_t i = 0; i < knots.size(); ++i)
      if (knots[i].key == key) return static_cast<int>(i);
    throw std::invalid_argument("ChainProblem: unknown key " + key_name(key));
  }
};

/// Posterior over the chain: per-knot marginals plus consecutive
/// cross-covariances cross[k-1] = Cov(x_k, x_{k-1}).
struct ChainSolution {
  std::vector<Knot> knots;
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
  std::vector<Eigen::MatrixXd> cross;
  double cost = 0.0;

  /// Joint posterior of the bracket (x_{k-1}, x_k) assembled from the stored
  /// marginals and cross-covariance; never recomputed from scratch.
  GaussianDensity pair_density(int k) const {
    if (k < 1 || k >= static_cast<int>(knots.size()))
      throw std::invalid_argument("ChainSolution::pair_density: index out of range");
    const int n_prev = knots[k - 1].dim, n_next = knots[k].dim;
    Eigen::VectorXd m(n_prev + n_next);
    m << mean[k - 1], mean[k];
    Eigen::MatrixXd p(n_prev + n_next, n_prev + n_next);
    p.topLeftCorner(n_prev, n_prev) = cov[k - 1];
    p.bottomRightCorner(n_next, n_next) = cov[k];
    p.bottomLeftCorner(n_next, n_prev) = cross[k - 1];
    p.topRightCorner(n_prev, n_next) = cross[k - 1].transpose();
    return GaussianDensity({knots[k - 1].key, knots[k].key}, {n_prev, n_next}, std::move(m),
                           std::move(p));
  }
};

namespace detail {

inline int knot_at_time(const std::vector<Knot>& knots, double t) {
  for (std::size_t i = 0; i < knots.size(); ++i)
    if (std::abs(knots[i].time - t) <= kTimeSnapTol) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

/// Builds the chain factor graph: a unary prior on the first knot, binary
/// discretized motion factors between consecutive knots, and unary
/// measurement factors. Measurement times may be asynchronous but must each
/// coincide with a knot; anything in between belongs to the interpolation
/// machinery instead.
inline ChainProblem build_chain(const LtiModel& model, const std::vector<double>& knot_times,
                                const GaussianDensity& prior,
                                const std::vector<TimedMeasurement>& measurements) {
  if (knot_times.empty()) throw std::invalid_argument("build_chain: at least one knot required");
  const int n = model.state_dim();
  if (prior.dim() != n)
    throw std::invalid_argument("build_chain: prior dimension does not match the state dimension");
  for (std::size_t i = 1; i < knot_times.size(); ++i)
    if (!(knot_times[i] > knot_times[i - 1]))
      throw std::invalid_argument("build_chain: knot times must be strictly increasing");

  ChainProblem problem;
  for (std::size_t i = 0; i < knot_times.size(); ++i)
    problem.knots.push_back({sym('x', i), knot_times[i], n});

  problem.graph.factors.push_back(
      QuadraticFactor::from_density(GaussianDensity::single(problem.knots[0].key, prior.mean(), prior.cov())));

  for (std::size_t k = 1; k < problem.knots.size(); ++k) {
    const auto blocks = discretize(model, knot_times[k - 1], knot_times[k]);
    problem.graph.factors.push_back(QuadraticFactor::from_linear(
        {problem.knots[k - 1].key, problem.knots[k].key}, {n, n},
        {-blocks.Phi, Eigen::MatrixXd::Identity(n, n)}, blocks.v, blocks.Q));
  }

  for (const auto& m : measurements) {
    const int idx = detail::knot_at_time(problem.knots, m.time);
    if (idx < 0)
      throw std::invalid_argument(
          "build_chain: measurement at t=" + std::to_string(m.time) +
          " does not coincide with any knot; wrap it with an interpolation factor instead");
    if (m.C.cols() != n) throw std::invalid_argument("build_chain: measurement C has wrong column count");
    problem.graph.factors.push_back(
        QuadraticFactor::from_linear({problem.knots[idx].key}, {n}, {m.C}, m.y, m.R));
  }
  return problem;
}

/// Total negative-log cost of the graph at the given per-knot values.
inline double chain_cost(const ChainProblem& problem, const std::vector<Eigen::VectorXd>& values) {
  double cost = 0.0;
  for (const auto& f : problem.graph.factors) {
    Eigen::VectorXd x(f.dim());
    int off = 0;
    for (std::size_t i = 0; i < f.keys().size(); ++i) {
      x.segment(off, f.dims()[i]) = values[problem.index_of(f.keys()[i])];
      off += f.dims()[i];
    }
    cost += f.evaluate(x);
  }
  return cost;
}

/// Assembles the dense information matrix of the graph in knot order,
/// for structural inspection; the solver itself never forms this.
inline Eigen::MatrixXd assemble_dense_info(const ChainProblem& problem) {
  int total = 0;
  std::vector<int> offsets;
  for (const auto& k : problem.knots) {
    offsets.push_back(total);
    total += k.dim;
  }
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(total, total);
  for (const auto& f : problem.graph.factors) {
    int ro = 0;
    for (std::size_t i = 0; i < f.keys().size(); ++i) {
      const int gi = offsets[problem.index_of(f.keys()[i])];
      int co = 0;
      for (std::size_t j = 0; j < f.keys().size(); ++j) {
        const int gj = offsets[problem.index_of(f.keys()[j])];
        info.block(gi, gj, f.dims()[i], f.dims()[j]) += f.info().block(ro, co, f.dims()[i], f.dims()[j]);
        co += f.dims()[j];
      }
      ro += f.dims()[i];
    }
  }
  return info;
}

/// Solves the chain by sequential elimination in temporal order (the
/// block-tridiagonal forward pass) followed by back-substitution that also
/// recovers marginal covariances and consecutive cross-covariances.
inline ChainSolution solve_chain(const ChainProblem& problem) {
  const int K1 = static_cast<int>(problem.knots.size());

  // Structural validation: every factor must be unary on a knot or binary on
  // adjacent knots, and every interval needs a connecting factor.
  std::vector<bool> interval_connected(std::max(0, K1 - 1), false);
  for (const auto& f : problem.graph.factors) {
    if (f.keys().size() > 2)
      throw std::invalid_argument("solve_chain: factor arity exceeds 2; not a chain");
    if (f.keys().size() == 2) {
      const int i = problem.index_of(f.keys()[0]);
      const int j = problem.index_of(f.keys()[1]);
      if (std::abs(i - j) != 1)
        throw std::invalid_argument("solve_chain: binary factor links non-adjacent knots " +
                                    key_name(f.keys()[0]) + ", " + key_name(f.keys()[1]));
      interval_connected[std::min(i, j)] = true;
    } else if (f.keys().size() == 1) {
      problem.index_of(f.keys()[0]);  // throws on foreign key
    }
  }
  for (int k = 0; k + 1 < K1; ++k)
    if (!interval_connected[k])
      throw std::invalid_argument("solve_chain: disconnected chain, no factor between " +
                                  key_name(problem.knots[k].key) + " and " +
                                  key_name(problem.knots[k + 1].key));

  std::vector<Key> order;
  for (const auto& k : problem.knots) order.push_back(k.key);
  const BayesNet net = eliminate_sequential(problem.graph, order);

  ChainSolution out;
  out.knots = problem.knots;
  out.mean.resize(K1);
  out.cov.resize(K1);
  out.cross.resize(std::max(0, K1 - 1));

  // Backward pass. Conditional k has separator {x_{k+1}} (empty for the
  // last), so the posterior recursions close over consecutive pairs only.
  for (int k = K1 - 1; k >= 0; --k) {
    const auto& c = net.conditionals[k];
    if (k == K1 - 1) {
      if (!c.separator_keys().empty())
        throw std::runtime_error("solve_chain: final conditional has a non-empty separator");
      out.mean[k] = c.offset();
      out.cov[k] = c.covariance();
    } else {
      if (c.separator_keys().size() != 1 || c.separator_keys()[0] != problem.knots[k + 1].key)
        throw std::runtime_error("solve_chain: conditional separator is not the next knot");
      out.mean[k] = c.offset() + c.gain() * out.mean[k + 1];
      out.cov[k] = c.covariance() + c.gain() * out.cov[k + 1] * c.gain().transpose();
      out.cov[k] = (0.5 * (out.cov[k] + out.cov[k].transpose())).eval();
      // x_k = offset + G x_{k+1} + w  =>  Cov(x_{k+1}, x_k) = P_{k+1} G^T.
      out.cross[k] = out.cov[k + 1] * c.gain().transpose();
    }
  }
  out.cost = chain_cost(problem, out.mean);
  return out;
}

/// Filtered (forward-only) quantities, exposed for diagnostics and tests.
struct RtsDiagnostics {
  std::vector<Eigen::VectorXd> filtered_mean;
  std::vector<Eigen::MatrixXd> filtered_cov;
};

/// Classic RTS smoother: Kalman forward pass, then the backward smoothing
/// recursion with consecutive cross-covariances. Independent of the
/// factor-graph path; used to anchor solve_chain.
inline ChainSolution rts_smooth(const LtiModel& model, const std::vector<double>& knot_times,
                                const GaussianDensity& prior,
                                const std::vector<TimedMeasurement>& measurements,
                                RtsDiagnostics* diagnostics = nullptr) {
  if (knot_times.empty()) throw std::invalid_argument("rts_smooth: at least one knot required");
  const int n = model.state_dim();
  const int K1 = static_cast<int>(knot_times.size());

  // Stack measurements per knot (multiple measurements fuse by stacking).
  std::vector<std::vector<const TimedMeasurement*>> per_knot(K1);
  std::vector<Knot> knots;
  for (int i = 0; i < K1; ++i) knots.push_back({sym('x', i), knot_times[i], n});
  for (const auto& m : measurements) {
    const int idx = detail::knot_at_time(knots, m.time);
    if (idx < 0)
      throw std::invalid_argument("rts_smooth: measurement at t=" + std::to_string(m.time) +
                                  " does not coincide with any knot");
    per_knot[idx].push_back(&m);
  }

  auto stacked = [&](int k) -> std::optional<std::tuple<Eigen::MatrixXd, Eigen::MatrixXd, Eigen::VectorXd>> {
    if (per_knot[k].empty()) return std::nullopt;
    int p = 0;
    for (const auto* m : per_knot[k]) p += static_cast<int>(m->y.size());
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p, n);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd y(p);
    int off = 0;
    for (const auto* m : per_knot[k]) {
      const int pi = static_cast<int>(m->y.size());
      C.middleRows(off, pi) = m->C;
      R.block(off, off, pi, pi) = m->R;
      y.segment(off, pi) = m->y;
      off += pi;
    }
    return std::make_tuple(C, R, y);
  };

  std::vector<Eigen::VectorXd> xf(K1);  // filtered means
  std::vector<Eigen::MatrixXd> Pf(K1);  // filtered covariances
  std::vector<Eigen::VectorXd> xp(K1);  // predicted means
  std::vector<Eigen::MatrixXd> Pp(K1);  // predicted covariances
  std::vector<Eigen::MatrixXd> Phi(K1);

  auto update = [&](int k, const Eigen::VectorXd& xpred, const Eigen::MatrixXd& Ppred) {
    if (auto m = stacked(k)) {
      const auto& [C, R, y] = *m;
      const Eigen::MatrixXd S = C * Ppred * C.transpose() + R;
      const Eigen::MatrixXd K = Ppred * C.transpose() * S.llt().solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
      xf[k] = xpred + K * (y - C * xpred);
      Pf[k] = (Eigen::MatrixXd::Identity(n, n) - K * C) * Ppred;
      Pf[k] = (0.5 * (Pf[k] + Pf[k].transpose())).eval();
    } else {
      xf[k] = xpred;
      Pf[k] = Ppred;
    }
  };

  xp[0] = prior.mean();
  Pp[0] = prior.cov();
  update(0, prior.mean(), prior.cov());
  for (int k = 1; k < K1; ++k) {
    const auto blocks = discretize(model, knot_times[k - 1], knot_times[k]);
    Phi[k] = blocks.Phi;
    xp[k] = blocks.Phi * xf[k - 1] + blocks.v;
    Pp[k] = blocks.Phi * Pf[k - 1] * blocks.Phi.transpose() + blocks.Q;
    update(k, xp[k], Pp[k]);
  }

  ChainSolution out;
  out.knots = knots;
  out.mean.resize(K1);
  out.cov.resize(K1);
  out.cross.resize(std::max(0, K1 - 1));
  out.mean[K1 - 1] = xf[K1 - 1];
  out.cov[K1 - 1] = Pf[K1 - 1];
  for (int k = K1 - 1; k >= 1; --k) {
    const Eigen::MatrixXd G =
        Pf[k - 1] * Phi[k].transpose() * Pp[k].llt().solve(Eigen::MatrixXd::Identity(n, n));
    out.mean[k - 1] = xf[k - 1] + G * (out.mean[k] - xp[k]);
    out.cov[k - 1] = Pf[k - 1] + G * (out.cov[k] - Pp[k]) * G.transpose();
    out.cov[k - 1] = (0.5 * (out.cov[k - 1] + out.cov[k - 1].transpose())).eval();
    out.cross[k - 1] = out.cov[k] * G.transpose();
  }

  // Cost uses the same factor-graph convention for comparability.
  const ChainProblem problem = build_chain(model, knot_times, prior, measurements);
  out.cost = chain_cost(problem, out.mean);

  if (diagnostics) {
    diagnostics->filtered_mean = std::move(xf);
    diagnostics->filtered_cov = std::move(Pf);
  }
  return out;
}

}  // namespace ctgp
