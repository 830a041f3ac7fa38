/// \file gp_query.hpp
/// O(1) post-solve querying of a linear Gaussian-process trajectory.
///
/// Eliminating a query state x_tau between two knots leaves a Gaussian
/// conditional p(x_tau | x_{k-1}, x_k) = N(eta + Lambda x_{k-1} + Psi x_k,
/// Sigma). Convolving it with the pairwise posterior of the bracketing
/// knots gives the posterior at tau, using only quantities the chain solver
/// already stores, so each query costs O(1).
///
/// Note on the interpolation gains: with the accumulated noise blocks
/// Q1 = Q(t_{k-1}, tau) and Q2 = Q(tau, t_k),
///   Sigma  = (Q1^-1 + A2^T Q2^-1 A2)^-1,
///   Lambda = Sigma Q1^-1 A1,
///   Psi    = Sigma A2^T Q2^-1,
/// which is algebraically identical to the kernel-side closed form
///   Lambda = A1 - Q1 A2^T Qfull^-1 A2 A1,   Psi = Q1 A2^T Qfull^-1,
/// with Qfull = Q(t_{k-1}, t_k); note that Psi uses the noise accumulated
/// over the FIRST sub-interval. Both routes are cross-checked in the tests.

#pragma once

#include "ctgp/chain.hpp"
#include "ctgp/gaussian.hpp"
#include "ctgp/lti_prior.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace ctgp {

/// Interpolation operators for one query time inside a bracket.
struct InterpCoeffs {
  double t_prev = 0.0;
  double tau = 0.0;
  double t_next = 0.0;
  Eigen::MatrixXd Lambda;  // gain on the left knot
  Eigen::MatrixXd Psi;     // gain on the right knot
  Eigen::MatrixXd Sigma;   // conditional covariance, SPD
  Eigen::VectorXd eta;     // conditional offset; zero for zero-input models
};

/// Conditional coefficients for x_tau given (x_{k-1}, x_k). Requires
/// t_prev < tau < t_next strictly; callers snap to the knot marginal when
/// tau sits on a knot.
inline InterpCoeffs interp_coeffs(const LtiModel& model, double t_prev, double tau, double t_next) {
  if (!(t_prev < tau && tau < t_next))
    throw std::invalid_argument("interp_coeffs: tau must lie strictly inside (t_prev, t_next)");
  const int n = model.state_dim();
  const auto b1 = discretize(model, t_prev, tau);   // Q1, A1, v1 over [t_prev, tau]
  const auto b2 = discretize(model, tau, t_next);   // Q2, A2, v2 over [tau, t_next]

  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> q1(b1.Q), q2(b2.Q);
  if (q1.info() != Eigen::Success || q2.info() != Eigen::Success)
    throw std::runtime_error("interp_coeffs: singular sub-interval noise covariance");
  const Eigen::MatrixXd q1_inv = q1.solve(I);
  const Eigen::MatrixXd q2_inv = q2.solve(I);

  Eigen::MatrixXd sigma_inv = q1_inv + b2.Phi.transpose() * q2_inv * b2.Phi;
  sigma_inv = (0.5 * (sigma_inv + sigma_inv.transpose())).eval();
  Eigen::MatrixXd sigma = sigma_inv.llt().solve(I);
  sigma = (0.5 * (sigma + sigma.transpose())).eval();

  InterpCoeffs c;
  c.t_prev = t_prev;
  c.tau = tau;
  c.t_next = t_next;
  c.Lambda = sigma * q1_inv * b1.Phi;
  c.Psi = sigma * b2.Phi.transpose() * q2_inv;
  c.eta = sigma * (q1_inv * b1.v - b2.Phi.transpose() * q2_inv * b2.v);
  c.Sigma = std::move(sigma);
  return c;
}

/// Posterior at tau from the conditional coefficients and the joint
/// posterior of the bracketing knots.
inline GaussianDensity query_density(const InterpCoeffs& coeffs, const GaussianDensity& pair,
                                     Key out_key = sym('q', 0)) {
  const int n = static_cast<int>(coeffs.Lambda.rows());
  if (pair.dim() != 2 * n)
    throw std::invalid_argument("query_density: pairwise joint has the wrong dimension");
  Eigen::MatrixXd gains(n, 2 * n);
  gains << coeffs.Lambda, coeffs.Psi;
  Eigen::VectorXd mean = coeffs.eta + gains * pair.mean();
  Eigen::MatrixXd cov = coeffs.Sigma + gains * pair.cov() * gains.transpose();
  cov = (0.5 * (cov + cov.transpose())).eval();
  return GaussianDensity::single(out_key, std::move(mean), std::move(cov));
}

/// One queried state with metadata.
struct QueryResult {
  double tau = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  bool snapped = false;       // tau coincided with a knot
  bool extrapolated = false;  // tau outside the knot span
};

/// Queries the solved trajectory at an arbitrary time. Interior times use
/// the O(1) conditional; times within the snap tolerance of a knot return
/// that knot's marginal; times outside the span are extrapolated through
/// the one-sided prior conditional from the nearest knot and flagged.
inline QueryResult query_trajectory(const ChainSolution& solution, const LtiModel& model, double tau) {
  if (solution.knots.empty()) throw std::invalid_argument("query_trajectory: empty solution");
  const int K1 = static_cast<int>(solution.knots.size());
  QueryResult out;
  out.tau = tau;

  for (int k = 0; k < K1; ++k) {
    if (std::abs(solution.knots[k].time - tau) <= kTimeSnapTol) {
      out.mean = solution.mean[k];
      out.cov = solution.cov[k];
      out.snapped = true;
      return out;
    }
  }

  if (tau > solution.knots[K1 - 1].time) {
    const auto blocks = discretize(model, solution.knots[K1 - 1].time, tau);
    out.mean = blocks.Phi * solution.mean[K1 - 1] + blocks.v;
    out.cov = blocks.Phi * solution.cov[K1 - 1] * blocks.Phi.transpose() + blocks.Q;
    out.extrapolated = true;
    return out;
  }
  if (tau < solution.knots[0].time) {
    // Reverse the transition over [tau, t_0]: x_0 = Phi x_tau + v + w.
    const auto blocks = discretize(model, tau, solution.knots[0].time);
    const Eigen::MatrixXd phi_inv = blocks.Phi.inverse();
    out.mean = phi_inv * (solution.mean[0] - blocks.v);
    out.cov = phi_inv * (solution.cov[0] + blocks.Q) * phi_inv.transpose();
    out.cov = (0.5 * (out.cov + out.cov.transpose())).eval();
    out.extrapolated = true;
    return out;
  }

  const auto upper = std::upper_bound(solution.knots.begin(), solution.knots.end(), tau,
                                      [](double t, const Knot& k) { return t < k.time; });
  const int k = static_cast<int>(upper - solution.knots.begin());
  const auto coeffs =
      interp_coeffs(model, solution.knots[k - 1].time, tau, solution.knots[k].time);
  const auto d = query_density(coeffs, solution.pair_density(k));
  out.mean = d.mean();
  out.cov = d.cov();
  return out;
}

// ---------------------------------------------------------------------------
// Dense-GP oracle
// ---------------------------------------------------------------------------

namespace detail {

/// Prior kernel block P(a, b) for a <= b, anchored at (t0, prior).
inline Eigen::MatrixXd kernel_block_ordered(const LtiModel& model, double t0,
                                            const Eigen::MatrixXd& P0, double a, double b) {
  const Eigen::MatrixXd phi_a = transition(model, a - t0);
  const Eigen::MatrixXd phi_b = transition(model, b - t0);
  Eigen::MatrixXd block = phi_a * P0 * phi_b.transpose();
  if (a > t0 + 1e-15) {
    const auto acc = discretize(model, t0, a);  // accumulated noise over [t0, a]
    block += acc.Q * transition(model, b - a).transpose();
  }
  return block;
}

inline Eigen::MatrixXd kernel_block(const LtiModel& model, double t0, const Eigen::MatrixXd& P0,
                                    double a, double b) {
  if (a <= b) return kernel_block_ordered(model, t0, P0, a, b);
  return kernel_block_ordered(model, t0, P0, b, a).transpose();
}

inline Eigen::VectorXd prior_mean_at(const LtiModel& model, double t0, const Eigen::VectorXd& x0,
                                     double t) {
  Eigen::VectorXd mean = transition(model, t - t0) * x0;
  if (t > t0 + 1e-15 && model.input) mean += discretize(model, t0, t).v;
  return mean;
}

}  // namespace detail

/// Direct dense-GP evaluation of the posterior at the query times: builds
/// the full kernel matrices between all measurement and query times and
/// applies the closed-form regression equations. O(M^3) and intended as a
/// verification oracle, hence the size guard.
inline std::vector<GaussianDensity> dense_gp_oracle(const LtiModel& model, double t0,
                                                    const GaussianDensity& prior,
                                                    const std::vector<TimedMeasurement>& measurements,
                                                    const std::vector<double>& query_times) {
  if (measurements.size() > 50)
    throw std::invalid_argument("dense_gp_oracle: more than 50 measurements exceeds the test-scale guard");
  const int n = model.state_dim();
  const int M = static_cast<int>(measurements.size());
  for (const auto& m : measurements)
    if (m.time < t0 - 1e-12)
      throw std::invalid_argument("dense_gp_oracle: measurement precedes the prior time");

  int p_total = 0;
  for (const auto& m : measurements) p_total += static_cast<int>(m.y.size());

  // Innovation and its covariance: C Pcheck C^T + R, blockwise.
  Eigen::MatrixXd s(p_total, p_total);
  Eigen::VectorXd innov(p_total);
  {
    int row = 0;
    for (int i = 0; i < M; ++i) {
      const int pi = static_cast<int>(measurements[i].y.size());
      innov.segment(row, pi) =
          measurements[i].y -
          measurements[i].C * detail::prior_mean_at(model, t0, prior.mean(), measurements[i].time);
      int col = 0;
      for (int j = 0; j < M; ++j) {
        const int pj = static_cast<int>(measurements[j].y.size());
        s.block(row, col, pi, pj) =
            measurements[i].C *
            detail::kernel_block(model, t0, prior.cov(), measurements[i].time, measurements[j].time) *
            measurements[j].C.transpose();
        col += pj;
      }
      s.block(row, row, pi, pi) += measurements[i].R;
      row += pi;
    }
  }

  Eigen::LLT<Eigen::MatrixXd> s_llt;
  if (p_total > 0) {
    s = (0.5 * (s + s.transpose())).eval();
    s_llt.compute(s);
    if (s_llt.info() != Eigen::Success)
      throw std::runtime_error("dense_gp_oracle: innovation covariance not SPD");
  }

  std::vector<GaussianDensity> out;
  out.reserve(query_times.size());
  for (std::size_t qi = 0; qi < query_times.size(); ++qi) {
    const double tau = query_times[qi];
    if (tau < t0 - 1e-12)
      throw std::invalid_argument("dense_gp_oracle: query precedes the prior time");
    Eigen::VectorXd mean = detail::prior_mean_at(model, t0, prior.mean(), tau);
    Eigen::MatrixXd cov = detail::kernel_block(model, t0, prior.cov(), tau, tau);
    if (p_total > 0) {
      Eigen::MatrixXd cross(n, p_total);  // Pcheck_tau C^T
      int col = 0;
      for (int j = 0; j < M; ++j) {
        const int pj = static_cast<int>(measurements[j].y.size());
        cross.middleCols(col, pj) =
            detail::kernel_block(model, t0, prior.cov(), tau, measurements[j].time) *
            measurements[j].C.transpose();
        col += pj;
      }
      mean += cross * s_llt.solve(innov);
      cov -= cross * s_llt.solve(cross.transpose());
    }
    cov = (0.5 * (cov + cov.transpose())).eval();
    out.push_back(GaussianDensity::single(sym('q', qi), std::move(mean), std::move(cov)));
  }
  return out;
}

}  // namespace ctgp
