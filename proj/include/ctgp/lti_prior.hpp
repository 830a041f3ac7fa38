/// \file lti_prior.hpp
/// Discretization of continuous-time LTI SDE motion priors.
///
/// The prior is  xdot = A x + v(t) + L w(t)  with w a white-noise process of
/// power spectral density Qc. Over an interval [s, e] this yields discrete
/// blocks: the transition matrix Phi = exp(A (e-s)), the accumulated input
/// v_disc, and the process-noise covariance Q_disc. The white-noise-on-
/// acceleration (WNOA) special case has closed forms; general models fall
/// back to fixed-order Gauss-Legendre quadrature so results stay
/// deterministic.

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>

namespace ctgp {

namespace detail {

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed once by Newton iteration on the Legendre recurrence.
template <int N>
const std::array<std::pair<double, double>, N>& gauss_legendre() {
  static const std::array<std::pair<double, double>, N> table = [] {
    std::array<std::pair<double, double>, N> t{};
    for (int i = 0; i < N; ++i) {
      // Chebyshev-based initial guess for the i-th root.
      double x = std::cos(M_PI * (i + 0.75) / (N + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= N; ++k) {
          const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = N * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-15) break;
      }
      t[i] = {x, 2.0 / ((1.0 - x * x) * dp * dp)};
    }
    return t;
  }();
  return table;
}

}  // namespace detail

/// Continuous-time LTI SDE model  xdot = A x + v(t) + L w(t),
/// w ~ GP(0, Qc delta(t - t')).
struct LtiModel {
  Eigen::MatrixXd A;   // n x n system matrix
  Eigen::MatrixXd L;   // n x m noise-input matrix
  Eigen::MatrixXd Qc;  // m x m power spectral density, SPD
  /// Optional input v(t); empty means identically zero. The quadrature path
  /// treats it as piecewise constant per discretization interval.
  std::function<Eigen::VectorXd(double)> input;
  bool wnoa = false;  // closed-form discretization applies

  LtiModel(Eigen::MatrixXd a, Eigen::MatrixXd l, Eigen::MatrixXd qc,
           std::function<Eigen::VectorXd(double)> v = {}, bool wnoa_tag = false)
      : A(std::move(a)), L(std::move(l)), Qc(std::move(qc)), input(std::move(v)), wnoa(wnoa_tag) {
    if (A.rows() != A.cols()) throw std::invalid_argument("LtiModel: A must be square");
    if (L.rows() != A.rows() || L.cols() != Qc.rows())
      throw std::invalid_argument("LtiModel: L must be n x m with Qc m x m");
    if (Qc.rows() != Qc.cols()) throw std::invalid_argument("LtiModel: Qc must be square");
    if ((Qc - Qc.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, Qc.cwiseAbs().maxCoeff()))
      throw std::invalid_argument("LtiModel: Qc must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(Qc);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("LtiModel: Qc must be positive-definite");
  }

  int state_dim() const { return static_cast<int>(A.rows()); }
  int noise_dim() const { return static_cast<int>(Qc.rows()); }

  Eigen::VectorXd input_at(double t) const {
    if (input) return input(t);
    return Eigen::VectorXd::Zero(state_dim());
  }
};

/// Discrete inter-knot prior blocks for one interval.
struct TransitionBlocks {
  double dt = 0.0;        // interval length, seconds (> 0)
  Eigen::MatrixXd Phi;    // transition matrix over the interval
  Eigen::VectorXd v;      // accumulated input
  Eigen::MatrixXd Q;      // accumulated process-noise covariance, SPD
};

/// WNOA (constant-velocity) model: state [p; pdot] per block, white noise on
/// acceleration with PSD Qc. A = [0 I; 0 0], L = [0; I], v = 0.
inline LtiModel wnoa_model(const Eigen::MatrixXd& Qc) {
  const int m = static_cast<int>(Qc.rows());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * m, 2 * m);
  A.topRightCorner(m, m) = Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(2 * m, m);
  L.bottomRows(m) = Eigen::MatrixXd::Identity(m, m);
  return LtiModel(std::move(A), std::move(L), Qc, {}, /*wnoa_tag=*/true);
}

inline LtiModel wnoa_model_1d(double qc) { return wnoa_model(Eigen::MatrixXd::Constant(1, 1, qc)); }

/// Transition matrix Phi(dt) = exp(A dt). For the nilpotent WNOA A the
/// series terminates after the linear term, giving [I, dt I; 0, I] exactly.
inline Eigen::MatrixXd transition(const LtiModel& model, double dt) {
  const int n = model.state_dim();
  if (model.wnoa) {
    const int m = n / 2;
    Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(n, n);
    phi.topRightCorner(m, m) = dt * Eigen::MatrixXd::Identity(m, m);
    return phi;
  }
  if (dt == 0.0) return Eigen::MatrixXd::Identity(n, n);
  return (model.A * dt).exp();
}

/// Discretizes the model over [t_start, t_end]: Phi by the matrix
/// exponential, Q and v by the interval integrals. Takes the closed-form
/// path for WNOA models, 32-node Gauss-Legendre quadrature otherwise.
inline TransitionBlocks discretize(const LtiModel& model, double t_start, double t_end) {
  if (!(t_end > t_start))
    throw std::invalid_argument("discretize: t_end must exceed t_start (got [" +
                                std::to_string(t_start) + ", " + std::to_string(t_end) + "])");
  const double dt = t_end - t_start;
  TransitionBlocks blocks;
  blocks.dt = dt;
  blocks.Phi = transition(model, dt);

  if (model.wnoa) {
    const int m = model.noise_dim();
    blocks.Q.resize(2 * m, 2 * m);
    blocks.Q.topLeftCorner(m, m) = (dt * dt * dt / 3.0) * model.Qc;
    blocks.Q.topRightCorner(m, m) = (dt * dt / 2.0) * model.Qc;
    blocks.Q.bottomLeftCorner(m, m) = (dt * dt / 2.0) * model.Qc;
    blocks.Q.bottomRightCorner(m, m) = dt * model.Qc;
    blocks.v = Eigen::VectorXd::Zero(2 * m);
    return blocks;
  }

  const int n = model.state_dim();
  blocks.Q = Eigen::MatrixXd::Zero(n, n);
  blocks.v = Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd LQLt = model.L * model.Qc * model.L.transpose();
  for (const auto& [node, weight] : detail::gauss_legendre<32>()) {
    const double s = t_start + 0.5 * dt * (node + 1.0);
    const double w = 0.5 * dt * weight;
    const Eigen::MatrixXd phi = transition(model, t_end - s);
    blocks.Q += w * phi * LQLt * phi.transpose();
    if (model.input) blocks.v += w * phi * model.input(s);
  }
  blocks.Q = (0.5 * (blocks.Q + blocks.Q.transpose())).eval();
  return blocks;
}

}  // namespace ctgp
