#include "ctgp/gp_query.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace ctgp;
using test_util::rel_err;

namespace {

GaussianDensity standard_prior(int n) {
  return GaussianDensity::single(sym('x', 0), Eigen::VectorXd::Zero(n),
                                 Eigen::MatrixXd::Identity(n, n));
}

std::vector<TimedMeasurement> position_measurements(std::mt19937_64& rng,
                                                    const std::vector<double>& times) {
  std::vector<TimedMeasurement> meas;
  Eigen::MatrixXd c(1, 2);
  c << 1.0, 0.0;
  for (double t : times)
    meas.push_back({t, c, Eigen::MatrixXd::Constant(1, 1, 0.2), test_util::random_vector(rng, 1)});
  return meas;
}

}  // namespace

TEST_CASE("zero-input models have a zero conditional offset", "[gp_query]") {
  const auto model = wnoa_model_1d(1.3);
  const auto c = interp_coeffs(model, 0.0, 0.7, 2.0);
  REQUIRE(c.eta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("interpolation gains equal the dense kernel row", "[gp_query]") {
  // [Lambda Psi] must equal Pcheck_tau * Pcheck^-1 over the bracketing
  // knots, for any SPD anchor covariance.
  const auto model = wnoa_model_1d(0.8);
  const double t0 = 0.0, t1 = 1.0, tau = 0.5;
  Eigen::MatrixXd p0(2, 2);
  p0 << 2.0, 0.1, 0.1, 0.5;

  Eigen::MatrixXd p_check(4, 4);
  p_check.topLeftCorner(2, 2) = detail::kernel_block(model, t0, p0, t0, t0);
  p_check.topRightCorner(2, 2) = detail::kernel_block(model, t0, p0, t0, t1);
  p_check.bottomLeftCorner(2, 2) = detail::kernel_block(model, t0, p0, t1, t0);
  p_check.bottomRightCorner(2, 2) = detail::kernel_block(model, t0, p0, t1, t1);
  Eigen::MatrixXd p_tau(2, 4);
  p_tau.leftCols(2) = detail::kernel_block(model, t0, p0, tau, t0);
  p_tau.rightCols(2) = detail::kernel_block(model, t0, p0, tau, t1);

  const Eigen::MatrixXd dense_gains = p_tau * p_check.inverse();
  const auto c = interp_coeffs(model, t0, tau, t1);
  REQUIRE(rel_err(c.Lambda, dense_gains.leftCols(2).eval()) < 1e-10);
  REQUIRE(rel_err(c.Psi, dense_gains.rightCols(2).eval()) < 1e-10);
}

TEST_CASE("the two closed forms for the gains agree", "[gp_query]") {
  // Sigma-based form vs. the kernel-side form
  //   Lambda = A1 - Q1 A2^T Qfull^-1 A2 A1,  Psi = Q1 A2^T Qfull^-1,
  // where Q1 accumulates over the first sub-interval [t_prev, tau].
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const double t_prev = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    const double dt = std::uniform_real_distribution<double>(0.05, 3.0)(rng);
    const double frac = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const double tau = t_prev + frac * dt, t_next = t_prev + dt;
    const auto model = wnoa_model_1d(0.3 + std::uniform_real_distribution<double>(0.0, 2.0)(rng));

    const auto b1 = discretize(model, t_prev, tau);
    const auto b2 = discretize(model, tau, t_next);
    const auto bfull = discretize(model, t_prev, t_next);
    const Eigen::MatrixXd qfull_inv = bfull.Q.inverse();

    const Eigen::MatrixXd lambda_kernel =
        b1.Phi - b1.Q * b2.Phi.transpose() * qfull_inv * b2.Phi * b1.Phi;
    const Eigen::MatrixXd psi_kernel = b1.Q * b2.Phi.transpose() * qfull_inv;

    const auto c = interp_coeffs(model, t_prev, tau, t_next);
    REQUIRE(rel_err(c.Lambda, lambda_kernel) < 1e-10);
    REQUIRE(rel_err(c.Psi, psi_kernel) < 1e-10);
  }
}

TEST_CASE("queries snapped to a knot return the knot marginal exactly", "[gp_query]") {
  std::mt19937_64 rng(3);
  const auto model = wnoa_model_1d(1.0);
  const std::vector<double> times{0.0, 1.0, 2.0};
  const auto sol = solve_chain(build_chain(model, times, standard_prior(2),
                                           position_measurements(rng, times)));
  const auto q = query_trajectory(sol, model, 1.0 + 1e-12);
  REQUIRE(q.snapped);
  REQUIRE(rel_err(q.mean, sol.mean[1]) == 0.0);
  REQUIRE(rel_err(q.cov, sol.cov[1]) == 0.0);
}

TEST_CASE("query equals a full solve with the query time as an explicit knot", "[gp_query]") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto model = wnoa_model_1d(0.5 + std::uniform_real_distribution<double>(0.0, 1.5)(rng));
    std::vector<double> times;
    double t = 0.0;
    for (int i = 0; i < 6; ++i) {
      times.push_back(t);
      t += std::uniform_real_distribution<double>(0.2, 1.0)(rng);
    }
    const auto prior = standard_prior(2);
    const auto meas = position_measurements(rng, times);
    const auto sol = solve_chain(build_chain(model, times, prior, meas));

    for (int qi = 0; qi < 10; ++qi) {
      const double tau = std::uniform_real_distribution<double>(times.front() + 1e-3,
                                                                times.back() - 1e-3)(rng);
      bool near_knot = false;
      for (double kt : times) near_knot |= std::abs(kt - tau) < 1e-6;
      if (near_knot) continue;

      std::vector<double> augmented = times;
      augmented.push_back(tau);
      std::sort(augmented.begin(), augmented.end());
      const auto aug_sol = solve_chain(build_chain(model, augmented, prior, meas));
      const int tau_idx = static_cast<int>(
          std::find(augmented.begin(), augmented.end(), tau) - augmented.begin());

      const auto q = query_trajectory(sol, model, tau);
      REQUIRE_FALSE(q.snapped);
      REQUIRE(rel_err(q.mean, aug_sol.mean[tau_idx]) < 1e-9);
      REQUIRE(rel_err(q.cov, aug_sol.cov[tau_idx]) < 1e-8);

      // Knot estimates are untouched by the presence of the query state.
      for (std::size_t k = 0; k < times.size(); ++k) {
        const int aug_k = static_cast<int>(
            std::find(augmented.begin(), augmented.end(), times[k]) - augmented.begin());
        REQUIRE(rel_err(sol.mean[k], aug_sol.mean[aug_k]) < 1e-9);
      }
    }
  }
}

TEST_CASE("query agrees with the dense GP oracle", "[gp_query]") {
  std::mt19937_64 rng(11);
  const auto model = wnoa_model_1d(0.9);
  const std::vector<double> times{0.0, 0.6, 1.1, 2.0};
  const auto prior = standard_prior(2);
  const auto meas = position_measurements(rng, times);
  const auto sol = solve_chain(build_chain(model, times, prior, meas));

  const std::vector<double> query_times{0.25, 0.7, 1.5, 1.95};
  const auto oracle = dense_gp_oracle(model, times[0], prior, meas, query_times);
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    const auto q = query_trajectory(sol, model, query_times[i]);
    REQUIRE(rel_err(q.mean, oracle[i].mean()) < 1e-9);
    REQUIRE(rel_err(q.cov, oracle[i].cov()) < 1e-8);
  }
}

TEST_CASE("dense oracle at the measurement times reproduces the main solve", "[gp_query]") {
  std::mt19937_64 rng(13);
  const auto model = wnoa_model_1d(1.1);
  const std::vector<double> times{0.0, 0.5, 1.0, 1.5};
  const auto prior = standard_prior(2);
  const auto meas = position_measurements(rng, times);
  const auto sol = solve_chain(build_chain(model, times, prior, meas));
  const auto oracle = dense_gp_oracle(model, times[0], prior, meas, times);
  for (std::size_t i = 0; i < times.size(); ++i) {
    REQUIRE(rel_err(oracle[i].mean(), sol.mean[i]) < 1e-9);
    REQUIRE(rel_err(oracle[i].cov(), sol.cov[i]) < 1e-8);
  }
}

TEST_CASE("dense oracle without measurements returns the prior", "[gp_query]") {
  const auto model = wnoa_model_1d(1.0);
  const auto prior = standard_prior(2);
  const auto out = dense_gp_oracle(model, 0.0, prior, {}, {0.8});
  const Eigen::MatrixXd phi = transition(model, 0.8);
  const Eigen::MatrixXd expected_cov = phi * prior.cov() * phi.transpose() + discretize(model, 0.0, 0.8).Q;
  REQUIRE(rel_err(out[0].mean(), (phi * prior.mean()).eval()) < 1e-12);
  REQUIRE(rel_err(out[0].cov(), expected_cov) < 1e-12);
}

TEST_CASE("queried trajectory is continuous at the knots", "[gp_query]") {
  std::mt19937_64 rng(17);
  const auto model = wnoa_model_1d(0.7);
  const std::vector<double> times{0.0, 1.0, 2.0, 3.0};
  const auto sol = solve_chain(build_chain(model, times, standard_prior(2),
                                           position_measurements(rng, times)));
  for (int k = 1; k < 3; ++k) {
    const auto left = query_trajectory(sol, model, times[k] - 1e-8);
    const auto right = query_trajectory(sol, model, times[k] + 1e-8);
    REQUIRE((left.mean - sol.mean[k]).norm() < 1e-6);
    REQUIRE((right.mean - sol.mean[k]).norm() < 1e-6);
    REQUIRE((left.cov - sol.cov[k]).norm() < 1e-6);
    REQUIRE((right.cov - sol.cov[k]).norm() < 1e-6);
  }
}

TEST_CASE("conditional covariance vanishes as the bracket shrinks", "[gp_query]") {
  const auto model = wnoa_model_1d(1.0);
  double prev_norm = 1e9;
  for (double dt : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const auto c = interp_coeffs(model, 0.0, 0.5 * dt, dt);
    const double norm = c.Sigma.norm();
    REQUIRE(norm < prev_norm);
    REQUIRE(norm < dt);  // Sigma shrinks at least linearly in the bracket
    prev_norm = norm;
  }
}

TEST_CASE("posterior query variances are non-negative", "[gp_query]") {
  std::mt19937_64 rng(23);
  const auto model = wnoa_model_1d(1.0);
  const std::vector<double> times{0.0, 0.5, 1.2, 2.0};
  const auto sol = solve_chain(build_chain(model, times, standard_prior(2),
                                           position_measurements(rng, times)));
  for (int i = 0; i < 50; ++i) {
    const double tau = std::uniform_real_distribution<double>(0.01, 1.99)(rng);
    const auto q = query_trajectory(sol, model, tau);
    REQUIRE(q.cov(0, 0) >= 0.0);
    REQUIRE(q.cov(1, 1) >= 0.0);
  }
}

TEST_CASE("out-of-span queries extrapolate and are flagged", "[gp_query]") {
  std::mt19937_64 rng(29);
  const auto model = wnoa_model_1d(1.0);
  const std::vector<double> times{0.0, 1.0};
  const auto sol = solve_chain(build_chain(model, times, standard_prior(2),
                                           position_measurements(rng, times)));

  const auto fwd = query_trajectory(sol, model, 1.5);
  REQUIRE(fwd.extrapolated);
  const auto blocks = discretize(model, 1.0, 1.5);
  REQUIRE(rel_err(fwd.mean, (blocks.Phi * sol.mean[1]).eval()) < 1e-12);
  REQUIRE(rel_err(fwd.cov, (blocks.Phi * sol.cov[1] * blocks.Phi.transpose() + blocks.Q).eval()) < 1e-12);

  const auto bwd = query_trajectory(sol, model, -0.5);
  REQUIRE(bwd.extrapolated);
  // Continuity towards the first knot.
  const auto near0 = query_trajectory(sol, model, -1e-8);
  REQUIRE((near0.mean - sol.mean[0]).norm() < 1e-6);
}

TEST_CASE("interp_coeffs rejects times outside the open bracket", "[gp_query]") {
  const auto model = wnoa_model_1d(1.0);
  REQUIRE_THROWS_AS(interp_coeffs(model, 0.0, 0.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(interp_coeffs(model, 0.0, 1.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(interp_coeffs(model, 0.0, 1.5, 1.0), std::invalid_argument);
}

TEST_CASE("dense oracle enforces the size guard", "[gp_query]") {
  const auto model = wnoa_model_1d(1.0);
  std::vector<TimedMeasurement> meas;
  Eigen::MatrixXd c(1, 2);
  c << 1.0, 0.0;
  for (int i = 0; i < 51; ++i)
    meas.push_back({0.1 * i, c, Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1)});
  REQUIRE_THROWS_AS(dense_gp_oracle(model, 0.0, standard_prior(2), meas, {0.05}),
                    std::invalid_argument);
}
