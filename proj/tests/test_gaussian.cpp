#include "ctgp/gaussian.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace ctgp;
using test_util::random_spd;
using test_util::random_vector;
using test_util::rel_err;

namespace {

QuadraticFactor unary_from_moments(Key k, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  return QuadraticFactor::from_density(GaussianDensity::single(k, mean, cov));
}

}  // namespace

TEST_CASE("fuse of a single factor is the identity", "[gaussian]") {
  Eigen::VectorXd m(2);
  m << 1.0, -2.0;
  Eigen::MatrixXd p(2, 2);
  p << 2.0, 0.3, 0.3, 1.0;
  const auto f = unary_from_moments(sym('x', 0), m, p);
  const auto fused = fuse({f});
  REQUIRE(fused.keys() == f.keys());
  REQUIRE(rel_err(fused.info(), f.info()) < 1e-15);
  REQUIRE(rel_err(fused.info_vector(), f.info_vector()) < 1e-15);
}

TEST_CASE("fusing two equal unary factors halves the covariance", "[gaussian]") {
  Eigen::VectorXd m(3);
  m << 0.5, 1.5, -0.5;
  Eigen::MatrixXd p(3, 3);
  p << 1.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.5;
  const auto f = unary_from_moments(sym('x', 0), m, p);
  const auto d = fuse({f, f}).to_density();
  REQUIRE(rel_err(d.mean(), m) < 1e-12);
  REQUIRE(rel_err(d.cov(), (0.5 * p).eval()) < 1e-12);
}

TEST_CASE("fuse of random scalar unaries matches the information-sum oracle", "[gaussian]") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    double lambda_tot = 0.0, eta_tot = 0.0;
    std::vector<QuadraticFactor> factors;
    for (int i = 0; i < 3; ++i) {
      const double var = 0.2 + std::uniform_real_distribution<double>(0.0, 3.0)(rng);
      const double mean = std::normal_distribution<double>(0.0, 2.0)(rng);
      lambda_tot += 1.0 / var;
      eta_tot += mean / var;
      factors.push_back(unary_from_moments(sym('x', 0), Eigen::VectorXd::Constant(1, mean),
                                           Eigen::MatrixXd::Constant(1, 1, var)));
    }
    const auto d = fuse(factors).to_density();
    REQUIRE(d.mean()(0) == Catch::Approx(eta_tot / lambda_tot).epsilon(1e-12));
    REQUIRE(d.cov()(0, 0) == Catch::Approx(1.0 / lambda_tot).epsilon(1e-12));
  }
}

TEST_CASE("fuse is commutative and associative at the information level", "[gaussian]") {
  std::mt19937_64 rng(3);
  const Key a = sym('x', 0), b = sym('x', 1), c = sym('x', 2);
  const auto fa = unary_from_moments(a, random_vector(rng, 2), random_spd(rng, 2));
  const auto fb = QuadraticFactor::from_linear(
      {a, b}, {2, 2}, {-random_spd(rng, 2), Eigen::MatrixXd::Identity(2, 2)}, random_vector(rng, 2),
      random_spd(rng, 2));
  const auto fc = unary_from_moments(c, random_vector(rng, 2), random_spd(rng, 2));

  const auto fused_abc = fuse({fa, fb, fc});
  const auto fused_cba = fuse({fc, fb, fa});
  const auto fused_nested = fuse({fuse({fa, fb}), fc});

  // Same key universe, so compare blocks key-by-key for exact equality.
  for (Key k : fused_abc.keys()) {
    for (Key l : fused_abc.keys()) {
      const auto blk = [&](const QuadraticFactor& f) {
        return f.info().block(f.offset_of(k), f.offset_of(l), f.dim_of(k), f.dim_of(l));
      };
      REQUIRE(blk(fused_abc) == blk(fused_cba));
      REQUIRE(blk(fused_abc) == blk(fused_nested));
    }
  }
}

TEST_CASE("fuse rejects dimension mismatches and names the offending key", "[gaussian]") {
  const auto f1 = unary_from_moments(sym('x', 7), Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2));
  const auto f2 = unary_from_moments(sym('x', 7), Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3));
  REQUIRE_THROWS_WITH(fuse({f1, f2}), Catch::Matchers::ContainsSubstring("x7"));
}

TEST_CASE("eliminating with zero cross-information decouples frontal and separator", "[gaussian]") {
  const Key x = sym('x', 0), s = sym('x', 1);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(4, 4);
  cov.topLeftCorner(2, 2) << 2.0, 0.5, 0.5, 1.0;
  cov.bottomRightCorner(2, 2) << 3.0, -0.2, -0.2, 0.7;
  Eigen::VectorXd mean(4);
  mean << 1.0, 2.0, 3.0, 4.0;
  const auto product = QuadraticFactor::from_density(GaussianDensity({x, s}, {2, 2}, mean, cov));

  const auto [cond, residual] = eliminate(product, {x});
  REQUIRE(cond.gain().cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(rel_err(cond.offset(), mean.head(2).eval()) < 1e-12);
  REQUIRE(rel_err(cond.covariance(), cov.topLeftCorner(2, 2).eval()) < 1e-12);
  const auto res_density = residual.to_density();
  REQUIRE(rel_err(res_density.mean(), mean.tail(2).eval()) < 1e-12);
  REQUIRE(rel_err(res_density.cov(), cov.bottomRightCorner(2, 2).eval()) < 1e-12);
}

TEST_CASE("scalar elimination matches direct dense inversion", "[gaussian]") {
  // Joint covariance [[2,1],[1,2]], zero means. Conditioning x on s gives
  // mean 0.5 s and variance 2 - 1*0.5 = 1.5; the marginal of s has variance 2.
  const Key x = sym('x', 0), s = sym('x', 1);
  Eigen::MatrixXd cov(2, 2);
  cov << 2.0, 1.0, 1.0, 2.0;
  const auto product =
      QuadraticFactor::from_density(GaussianDensity({x, s}, {1, 1}, Eigen::VectorXd::Zero(2), cov));
  const auto [cond, residual] = eliminate(product, {x});
  REQUIRE(cond.gain()(0, 0) == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(cond.offset()(0) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(cond.covariance()(0, 0) == Catch::Approx(1.5).epsilon(1e-12));
  REQUIRE(residual.to_density().cov()(0, 0) == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("eliminating the full key set yields the joint density and an empty residual", "[gaussian]") {
  std::mt19937_64 rng(5);
  const Key x = sym('x', 0), y = sym('x', 1);
  const Eigen::VectorXd mean = random_vector(rng, 4);
  const Eigen::MatrixXd cov = random_spd(rng, 4);
  const auto joint = GaussianDensity({x, y}, {2, 2}, mean, cov);
  const auto [cond, residual] = eliminate(QuadraticFactor::from_density(joint), {x, y});
  REQUIRE(residual.empty());
  REQUIRE(cond.separator_keys().empty());
  REQUIRE(rel_err(cond.offset(), mean) < 1e-10);
  REQUIRE(rel_err(cond.covariance(), cov) < 1e-10);
}

TEST_CASE("elimination of an unconstrained variable fails with a diagnostic", "[gaussian]") {
  // A binary factor alone does not constrain either endpoint on its own, but
  // here x1 has no information at all: only a prior on x0 and nothing else.
  const Key x0 = sym('x', 0), x1 = sym('x', 1);
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(2, 2);
  info(0, 0) = 1.0;
  const QuadraticFactor product({x0, x1}, {1, 1}, info, Eigen::VectorXd::Zero(2));
  REQUIRE_THROWS_WITH(eliminate(product, {x1}), Catch::Matchers::ContainsSubstring("x1"));
}

TEST_CASE("eliminate then re-multiply reproduces the product factor", "[gaussian]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const Key x = sym('x', 0), y = sym('x', 1), z = sym('x', 2);
    const std::vector<int> dims{2, 3, 1};
    const Eigen::MatrixXd cov = random_spd(rng, 6);
    const Eigen::VectorXd mean = random_vector(rng, 6);
    const auto product = QuadraticFactor::from_density(GaussianDensity({x, y, z}, dims, mean, cov));

    const auto [cond, residual] = eliminate(product, {x});
    const auto rebuilt = fuse({cond.to_factor(), residual});

    for (Key k : product.keys()) {
      for (Key l : product.keys()) {
        const Eigen::MatrixXd expect =
            product.info().block(product.offset_of(k), product.offset_of(l), product.dim_of(k),
                                 product.dim_of(l));
        const Eigen::MatrixXd got =
            rebuilt.info().block(rebuilt.offset_of(k), rebuilt.offset_of(l), rebuilt.dim_of(k),
                                 rebuilt.dim_of(l));
        REQUIRE(rel_err(got, expect) < 1e-10);
      }
    }
    const Eigen::VectorXd probe = random_vector(rng, 6);
    Eigen::VectorXd probe_rebuilt(6);
    int off = 0;
    for (Key k : rebuilt.keys()) {
      probe_rebuilt.segment(off, rebuilt.dim_of(k)) =
          probe.segment(product.offset_of(k), product.dim_of(k));
      off += rebuilt.dim_of(k);
    }
    REQUIRE(product.evaluate(probe) == Catch::Approx(rebuilt.evaluate(probe_rebuilt)).epsilon(1e-9));
  }
}

TEST_CASE("elimination order does not change the joint MAP on chain problems", "[gaussian]") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    constexpr int n = 5;
    GaussianFactorGraph graph;
    std::vector<Key> keys;
    for (int i = 0; i < n; ++i) keys.push_back(sym('x', i));
    graph.factors.push_back(unary_from_moments(keys[0], random_vector(rng, 2), random_spd(rng, 2)));
    for (int i = 1; i < n; ++i) {
      graph.factors.push_back(QuadraticFactor::from_linear(
          {keys[i - 1], keys[i]}, {2, 2},
          {-test_util::random_matrix(rng, 2, 2), Eigen::MatrixXd::Identity(2, 2)}, random_vector(rng, 2),
          random_spd(rng, 2)));
    }
    for (int i = 0; i < n; ++i)
      graph.factors.push_back(unary_from_moments(keys[i], random_vector(rng, 2), random_spd(rng, 2)));

    const auto forward = back_substitute(eliminate_sequential(graph, keys));
    std::vector<Key> reversed(keys.rbegin(), keys.rend());
    const auto backward = back_substitute(eliminate_sequential(graph, reversed));
    std::vector<Key> shuffled = keys;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto arbitrary = back_substitute(eliminate_sequential(graph, shuffled));

    for (Key k : keys) {
      REQUIRE(rel_err(backward.at(k), forward.at(k)) < 1e-9);
      REQUIRE(rel_err(arbitrary.at(k), forward.at(k)) < 1e-9);
    }
  }
}

TEST_CASE("marginal with the full key set is the identity", "[gaussian]") {
  std::mt19937_64 rng(7);
  const auto d = GaussianDensity({sym('x', 0), sym('x', 1)}, {2, 2}, random_vector(rng, 4),
                                 random_spd(rng, 4));
  const auto m = marginal(d, d.keys());
  REQUIRE(rel_err(m.mean(), d.mean()) == 0.0);
  REQUIRE(rel_err(m.cov(), d.cov()) == 0.0);
}

TEST_CASE("marginal extracts a diagonal block", "[gaussian]") {
  Eigen::VectorXd mean(2);
  mean << 10.0, 20.0;
  Eigen::MatrixXd cov = Eigen::Vector2d(1.0, 4.0).asDiagonal();
  const auto d = GaussianDensity({sym('x', 0), sym('x', 1)}, {1, 1}, mean, cov);
  const auto m = marginal(d, {sym('x', 1)});
  REQUIRE(m.mean()(0) == 20.0);
  REQUIRE(m.cov()(0, 0) == 4.0);
}

TEST_CASE("marginal of a random joint matches the permute-then-truncate oracle", "[gaussian]") {
  std::mt19937_64 rng(29);
  const std::vector<Key> keys{sym('x', 0), sym('x', 1), sym('x', 2)};
  const std::vector<int> dims{2, 1, 3};
  const Eigen::VectorXd mean = random_vector(rng, 6);
  const Eigen::MatrixXd cov = random_spd(rng, 6);
  const auto d = GaussianDensity(keys, dims, mean, cov);

  // Oracle: permutation matrix moving [x2, x0] to the front, then truncate.
  Eigen::MatrixXd perm = Eigen::MatrixXd::Zero(4, 6);
  perm.block(0, 3, 3, 3) = Eigen::MatrixXd::Identity(3, 3);  // x2 occupies rows 3..5
  perm.block(3, 0, 1, 2).setZero();
  perm.block(3, 0, 1, 2)(0, 0) = 1.0;  // first row of x0
  perm(3, 0) = 0.0;
  perm.block(3, 0, 1, 6).setZero();
  perm(3, 0) = 1.0;
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(5, 6);
  sel.block(0, 3, 3, 3) = Eigen::MatrixXd::Identity(3, 3);
  sel.block(3, 0, 2, 2) = Eigen::MatrixXd::Identity(2, 2);

  const auto m = marginal(d, {sym('x', 2), sym('x', 0)});
  REQUIRE(rel_err(m.mean(), (sel * mean).eval()) < 1e-14);
  REQUIRE(rel_err(m.cov(), (sel * cov * sel.transpose()).eval()) < 1e-14);
}

TEST_CASE("marginal rejects unknown keys", "[gaussian]") {
  const auto d = GaussianDensity::single(sym('x', 0), Eigen::VectorXd::Zero(1),
                                         Eigen::MatrixXd::Identity(1, 1));
  REQUIRE_THROWS_AS(marginal(d, {sym('z', 9)}), std::invalid_argument);
}
