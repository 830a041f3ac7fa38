/// \file gaussian.hpp
/// Gaussian densities and factors in information form, with closed-form
/// fusion, marginalization, and Schur-complement elimination.
///
/// Factors store the natural parameters (information matrix/vector) so that
/// fusion is blockwise addition and elimination is a partitioned Cholesky
/// solve. Densities store moment parameters (mean/covariance). All types are
/// immutable values after construction and safe to share across threads.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctgp {

using Key = std::uint64_t;

/// Packs a one-character tag and an index into a key, e.g. sym('x', 3).
constexpr Key sym(char tag, std::uint64_t index) {
  return (static_cast<Key>(static_cast<unsigned char>(tag)) << 56) | index;
}

inline char sym_tag(Key k) { return static_cast<char>(k >> 56); }
inline std::uint64_t sym_index(Key k) { return k & 0x00ffffffffffffffULL; }

inline std::string key_name(Key k) {
  const char tag = sym_tag(k);
  if (tag >= 'a' && tag <= 'z') return std::string(1, tag) + std::to_string(sym_index(k));
  return std::to_string(k);
}

namespace detail {

inline void check_symmetric(const Eigen::MatrixXd& m, double rel_tol, const char* what) {
  if (m.size() == 0) return;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > rel_tol * scale)
    throw std::invalid_argument(std::string(what) + ": matrix is not symmetric (asymmetry " +
                                std::to_string(asym / scale) + " relative)");
}

inline std::string join_keys(const std::vector<Key>& keys) {
  std::string s;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i) s += ", ";
    s += key_name(keys[i]);
  }
  return s;
}

}  // namespace detail

/// Moment-form Gaussian over an ordered set of keyed blocks.
class GaussianDensity {
 public:
  GaussianDensity(std::vector<Key> keys, std::vector<int> dims, Eigen::VectorXd mean,
                  Eigen::MatrixXd cov)
      : keys_(std::move(keys)), dims_(std::move(dims)), mean_(std::move(mean)), cov_(std::move(cov)) {
    if (keys_.size() != dims_.size())
      throw std::invalid_argument("GaussianDensity: keys/dims size mismatch");
    int total = 0;
    for (int d : dims_) total += d;
    if (mean_.size() != total || cov_.rows() != total || cov_.cols() != total)
      throw std::invalid_argument("GaussianDensity: mean/covariance dimensions inconsistent with keys");
    detail::check_symmetric(cov_, 1e-12, "GaussianDensity");
    cov_ = cov_.selfadjointView<Eigen::Upper>();  // mirror the upper triangle
    Eigen::LLT<Eigen::MatrixXd> llt(cov_);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("GaussianDensity: covariance is not positive-definite (keys " +
                                  detail::join_keys(keys_) + ")");
  }

  static GaussianDensity single(Key key, Eigen::VectorXd mean, Eigen::MatrixXd cov) {
    const int d = static_cast<int>(mean.size());
    return GaussianDensity({key}, {d}, std::move(mean), std::move(cov));
  }

  const std::vector<Key>& keys() const { return keys_; }
  const std::vector<int>& dims() const { return dims_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  /// Offset of a key's block within the stacked vector.
  int offset_of(Key key) const {
    int off = 0;
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i] == key) return off;
      off += dims_[i];
    }
    throw std::invalid_argument("GaussianDensity: unknown key " + key_name(key));
  }

  int dim_of(Key key) const {
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (keys_[i] == key) return dims_[i];
    throw std::invalid_argument("GaussianDensity: unknown key " + key_name(key));
  }

 private:
  std::vector<Key> keys_;
  std::vector<int> dims_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
};

/// A Gaussian factor in information form over an ordered set of keyed blocks.
///
/// The factor value (negative log, up to normalization) is
///   E(x) = 1/2 x^T L x - eta^T x + c,
/// with L the information matrix, eta the information vector. A density
/// N(mu, P) corresponds to L = P^-1, eta = P^-1 mu, c = 1/2 mu^T P^-1 mu.
class QuadraticFactor {
 public:
  QuadraticFactor(std::vector<Key> keys, std::vector<int> dims, Eigen::MatrixXd info,
                  Eigen::VectorXd info_vec, double constant = 0.0)
      : keys_(std::move(keys)),
        dims_(std::move(dims)),
        info_(std::move(info)),
        info_vec_(std::move(info_vec)),
        constant_(constant) {
    if (keys_.size() != dims_.size())
      throw std::invalid_argument("QuadraticFactor: keys/dims size mismatch");
    int total = 0;
    for (int d : dims_) total += d;
    if (info_.rows() != total || info_.cols() != total || info_vec_.size() != total)
      throw std::invalid_argument("QuadraticFactor: information dimensions inconsistent with keys");
    detail::check_symmetric(info_, 1e-9, "QuadraticFactor");
    info_ = info_.selfadjointView<Eigen::Upper>();
  }

  /// Unary prior factor equivalent to the given density.
  static QuadraticFactor from_density(const GaussianDensity& d) {
    Eigen::MatrixXd L = d.cov().llt().solve(Eigen::MatrixXd::Identity(d.dim(), d.dim()));
    L = (0.5 * (L + L.transpose())).eval();
    Eigen::VectorXd eta = L * d.mean();
    const double c = 0.5 * d.mean().dot(eta);
    return QuadraticFactor(d.keys(), d.dims(), std::move(L), std::move(eta), c);
  }

  /// Factor for the linear-Gaussian residual  e = sum_i J_i x_i - b,
  /// with cost 1/2 ||e||^2_{noise_cov}.
  static QuadraticFactor from_linear(std::vector<Key> keys, std::vector<int> dims,
                                     const std::vector<Eigen::MatrixXd>& jacobians,
                                     const Eigen::VectorXd& b, const Eigen::MatrixXd& noise_cov) {
    if (jacobians.size() != keys.size())
      throw std::invalid_argument("QuadraticFactor::from_linear: one Jacobian per key required");
    int total = 0;
    for (int d : dims) total += d;
    Eigen::MatrixXd J(b.size(), total);
    int off = 0;
    for (std::size_t i = 0; i < jacobians.size(); ++i) {
      if (jacobians[i].rows() != b.size() || jacobians[i].cols() != dims[i])
        throw std::invalid_argument("QuadraticFactor::from_linear: Jacobian shape mismatch for key " +
                                    key_name(keys[i]));
      J.middleCols(off, dims[i]) = jacobians[i];
      off += dims[i];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(noise_cov);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("QuadraticFactor::from_linear: noise covariance not SPD");
    const Eigen::MatrixXd Winv_J = llt.solve(J);
    Eigen::MatrixXd L = J.transpose() * Winv_J;
    L = (0.5 * (L + L.transpose())).eval();
    Eigen::VectorXd eta = Winv_J.transpose() * b;
    const double c = 0.5 * b.dot(llt.solve(b));
    return QuadraticFactor(std::move(keys), std::move(dims), std::move(L), std::move(eta), c);
  }

  const std::vector<Key>& keys() const { return keys_; }
  const std::vector<int>& dims() const { return dims_; }
  const Eigen::MatrixXd& info() const { return info_; }
  const Eigen::VectorXd& info_vector() const { return info_vec_; }
  double constant() const { return constant_; }
  int dim() const { return static_cast<int>(info_vec_.size()); }
  bool empty() const { return keys_.empty(); }

  int offset_of(Key key) const {
    int off = 0;
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i] == key) return off;
      off += dims_[i];
    }
    throw std::invalid_argument("QuadraticFactor: unknown key " + key_name(key));
  }

  int dim_of(Key key) const {
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (keys_[i] == key) return dims_[i];
    throw std::invalid_argument("QuadraticFactor: unknown key " + key_name(key));
  }

  /// E(x) for a stacked value vector in this factor's key order.
  double evaluate(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw std::invalid_argument("QuadraticFactor::evaluate: dimension mismatch");
    return 0.5 * x.dot(info_ * x) - info_vec_.dot(x) + constant_;
  }

  /// Converts an SPD factor to its moment-form density (mean = L^-1 eta).
  GaussianDensity to_density() const {
    Eigen::LLT<Eigen::MatrixXd> llt(info_);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("QuadraticFactor::to_density: information matrix not SPD (keys " +
                               detail::join_keys(keys_) + ")");
    Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
    cov = (0.5 * (cov + cov.transpose())).eval();
    Eigen::VectorXd mean = llt.solve(info_vec_);
    return GaussianDensity(keys_, dims_, std::move(mean), std::move(cov));
  }

 private:
  std::vector<Key> keys_;
  std::vector<int> dims_;
  Eigen::MatrixXd info_;
  Eigen::VectorXd info_vec_;
  double constant_ = 0.0;
};

/// Conditional p(x | s) = N(offset + gain * s, covariance) produced by
/// eliminating the frontal variables x from a product factor.
class ConditionalGaussian {
 public:
  ConditionalGaussian(std::vector<Key> frontal_keys, std::vector<int> frontal_dims,
                      std::vector<Key> separator_keys, std::vector<int> separator_dims,
                      Eigen::MatrixXd gain, Eigen::VectorXd offset, Eigen::MatrixXd covariance)
      : frontal_keys_(std::move(frontal_keys)),
        frontal_dims_(std::move(frontal_dims)),
        separator_keys_(std::move(separator_keys)),
        separator_dims_(std::move(separator_dims)),
        gain_(std::move(gain)),
        offset_(std::move(offset)),
        cov_(std::move(covariance)) {
    int fdim = 0, sdim = 0;
    for (int d : frontal_dims_) fdim += d;
    for (int d : separator_dims_) sdim += d;
    if (gain_.rows() != fdim || gain_.cols() != sdim || offset_.size() != fdim ||
        cov_.rows() != fdim || cov_.cols() != fdim)
      throw std::invalid_argument("ConditionalGaussian: inconsistent dimensions");
  }

  const std::vector<Key>& frontal_keys() const { return frontal_keys_; }
  const std::vector<int>& frontal_dims() const { return frontal_dims_; }
  const std::vector<Key>& separator_keys() const { return separator_keys_; }
  const std::vector<int>& separator_dims() const { return separator_dims_; }
  const Eigen::MatrixXd& gain() const { return gain_; }
  const Eigen::VectorXd& offset() const { return offset_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }

  /// Conditional mean for stacked separator values.
  Eigen::VectorXd mean_given(const Eigen::VectorXd& separator) const {
    if (separator.size() != gain_.cols())
      throw std::invalid_argument("ConditionalGaussian::mean_given: separator dimension mismatch");
    return offset_ + gain_ * separator;
  }

  /// The conditional as a quadratic factor over (frontal, separator), i.e.
  /// 1/2 ||x - gain*s - offset||^2_cov. Multiplying this with the residual
  /// factor reproduces the eliminated product factor.
  QuadraticFactor to_factor() const {
    std::vector<Key> keys = frontal_keys_;
    keys.insert(keys.end(), separator_keys_.begin(), separator_keys_.end());
    std::vector<int> dims = frontal_dims_;
    dims.insert(dims.end(), separator_dims_.begin(), separator_dims_.end());
    const int fdim = static_cast<int>(offset_.size());
    const int sdim = static_cast<int>(gain_.cols());
    std::vector<Eigen::MatrixXd> jac;
    int off = 0;
    for (int d : frontal_dims_) {
      jac.push_back(Eigen::MatrixXd::Identity(fdim, fdim).middleCols(off, d));
      off += d;
    }
    off = 0;
    for (int d : separator_dims_) {
      jac.push_back(-gain_.middleCols(off, d));
      off += d;
    }
    (void)sdim;
    return QuadraticFactor::from_linear(std::move(keys), std::move(dims), jac, offset_, cov_);
  }

 private:
  std::vector<Key> frontal_keys_;
  std::vector<int> frontal_dims_;
  std::vector<Key> separator_keys_;
  std::vector<int> separator_dims_;
  Eigen::MatrixXd gain_;    // maps stacked separator values to a frontal-mean offset
  Eigen::VectorXd offset_;
  Eigen::MatrixXd cov_;
};

/// Sums factors blockwise on the union of their key sets. The minimizer of
/// the fused factor is the joint MAP of the inputs.
inline QuadraticFactor fuse(const std::vector<QuadraticFactor>& factors) {
  if (factors.empty()) return QuadraticFactor({}, {}, Eigen::MatrixXd(0, 0), Eigen::VectorXd(0), 0.0);

  std::vector<Key> keys;
  std::vector<int> dims;
  std::map<Key, int> index;  // key -> position in union
  for (const auto& f : factors) {
    for (std::size_t i = 0; i < f.keys().size(); ++i) {
      const Key k = f.keys()[i];
      auto it = index.find(k);
      if (it == index.end()) {
        index[k] = static_cast<int>(keys.size());
        keys.push_back(k);
        dims.push_back(f.dims()[i]);
      } else if (dims[it->second] != f.dims()[i]) {
        throw std::invalid_argument("fuse: dimension mismatch for key " + key_name(k) + " (" +
                                    std::to_string(dims[it->second]) + " vs " +
                                    std::to_string(f.dims()[i]) + ")");
      }
    }
  }

  int total = 0;
  std::vector<int> offsets(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    offsets[i] = total;
    total += dims[i];
  }

  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(total, total);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(total);
  double c = 0.0;
  for (const auto& f : factors) {
    c += f.constant();
    int row_off_f = 0;
    for (std::size_t i = 0; i < f.keys().size(); ++i) {
      const int gi = offsets[index[f.keys()[i]]];
      eta.segment(gi, f.dims()[i]) += f.info_vector().segment(row_off_f, f.dims()[i]);
      int col_off_f = 0;
      for (std::size_t j = 0; j < f.keys().size(); ++j) {
        const int gj = offsets[index[f.keys()[j]]];
        L.block(gi, gj, f.dims()[i], f.dims()[j]) +=
            f.info().block(row_off_f, col_off_f, f.dims()[i], f.dims()[j]);
        col_off_f += f.dims()[j];
      }
      row_off_f += f.dims()[i];
    }
  }
  return QuadraticFactor(std::move(keys), std::move(dims), std::move(L), std::move(eta), c);
}

namespace detail {

/// Returns the frontal keys whose diagonal information block is singular,
/// used to produce a useful diagnostic when elimination fails.
inline std::vector<Key> singular_keys(const QuadraticFactor& f, const std::vector<Key>& frontal) {
  std::vector<Key> bad;
  for (Key k : frontal) {
    const int off = f.offset_of(k);
    const int d = f.dim_of(k);
    Eigen::MatrixXd blk = f.info().block(off, off, d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(blk);
    if (llt.info() != Eigen::Success) bad.push_back(k);
  }
  return bad;
}

}  // namespace detail

/// Eliminates the frontal variables from a product factor via the Schur
/// complement, yielding the conditional p(frontal | separator) and the
/// residual factor (the marginal) on the separator.
inline std::pair<ConditionalGaussian, QuadraticFactor> eliminate(const QuadraticFactor& product,
                                                                 const std::vector<Key>& frontal) {
  // Partition indices into frontal block (in the requested order) and separator.
  std::vector<Key> sep_keys;
  std::vector<int> sep_dims;
  for (std::size_t i = 0; i < product.keys().size(); ++i) {
    if (std::find(frontal.begin(), frontal.end(), product.keys()[i]) == frontal.end()) {
      sep_keys.push_back(product.keys()[i]);
      sep_dims.push_back(product.dims()[i]);
    }
  }
  std::vector<int> f_dims;
  f_dims.reserve(frontal.size());
  int fdim = 0, sdim = 0;
  for (Key k : frontal) {
    f_dims.push_back(product.dim_of(k));  // throws on unknown key
    fdim += f_dims.back();
  }
  for (int d : sep_dims) sdim += d;

  // Gather the partitioned information blocks.
  Eigen::MatrixXd Lff(fdim, fdim), Lfs(fdim, sdim), Lss(sdim, sdim);
  Eigen::VectorXd ef(fdim), es(sdim);
  {
    auto copy_rows = [&](const std::vector<Key>& row_keys, Eigen::MatrixXd& Mf, Eigen::MatrixXd* Ms,
                         Eigen::VectorXd& ev) {
      int r = 0;
      for (Key rk : row_keys) {
        const int ro = product.offset_of(rk), rd = product.dim_of(rk);
        ev.segment(r, rd) = product.info_vector().segment(ro, rd);
        int c = 0;
        for (Key ck : frontal) {
          const int co = product.offset_of(ck), cd = product.dim_of(ck);
          Mf.block(r, c, rd, cd) = product.info().block(ro, co, rd, cd);
          c += cd;
        }
        if (Ms) {
          c = 0;
          for (Key ck : sep_keys) {
            const int co = product.offset_of(ck), cd = product.dim_of(ck);
            Ms->block(r, c, rd, cd) = product.info().block(ro, co, rd, cd);
            c += cd;
          }
        }
        r += rd;
      }
    };
    copy_rows(frontal, Lff, &Lfs, ef);
    Eigen::MatrixXd Lsf(sdim, fdim);
    copy_rows(sep_keys, Lsf, &Lss, es);
    (void)Lsf;  // Lsf = Lfs^T by symmetry
  }

  Eigen::LLT<Eigen::MatrixXd> llt(Lff);
  if (llt.info() != Eigen::Success) {
    const auto bad = detail::singular_keys(product, frontal);
    throw std::runtime_error("eliminate: frontal information block is singular; unconstrained key(s): " +
                             detail::join_keys(bad.empty() ? frontal : bad));
  }

  // Conditional: covariance Lff^-1, gain -Lff^-1 Lfs, offset Lff^-1 ef.
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(fdim, fdim));
  cov = (0.5 * (cov + cov.transpose())).eval();
  Eigen::MatrixXd gain = -llt.solve(Lfs);
  Eigen::VectorXd offset = llt.solve(ef);

  // Residual on the separator: Schur complement of the frontal block.
  Eigen::MatrixXd Lres = Lss - Lfs.transpose() * llt.solve(Lfs);
  Lres = (0.5 * (Lres + Lres.transpose())).eval();
  Eigen::VectorXd eres = es - Lfs.transpose() * offset;
  const double cres = product.constant() - 0.5 * ef.dot(offset);

  ConditionalGaussian cond(frontal, f_dims, sep_keys, sep_dims, std::move(gain), std::move(offset),
                           std::move(cov));
  QuadraticFactor residual(std::move(sep_keys), std::move(sep_dims), std::move(Lres), std::move(eres),
                           cres);
  return {std::move(cond), std::move(residual)};
}

/// Extracts the marginal over a subset of keys, preserving cross-covariances
/// within the subset.
inline GaussianDensity marginal(const GaussianDensity& density, const std::vector<Key>& subset) {
  std::vector<int> dims;
  int total = 0;
  for (Key k : subset) {
    dims.push_back(density.dim_of(k));  // throws on unknown key
    total += dims.back();
  }
  Eigen::VectorXd mean(total);
  Eigen::MatrixXd cov(total, total);
  int r = 0;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const int ro = density.offset_of(subset[i]);
    mean.segment(r, dims[i]) = density.mean().segment(ro, dims[i]);
    int c = 0;
    for (std::size_t j = 0; j < subset.size(); ++j) {
      const int co = density.offset_of(subset[j]);
      cov.block(r, c, dims[i], dims[j]) = density.cov().block(ro, co, dims[i], dims[j]);
      c += dims[j];
    }
    r += dims[i];
  }
  return GaussianDensity(subset, std::move(dims), std::move(mean), std::move(cov));
}

/// A bipartite factor-variable structure (factors reference variables by key).
struct GaussianFactorGraph {
  std::vector<QuadraticFactor> factors;
};

/// The eliminated, directed form of a factor graph: one conditional per
/// eliminated variable, in elimination order.
struct BayesNet {
  std::vector<ConditionalGaussian> conditionals;
};

/// Sequentially eliminates variables in the given order. At each step, all
/// factors touching the variable are fused into a product factor, the
/// variable is eliminated, and the residual joins the remaining pool.
inline BayesNet eliminate_sequential(const GaussianFactorGraph& graph, const std::vector<Key>& order) {
  std::vector<QuadraticFactor> pool = graph.factors;
  BayesNet net;
  net.conditionals.reserve(order.size());
  for (Key k : order) {
    std::vector<QuadraticFactor> touching;
    std::vector<QuadraticFactor> rest;
    for (auto& f : pool) {
      const bool touches = std::find(f.keys().begin(), f.keys().end(), k) != f.keys().end();
      (touches ? touching : rest).push_back(std::move(f));
    }
    if (touching.empty())
      throw std::runtime_error("eliminate_sequential: no factor touches key " + key_name(k) +
                               " (disconnected variable)");
    QuadraticFactor product = fuse(touching);
    auto [cond, residual] = eliminate(product, {k});
    net.conditionals.push_back(std::move(cond));
    pool = std::move(rest);
    if (!residual.empty()) pool.push_back(std::move(residual));
  }
  return net;
}

/// Posterior covariance blocks recovered from a Bayes net produced by
/// eliminate_sequential (single-frontal conditionals). Built on the
/// recursions  Cov(a, a) = S_a + G_a Cov(S_a, S_a) G_a^T  and, for a
/// eliminated before b,  Cov(a, b) = G_a Cov(S_a, b);  blocks are memoized
/// so chain problems stay O(K).
class BayesNetCovariance {
 public:
  explicit BayesNetCovariance(BayesNet net) : net_(std::move(net)) {
    for (std::size_t i = 0; i < net_.conditionals.size(); ++i) {
      const auto& c = net_.conditionals[i];
      if (c.frontal_keys().size() != 1)
        throw std::invalid_argument("BayesNetCovariance: single-frontal conditionals required");
      order_[c.frontal_keys()[0]] = static_cast<int>(i);
    }
  }

  /// Cov(a, b) in the joint posterior.
  Eigen::MatrixXd block(Key a, Key b) const {
    const int oa = order_.at(a), ob = order_.at(b);
    if (oa > ob) return block(b, a).transpose();
    const auto it = cache_.find({a, b});
    if (it != cache_.end()) return it->second;

    const auto& cond = net_.conditionals[oa];
    Eigen::MatrixXd result;
    if (a == b) {
      result = cond.covariance() +
               cond.gain() * joint(cond.separator_keys()) * cond.gain().transpose();
      result = (0.5 * (result + result.transpose())).eval();
    } else {
      // a eliminated strictly before b: stack Cov(s, b) over the separator.
      const int bdim = net_.conditionals[ob].covariance().rows();
      Eigen::MatrixXd sep_cov(cond.gain().cols(), bdim);
      int off = 0;
      for (std::size_t i = 0; i < cond.separator_keys().size(); ++i) {
        sep_cov.middleRows(off, cond.separator_dims()[i]) = block(cond.separator_keys()[i], b);
        off += cond.separator_dims()[i];
      }
      result = cond.gain() * sep_cov;
    }
    cache_[{a, b}] = result;
    return result;
  }

  /// Joint covariance over a key list.
  Eigen::MatrixXd joint(const std::vector<Key>& keys) const {
    int total = 0;
    std::vector<int> dims;
    for (Key k : keys) {
      dims.push_back(net_.conditionals[order_.at(k)].covariance().rows());
      total += dims.back();
    }
    Eigen::MatrixXd out(total, total);
    int r = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      int c = 0;
      for (std::size_t j = 0; j < keys.size(); ++j) {
        out.block(r, c, dims[i], dims[j]) = block(keys[i], keys[j]);
        c += dims[j];
      }
      r += dims[i];
    }
    return out;
  }

 private:
  BayesNet net_;
  std::map<Key, int> order_;
  mutable std::map<std::pair<Key, Key>, Eigen::MatrixXd> cache_;
};

/// Back-substitutes through a Bayes net (reverse elimination order) to
/// recover the joint MAP values.
inline std::map<Key, Eigen::VectorXd> back_substitute(const BayesNet& net) {
  std::map<Key, Eigen::VectorXd> values;
  for (auto it = net.conditionals.rbegin(); it != net.conditionals.rend(); ++it) {
    const auto& c = *it;
    int sdim = 0;
    for (int d : c.separator_dims()) sdim += d;
    Eigen::VectorXd s(sdim);
    int off = 0;
    for (std::size_t i = 0; i < c.separator_keys().size(); ++i) {
      s.segment(off, c.separator_dims()[i]) = values.at(c.separator_keys()[i]);
      off += c.separator_dims()[i];
    }
    const Eigen::VectorXd x = c.mean_given(s);
    off = 0;
    for (std::size_t i = 0; i < c.frontal_keys().size(); ++i) {
      values[c.frontal_keys()[i]] = x.segment(off, c.frontal_dims()[i]);
      off += c.frontal_dims()[i];
    }
  }
  return values;
}

}  // namespace ctgp
