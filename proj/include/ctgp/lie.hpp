/// \file lie.hpp
/// Matrix Lie-group primitives for SE(2) and SE(3).
///
/// Tangent coordinates are ordered translation-first: (rho, theta) for
/// SE(2) and (rho, phi) for SE(3), translations in meters and rotations in
/// radians. Perturbations follow the right (body-frame) convention
/// T = T_op * Exp(eps) throughout, and covariances live in that tangent.
///
/// The right Jacobian of the exponential map and its directional
/// derivatives are evaluated from the adjoint series, summed to machine
/// precision; small rotations need no special casing there because the
/// series has no removable singularity. Exp/Log use the usual closed forms
/// with second-order Taylor branches below rotation norm 1e-6.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace ctgp {

namespace lie_detail {

inline Eigen::Matrix2d rot2(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

inline Eigen::Matrix3d hat3(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline void check_rotation(const Eigen::MatrixXd& r, const char* what) {
  const double drift = (r.transpose() * r - Eigen::MatrixXd::Identity(r.rows(), r.cols()))
                           .cwiseAbs()
                           .maxCoeff();
  if (drift > 1e-9 || r.determinant() < 0.0)
    throw std::invalid_argument(std::string(what) + ": rotation block not orthonormal with det +1");
}

/// Projects a near-rotation onto the closest rotation matrix.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& r) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Eigen::MatrixXd u = svd.matrixU();
    u.col(u.cols() - 1) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

inline constexpr double kSmallAngle = 1e-6;
inline constexpr double kWrapGuard = 1e-9;  // reject |angle| >= pi - guard

}  // namespace lie_detail

/// Rigid transform in the plane, stored as a 3x3 homogeneous matrix.
class SE2 {
 public:
  static constexpr int Dof = 3;
  using Tangent = Eigen::Vector3d;                  // (rho_x, rho_y, theta)
  using Adj = Eigen::Matrix3d;                      // Dof x Dof operators
  using Hom = Eigen::Matrix3d;

  SE2() : mat_(Hom::Identity()) {}

  explicit SE2(const Hom& m) : mat_(m) {
    lie_detail::check_rotation(m.topLeftCorner<2, 2>(), "SE2");
    if (std::abs(m(2, 0)) > 1e-12 || std::abs(m(2, 1)) > 1e-12 || std::abs(m(2, 2) - 1.0) > 1e-12)
      throw std::invalid_argument("SE2: bottom row must be (0, 0, 1)");
  }

  static SE2 Identity() { return SE2(); }

  static SE2 Exp(const Tangent& xi) {
    const double theta = xi.z();
    double a, b;  // sin(t)/t and (1-cos(t))/t
    if (std::abs(theta) < lie_detail::kSmallAngle) {
      a = 1.0 - theta * theta / 6.0;
      b = theta / 2.0 - theta * theta * theta / 24.0;
    } else {
      a = std::sin(theta) / theta;
      b = (1.0 - std::cos(theta)) / theta;
    }
    Eigen::Matrix2d v;
    v << a, -b, b, a;
    SE2 out;
    out.mat_.topLeftCorner<2, 2>() = lie_detail::rot2(theta);
    out.mat_.topRightCorner<2, 1>() = v * xi.head<2>();
    return out;
  }

  Tangent Log() const {
    const double theta = std::atan2(mat_(1, 0), mat_(0, 0));
    if (std::abs(theta) >= M_PI - lie_detail::kWrapGuard)
      throw std::runtime_error("SE2::Log: rotation at the injectivity radius (|theta| ~ pi), "
                               "logarithm wraps around");
    double a, b;
    if (std::abs(theta) < lie_detail::kSmallAngle) {
      a = 1.0 - theta * theta / 6.0;
      b = theta / 2.0 - theta * theta * theta / 24.0;
    } else {
      a = std::sin(theta) / theta;
      b = (1.0 - std::cos(theta)) / theta;
    }
    Eigen::Matrix2d v;
    v << a, -b, b, a;
    Tangent xi;
    xi.head<2>() = v.inverse() * mat_.topRightCorner<2, 1>();
    xi.z() = theta;
    return xi;
  }

  SE2 operator*(const SE2& rhs) const {
    SE2 out;
    out.mat_ = mat_ * rhs.mat_;
    return out;
  }

  SE2 inverse() const {
    SE2 out;
    const Eigen::Matrix2d rt = mat_.topLeftCorner<2, 2>().transpose();
    out.mat_.topLeftCorner<2, 2>() = rt;
    out.mat_.topRightCorner<2, 1>() = -rt * mat_.topRightCorner<2, 1>();
    return out;
  }

  static Hom hat(const Tangent& xi) {
    Hom m = Hom::Zero();
    m(0, 1) = -xi.z();
    m(1, 0) = xi.z();
    m.topRightCorner<2, 1>() = xi.head<2>();
    return m;
  }

  static Tangent vee(const Hom& m) { return Tangent(m(0, 2), m(1, 2), m(1, 0)); }

  /// Group Adjoint: Exp(adjoint() * xi) = T * Exp(xi) * T^-1.
  Adj adjoint() const {
    Adj out;
    for (int i = 0; i < Dof; ++i) {
      Tangent e = Tangent::Zero();
      e(i) = 1.0;
      out.col(i) = vee(mat_ * hat(e) * unchecked_inverse());
    }
    return out;
  }

  /// Algebra adjoint ad(xi) = d/dt Adj(Exp(t xi)) at t=0 (matrix bracket).
  static Adj ad(const Tangent& xi) {
    Adj out;
    for (int i = 0; i < Dof; ++i) {
      Tangent e = Tangent::Zero();
      e(i) = 1.0;
      out.col(i) = vee(hat(xi) * hat(e) - hat(e) * hat(xi));
    }
    return out;
  }

  const Hom& matrix() const { return mat_; }
  Eigen::Vector2d translation() const { return mat_.topRightCorner<2, 1>(); }
  double angle() const { return std::atan2(mat_(1, 0), mat_(0, 0)); }
  Eigen::Matrix2d rotation() const { return mat_.topLeftCorner<2, 2>(); }

  double rotation_drift() const {
    return (rotation().transpose() * rotation() - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff();
  }

  SE2 renormalized() const {
    SE2 out;
    out.mat_.topLeftCorner<2, 2>() = lie_detail::orthonormalize(rotation());
    out.mat_.topRightCorner<2, 1>() = translation();
    return out;
  }

 private:
  Hom unchecked_inverse() const {
    Hom m = Hom::Identity();
    const Eigen::Matrix2d rt = mat_.topLeftCorner<2, 2>().transpose();
    m.topLeftCorner<2, 2>() = rt;
    m.topRightCorner<2, 1>() = -rt * mat_.topRightCorner<2, 1>();
    return m;
  }

  Hom mat_;
};

/// Rigid transform in space, stored as a 4x4 homogeneous matrix.
class SE3 {
 public:
  static constexpr int Dof = 6;
  using Tangent = Eigen::Matrix<double, 6, 1>;      // (rho, phi)
  using Adj = Eigen::Matrix<double, 6, 6>;
  using Hom = Eigen::Matrix4d;

  SE3() : mat_(Hom::Identity()) {}

  explicit SE3(const Hom& m) : mat_(m) {
    lie_detail::check_rotation(m.topLeftCorner<3, 3>(), "SE3");
    if (m.row(3).head<3>().cwiseAbs().maxCoeff() > 1e-12 || std::abs(m(3, 3) - 1.0) > 1e-12)
      throw std::invalid_argument("SE3: bottom row must be (0, 0, 0, 1)");
  }

  static SE3 Identity() { return SE3(); }

  static SE3 Exp(const Tangent& xi) {
    const Eigen::Vector3d rho = xi.head<3>();
    const Eigen::Vector3d phi = xi.tail<3>();
    const double theta = phi.norm();
    const Eigen::Matrix3d p_hat = lie_detail::hat3(phi);
    double a1, a2, b2;  // Rodrigues and V-matrix coefficients
    if (theta < lie_detail::kSmallAngle) {
      a1 = 1.0 - theta * theta / 6.0;
      a2 = 0.5 - theta * theta / 24.0;
      b2 = 1.0 / 6.0 - theta * theta / 120.0;
    } else {
      a1 = std::sin(theta) / theta;
      a2 = (1.0 - std::cos(theta)) / (theta * theta);
      b2 = (theta - std::sin(theta)) / (theta * theta * theta);
    }
    const Eigen::Matrix3d r = Eigen::Matrix3d::Identity() + a1 * p_hat + a2 * p_hat * p_hat;
    const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + a2 * p_hat + b2 * p_hat * p_hat;
    SE3 out;
    out.mat_.topLeftCorner<3, 3>() = r;
    out.mat_.topRightCorner<3, 1>() = v * rho;
    return out;
  }

  Tangent Log() const {
    const Eigen::Matrix3d r = mat_.topLeftCorner<3, 3>();
    const Eigen::AngleAxisd aa(r);
    const double theta = aa.angle();
    if (theta >= M_PI - lie_detail::kWrapGuard)
      throw std::runtime_error("SE3::Log: rotation at the injectivity radius (angle ~ pi), "
                               "logarithm wraps around");
    const Eigen::Vector3d phi = theta * aa.axis();
    const Eigen::Matrix3d p_hat = lie_detail::hat3(phi);
    double a2, b2;
    if (theta < lie_detail::kSmallAngle) {
      a2 = 0.5 - theta * theta / 24.0;
      b2 = 1.0 / 6.0 - theta * theta / 120.0;
    } else {
      a2 = (1.0 - std::cos(theta)) / (theta * theta);
      b2 = (theta - std::sin(theta)) / (theta * theta * theta);
    }
    const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + a2 * p_hat + b2 * p_hat * p_hat;
    Tangent xi;
    xi.head<3>() = v.lu().solve(mat_.topRightCorner<3, 1>());
    xi.tail<3>() = phi;
    return xi;
  }

  SE3 operator*(const SE3& rhs) const {
    SE3 out;
    out.mat_ = mat_ * rhs.mat_;
    return out;
  }

  SE3 inverse() const {
    SE3 out;
    const Eigen::Matrix3d rt = mat_.topLeftCorner<3, 3>().transpose();
    out.mat_.topLeftCorner<3, 3>() = rt;
    out.mat_.topRightCorner<3, 1>() = -rt * mat_.topRightCorner<3, 1>();
    return out;
  }

  static Hom hat(const Tangent& xi) {
    Hom m = Hom::Zero();
    m.topLeftCorner<3, 3>() = lie_detail::hat3(xi.tail<3>());
    m.topRightCorner<3, 1>() = xi.head<3>();
    return m;
  }

  static Tangent vee(const Hom& m) {
    Tangent xi;
    xi.head<3>() = m.topRightCorner<3, 1>();
    xi.tail<3>() = Eigen::Vector3d(m(2, 1), m(0, 2), m(1, 0));
    return xi;
  }

  Adj adjoint() const {
    Adj out;
    const Eigen::Matrix3d r = mat_.topLeftCorner<3, 3>();
    out.topLeftCorner<3, 3>() = r;
    out.topRightCorner<3, 3>() = lie_detail::hat3(mat_.topRightCorner<3, 1>()) * r;
    out.bottomLeftCorner<3, 3>().setZero();
    out.bottomRightCorner<3, 3>() = r;
    return out;
  }

  static Adj ad(const Tangent& xi) {
    Adj out;
    const Eigen::Matrix3d rho_hat = lie_detail::hat3(xi.head<3>());
    const Eigen::Matrix3d phi_hat = lie_detail::hat3(xi.tail<3>());
    out.topLeftCorner<3, 3>() = phi_hat;
    out.topRightCorner<3, 3>() = rho_hat;
    out.bottomLeftCorner<3, 3>().setZero();
    out.bottomRightCorner<3, 3>() = phi_hat;
    return out;
  }

  const Hom& matrix() const { return mat_; }
  Eigen::Vector3d translation() const { return mat_.topRightCorner<3, 1>(); }
  Eigen::Matrix3d rotation() const { return mat_.topLeftCorner<3, 3>(); }

  double rotation_drift() const {
    return (rotation().transpose() * rotation() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  }

  SE3 renormalized() const {
    SE3 out;
    out.mat_.topLeftCorner<3, 3>() = lie_detail::orthonormalize(rotation());
    out.mat_.topRightCorner<3, 1>() = translation();
    return out;
  }

 private:
  Hom mat_;
};

/// Right Jacobian of the exponential map, from the adjoint series
/// J_r(xi) = sum_n (-ad_xi)^n / (n+1)!, summed to machine precision.
template <class G>
typename G::Adj right_jacobian(const typename G::Tangent& xi) {
  using Adj = typename G::Adj;
  const Adj m = -G::ad(xi);
  Adj jac = Adj::Identity();
  Adj term = Adj::Identity();
  for (int n = 1; n <= 150; ++n) {
    term = (term * m / static_cast<double>(n + 1)).eval();
    jac += term;
    if (term.cwiseAbs().maxCoeff() < 1e-17) break;
  }
  return jac;
}

/// Matrix inverse of the right Jacobian; rejects the poles where J becomes
/// singular (rotation angles around multiples of 2*pi).
template <class G>
typename G::Adj right_jacobian_inv(const typename G::Tangent& xi) {
  const typename G::Adj jac = right_jacobian<G>(xi);
  Eigen::PartialPivLU<typename G::Adj> lu(jac);
  const double det = std::abs(lu.determinant());
  if (det < 1e-12)
    throw std::runtime_error("right_jacobian_inv: Jacobian is numerically singular at this tangent");
  return lu.solve(G::Adj::Identity());
}

/// Directional-derivative matrix of  xi -> J_r(xi) w  in xi, from the exact
/// differentiated series (machine-precision analytic Jacobian).
template <class G>
typename G::Adj d_right_jacobian_times(const typename G::Tangent& xi, const typename G::Tangent& w) {
  using Adj = typename G::Adj;
  using Tan = typename G::Tangent;
  const Adj m = -G::ad(xi);

  // Powers m^j and iterates w_i = m^i w, grown until the series terms decay.
  std::vector<Adj> pow{Adj::Identity()};
  std::vector<Tan> wv{w};
  const double scale = std::max(1.0, w.norm());
  double coeff = 1.0;  // c_n = 1/(n+1)!
  int order = 0;
  for (int n = 1; n <= 150; ++n) {
    coeff /= static_cast<double>(n + 1);
    pow.push_back((pow.back() * m).eval());
    wv.push_back(m * wv.back());
    order = n;
    if (coeff * pow.back().cwiseAbs().maxCoeff() * scale < 1e-17 && n >= 4) break;
  }

  Adj deriv = Adj::Zero();
  coeff = 1.0;
  for (int n = 1; n <= order; ++n) {
    coeff /= static_cast<double>(n + 1);
    for (int j = 0; j < n; ++j) deriv += coeff * pow[j] * G::ad(wv[n - 1 - j]);
  }
  return deriv;
}

/// Directional-derivative matrix of  xi -> J_r(xi)^-1 w,  via
/// d(J^-1 w) = -J^-1 d(J u) with u = J^-1 w.
template <class G>
typename G::Adj d_right_jacobian_inv_times(const typename G::Tangent& xi,
                                           const typename G::Tangent& w) {
  const typename G::Adj jinv = right_jacobian_inv<G>(xi);
  return -jinv * d_right_jacobian_times<G>(xi, jinv * w);
}

/// Right perturbation T * Exp(eps); re-orthonormalizes if accumulated
/// rotation drift exceeds 1e-12.
template <class G>
G perturb(const G& T, const typename G::Tangent& eps) {
  G out = T * G::Exp(eps);
  if (out.rotation_drift() > 1e-12) out = out.renormalized();
  return out;
}

/// Gaussian on the group: T = mean * Exp(xi), xi ~ N(0, cov) in the right
/// tangent.
template <class G>
struct LieGaussian {
  G mean;
  Eigen::Matrix<double, G::Dof, G::Dof> cov;

  LieGaussian(G m, Eigen::Matrix<double, G::Dof, G::Dof> c) : mean(std::move(m)), cov(std::move(c)) {
    Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(cov)};
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("LieGaussian: covariance must be SPD");
  }
};

}  // namespace ctgp
