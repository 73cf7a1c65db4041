#pragma once

// Quaternion tangent-space operators shared by every layer that touches base
// orientation. Conventions, used consistently across the codebase:
//   - unit quaternions, serialized component order (w, x, y, z)
//   - tangent vectors are world-frame rotation vectors (angle * axis)
//   - perturbations compose on the left: boxplus(q, d) = exp(d) * q, which
//     matches world-frame angular velocities (qdot = 1/2 * omega * q)
//   - boxminus(p, q) = log(p * q^-1), so boxplus(q, boxminus(p, q)) == p up to
//     quaternion sign

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace hmpc {

// what to do with an input quaternion that fails the unit-norm check
enum class QuatPolicy { kReject, kNormalize };

template <typename S>
constexpr S quat_norm_tol() {
  return static_cast<S>(sizeof(S) >= 8 ? 1e-9 : 1e-5);
}

template <typename S>
Eigen::Quaternion<S> require_unit(const Eigen::Quaternion<S>& q,
                                  QuatPolicy policy = QuatPolicy::kReject) {
  const S err = std::abs(q.norm() - S(1));
  if (err <= quat_norm_tol<S>()) return q;
  if (policy == QuatPolicy::kNormalize) return q.normalized();
  throw std::invalid_argument("quaternion norm deviates from 1 beyond tolerance");
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(
    const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Eigen::Matrix<S, 3, 3> m;
  m << S(0), -v(2), v(1), v(2), S(0), -v(0), -v(1), v(0), S(0);
  return m;
}

// exponential map: rotation vector -> unit quaternion (half-angle form)
template <typename Derived>
Eigen::Quaternion<typename Derived::Scalar> quat_exp(
    const Eigen::MatrixBase<Derived>& delta) {
  using S = typename Derived::Scalar;
  const Eigen::Matrix<S, 3, 1> d = delta;
  const S theta = d.norm();
  S w, k;
  if (theta < S(1e-8)) {
    // cos(t/2) and sin(t/2)/t series; keeps exp exact to double precision
    w = S(1) - theta * theta / S(8);
    k = S(0.5) - theta * theta / S(48);
  } else {
    w = std::cos(theta / S(2));
    k = std::sin(theta / S(2)) / theta;
  }
  Eigen::Quaternion<S> q(w, k * d.x(), k * d.y(), k * d.z());
  q.normalize();
  return q;
}

// log map: unit quaternion -> rotation vector with angle in [0, pi]. At angle
// exactly pi the axis sign is ambiguous; the representative with non-negative
// first nonzero component is returned so downstream consumers are
// deterministic.
template <typename S>
Eigen::Matrix<S, 3, 1> quat_log(const Eigen::Quaternion<S>& q_in) {
  Eigen::Quaternion<S> q = q_in;
  if (q.w() < S(0)) q.coeffs() = -q.coeffs();  // pick the w >= 0 cover
  const Eigen::Matrix<S, 3, 1> v = q.vec();
  const S vn = v.norm();
  Eigen::Matrix<S, 3, 1> delta;
  if (vn < S(1e-9)) {
    // atan2(vn, w)/vn series around vn = 0 (w ~ 1)
    delta = v * (S(2) / q.w()) * (S(1) - vn * vn / (S(3) * q.w() * q.w()));
  } else {
    const S theta = S(2) * std::atan2(vn, q.w());
    delta = v * (theta / vn);
  }
  if (q.w() < S(1e-12)) {
    // angle == pi: force the sign convention
    for (int i = 0; i < 3; ++i) {
      if (delta(i) != S(0)) {
        if (delta(i) < S(0)) delta = -delta;
        break;
      }
    }
  }
  return delta;
}

template <typename S, typename Derived>
Eigen::Quaternion<S> quat_boxplus(const Eigen::Quaternion<S>& q,
                                  const Eigen::MatrixBase<Derived>& delta,
                                  QuatPolicy policy = QuatPolicy::kReject) {
  const Eigen::Quaternion<S> qc = require_unit(q, policy);
  Eigen::Quaternion<S> r = quat_exp(delta) * qc;
  r.normalize();
  return r;
}

template <typename S>
Eigen::Matrix<S, 3, 1> quat_boxminus(const Eigen::Quaternion<S>& p,
                                     const Eigen::Quaternion<S>& q,
                                     QuatPolicy policy = QuatPolicy::kReject) {
  const Eigen::Quaternion<S> pc = require_unit(p, policy);
  const Eigen::Quaternion<S> qc = require_unit(q, policy);
  return quat_log<S>(pc * qc.conjugate());
}

// true when p and q represent the same rotation (quaternion double cover)
template <typename S>
bool quat_same_rotation(const Eigen::Quaternion<S>& p,
                        const Eigen::Quaternion<S>& q, S tol) {
  return (p.coeffs() - q.coeffs()).norm() <= tol ||
         (p.coeffs() + q.coeffs()).norm() <= tol;
}

}  // namespace hmpc
