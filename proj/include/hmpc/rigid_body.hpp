#pragma once

// Floating-base rigid-body kernels over a kinematic tree.
//
// Coordinate conventions (shared project-wide):
//   - link 0 is the floating root; every other link hangs on one revolute
//     joint, parent index strictly smaller than child (topological order)
//   - a link frame sits at its joint; the joint origin is a fixed translation
//     in the parent frame; the rotation axis is expressed in the joint frame
//     (identical in parent and child frame by construction)
//   - generalized velocity v = [v_base (world, 3); omega_base (world, 3);
//     joint rates (n_j)], n_v = 6 + n_j
//   - state chart (flat vector, dim 13 + 2*n_j):
//       [p(3), quat(w,x,y,z)(4), q2(n_j), v_base(3), omega(3), v2(n_j)]
//   - state tangent (dim 12 + 2*n_j):
//       [dp(3), dtheta(3, world rotation vector), dq2, dv(3), domega(3), dv2]
//
// Mass matrix and bias forces are assembled from per-body world-frame com
// Jacobians; for the tree sizes used here (<= 8 bodies) this O(B n^2) form is
// transparent and fast enough for finite-difference linearization loops.

#include <Eigen/Dense>

#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

#include "lie.hpp"

namespace hmpc {

template <typename S>
struct Joint {
  enum class Type { kFloating, kRevolute };
  Type type = Type::kRevolute;
  Eigen::Matrix<S, 3, 1> axis = Eigen::Matrix<S, 3, 1>::UnitZ();
  S lo = S(-1e9);  // position limits, revolute only
  S hi = S(1e9);
};

template <typename S>
struct Link {
  std::string name;
  int parent = -1;  // -1 for the root
  Joint<S> joint;
  Eigen::Matrix<S, 3, 1> origin = Eigen::Matrix<S, 3, 1>::Zero();  // joint origin in parent frame
  S mass = S(0);
  Eigen::Matrix<S, 3, 1> com = Eigen::Matrix<S, 3, 1>::Zero();  // in link frame
  Eigen::Matrix<S, 3, 3> inertia = Eigen::Matrix<S, 3, 3>::Identity();  // about com, link frame
};

template <typename S>
struct ContactPointDef {
  int link = 0;
  Eigen::Matrix<S, 3, 1> offset = Eigen::Matrix<S, 3, 1>::Zero();  // link frame
};

template <typename S>
struct KinematicTree {
  std::string name;
  std::vector<Link<S>> links;
  std::vector<ContactPointDef<S>> contact_points;

  int n_links() const { return static_cast<int>(links.size()); }
  int n_joints() const { return n_links() - 1; }  // revolute joints
  int nv() const { return 6 + n_joints(); }

  // enforce the structural invariants; throws std::invalid_argument
  void validate() const {
    if (links.empty()) throw std::invalid_argument("tree: no links");
    if (links[0].joint.type != Joint<S>::Type::kFloating || links[0].parent != -1)
      throw std::invalid_argument("tree: link 0 must be the floating root");
    for (int i = 1; i < n_links(); ++i) {
      const Link<S>& l = links[i];
      if (l.joint.type != Joint<S>::Type::kRevolute)
        throw std::invalid_argument("tree: non-root link '" + l.name +
                                    "' must have a revolute joint");
      if (l.parent < 0 || l.parent >= i)
        throw std::invalid_argument("tree: link '" + l.name +
                                    "' parent must precede it (topological order)");
      if (std::abs(l.joint.axis.norm() - S(1)) > S(1e-9))
        throw std::invalid_argument("tree: link '" + l.name + "' axis must be unit");
      if (!(l.joint.lo < l.joint.hi))
        throw std::invalid_argument("tree: link '" + l.name + "' limits must satisfy lo < hi");
    }
    for (const Link<S>& l : links) {
      if (!(l.mass > S(0)))
        throw std::invalid_argument("tree: link '" + l.name + "' mass must be positive");
      if ((l.inertia - l.inertia.transpose()).norm() > S(1e-9))
        throw std::invalid_argument("tree: link '" + l.name + "' inertia must be symmetric");
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix<S, 3, 3>> es(l.inertia);
      if (es.eigenvalues().minCoeff() <= S(0))
        throw std::invalid_argument("tree: link '" + l.name + "' inertia must be positive definite");
    }
    for (const ContactPointDef<S>& c : contact_points)
      if (c.link < 0 || c.link >= n_links())
        throw std::invalid_argument("tree: contact point references unknown link");
  }
};

template <typename S>
struct GeneralizedState {
  Eigen::Matrix<S, 3, 1> base_pos = Eigen::Matrix<S, 3, 1>::Zero();
  Eigen::Quaternion<S> base_quat = Eigen::Quaternion<S>::Identity();
  Eigen::Matrix<S, Eigen::Dynamic, 1> joint_pos;
  Eigen::Matrix<S, 3, 1> base_lin_vel = Eigen::Matrix<S, 3, 1>::Zero();  // world
  Eigen::Matrix<S, 3, 1> base_ang_vel = Eigen::Matrix<S, 3, 1>::Zero();  // world
  Eigen::Matrix<S, Eigen::Dynamic, 1> joint_vel;

  static GeneralizedState Zero(int n_j) {
    GeneralizedState x;
    x.joint_pos = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(n_j);
    x.joint_vel = Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(n_j);
    return x;
  }

  int n_j() const { return static_cast<int>(joint_pos.size()); }
  int flat_dim() const { return 13 + 2 * n_j(); }
  int tangent_dim() const { return 12 + 2 * n_j(); }

  // generalized velocity [v_base; omega; v2]
  Eigen::Matrix<S, Eigen::Dynamic, 1> velocity() const {
    Eigen::Matrix<S, Eigen::Dynamic, 1> v(6 + n_j());
    v.template segment<3>(0) = base_lin_vel;
    v.template segment<3>(3) = base_ang_vel;
    v.tail(n_j()) = joint_vel;
    return v;
  }

  Eigen::Matrix<S, Eigen::Dynamic, 1> flat() const {
    Eigen::Matrix<S, Eigen::Dynamic, 1> x(flat_dim());
    x.template segment<3>(0) = base_pos;
    x(3) = base_quat.w();
    x(4) = base_quat.x();
    x(5) = base_quat.y();
    x(6) = base_quat.z();
    x.segment(7, n_j()) = joint_pos;
    x.template segment<3>(7 + n_j()) = base_lin_vel;
    x.template segment<3>(10 + n_j()) = base_ang_vel;
    x.tail(n_j()) = joint_vel;
    return x;
  }

  static GeneralizedState FromFlat(const Eigen::Matrix<S, Eigen::Dynamic, 1>& x,
                                   QuatPolicy policy = QuatPolicy::kReject) {
    const int n_j = (static_cast<int>(x.size()) - 13) / 2;
    if (x.size() != 13 + 2 * n_j)
      throw std::invalid_argument("state: flat vector has invalid size");
    GeneralizedState s;
    s.base_pos = x.template segment<3>(0);
    s.base_quat = require_unit(Eigen::Quaternion<S>(x(3), x(4), x(5), x(6)), policy);
    if (policy == QuatPolicy::kNormalize) s.base_quat.normalize();
    s.joint_pos = x.segment(7, n_j);
    s.base_lin_vel = x.template segment<3>(7 + n_j);
    s.base_ang_vel = x.template segment<3>(10 + n_j);
    s.joint_vel = x.tail(n_j);
    return s;
  }

  void validate() const {
    if (joint_pos.size() != joint_vel.size())
      throw std::invalid_argument("state: joint position/velocity size mismatch");
    if (std::abs(base_quat.norm() - S(1)) > quat_norm_tol<S>())
      throw std::invalid_argument("state: base quaternion not unit");
    if (!flat().allFinite()) throw std::invalid_argument("state: non-finite entry");
  }
};

// tangent-space chart operators; tangent layout documented in the header note
template <typename S>
GeneralizedState<S> state_boxplus(const GeneralizedState<S>& x,
                                  const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& d,
                                  QuatPolicy policy = QuatPolicy::kReject) {
  const int n_j = x.n_j();
  if (d.size() != 12 + 2 * n_j)
    throw std::invalid_argument("state_boxplus: tangent size mismatch");
  GeneralizedState<S> r = x;
  r.base_pos += d.template segment<3>(0);
  r.base_quat = quat_boxplus(x.base_quat, d.template segment<3>(3), policy);
  r.joint_pos += d.segment(6, n_j);
  r.base_lin_vel += d.template segment<3>(6 + n_j);
  r.base_ang_vel += d.template segment<3>(9 + n_j);
  r.joint_vel += d.tail(n_j);
  return r;
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> state_boxminus(
    const GeneralizedState<S>& a, const GeneralizedState<S>& b,
    QuatPolicy policy = QuatPolicy::kReject) {
  const int n_j = a.n_j();
  if (b.n_j() != n_j) throw std::invalid_argument("state_boxminus: size mismatch");
  Eigen::Matrix<S, Eigen::Dynamic, 1> d(12 + 2 * n_j);
  d.template segment<3>(0) = a.base_pos - b.base_pos;
  d.template segment<3>(3) = quat_boxminus(a.base_quat, b.base_quat, policy);
  d.segment(6, n_j) = a.joint_pos - b.joint_pos;
  d.template segment<3>(6 + n_j) = a.base_lin_vel - b.base_lin_vel;
  d.template segment<3>(9 + n_j) = a.base_ang_vel - b.base_ang_vel;
  d.tail(n_j) = a.joint_vel - b.joint_vel;
  return d;
}

// world-frame pose and twist of every link
template <typename S>
struct LinkFrame {
  Eigen::Matrix<S, 3, 3> R;           // world <- link
  Eigen::Matrix<S, 3, 1> p;           // link (joint) origin, world
  Eigen::Matrix<S, 3, 1> com_w;       // com, world
  Eigen::Matrix<S, 3, 1> axis_w;      // joint axis, world (root: zero)
  Eigen::Matrix<S, 3, 1> omega;       // angular velocity, world
  Eigen::Matrix<S, 3, 1> v_origin;    // velocity of the link origin, world
};

template <typename S>
struct Kinematics {
  std::vector<LinkFrame<S>> frames;
};

template <typename S>
Kinematics<S> forward_kinematics(const KinematicTree<S>& tree,
                                 const GeneralizedState<S>& state) {
  const int nb = tree.n_links();
  Kinematics<S> kin;
  kin.frames.resize(nb);

  LinkFrame<S>& root = kin.frames[0];
  root.R = state.base_quat.toRotationMatrix();
  root.p = state.base_pos;
  root.com_w = root.p + root.R * tree.links[0].com;
  root.axis_w.setZero();
  root.omega = state.base_ang_vel;
  root.v_origin = state.base_lin_vel;

  for (int i = 1; i < nb; ++i) {
    const Link<S>& l = tree.links[i];
    const LinkFrame<S>& par = kin.frames[l.parent];
    LinkFrame<S>& f = kin.frames[i];
    const S q = state.joint_pos(i - 1);
    const S qd = state.joint_vel(i - 1);
    const Eigen::Matrix<S, 3, 1> r = par.R * l.origin;
    f.p = par.p + r;
    f.R = par.R * Eigen::AngleAxis<S>(q, l.joint.axis).toRotationMatrix();
    f.axis_w = par.R * l.joint.axis;  // axis unchanged by its own rotation
    f.com_w = f.p + f.R * l.com;
    f.omega = par.omega + f.axis_w * qd;
    f.v_origin = par.v_origin + par.omega.cross(r);
  }
  return kin;
}

namespace detail {

// fill the 3 x nv world Jacobians of a point P rigidly attached to `link`:
// Jv maps generalized velocity to the point velocity, Jw to the link angular
// velocity. Both also map tangent displacements thanks to the world-frame
// (left) quaternion convention.
template <typename S>
void point_jacobians(const KinematicTree<S>& tree, const Kinematics<S>& kin,
                     int link, const Eigen::Matrix<S, 3, 1>& point_w,
                     Eigen::Matrix<S, 3, Eigen::Dynamic>* Jv,
                     Eigen::Matrix<S, 3, Eigen::Dynamic>* Jw) {
  const int nv = tree.nv();
  if (Jv) {
    Jv->setZero(3, nv);
    Jv->template block<3, 3>(0, 0).setIdentity();
    Jv->template block<3, 3>(0, 3) = -skew(point_w - kin.frames[0].p);
  }
  if (Jw) {
    Jw->setZero(3, nv);
    Jw->template block<3, 3>(0, 3).setIdentity();
  }
  for (int j = link; j > 0; j = tree.links[j].parent) {
    const int col = 6 + (j - 1);
    const Eigen::Matrix<S, 3, 1>& a = kin.frames[j].axis_w;
    if (Jv) Jv->col(col) = a.cross(point_w - kin.frames[j].p);
    if (Jw) Jw->col(col) = a;
  }
}

}  // namespace detail

// world-frame Jacobian of a contact point (3 x nv)
template <typename S>
Eigen::Matrix<S, 3, Eigen::Dynamic> point_jacobian(
    const KinematicTree<S>& tree, const Kinematics<S>& kin, int link,
    const std::type_identity_t<Eigen::Matrix<S, 3, 1>>& offset_in_link) {
  const Eigen::Matrix<S, 3, 1> pw =
      kin.frames[link].p + kin.frames[link].R * offset_in_link;
  Eigen::Matrix<S, 3, Eigen::Dynamic> Jv;
  detail::point_jacobians(tree, kin, link, pw, &Jv,
                          static_cast<Eigen::Matrix<S, 3, Eigen::Dynamic>*>(nullptr));
  return Jv;
}

template <typename S>
Eigen::Matrix<S, 3, Eigen::Dynamic> contact_point_jacobian(
    const KinematicTree<S>& tree, const GeneralizedState<S>& state,
    const ContactPointDef<S>& cp) {
  const Kinematics<S> kin = forward_kinematics(tree, state);
  return point_jacobian(tree, kin, cp.link, cp.offset);
}

// joint-space inertia matrix in the generalized-velocity coordinates,
// assembled as sum_i (m_i Jv_i^T Jv_i + Jw_i^T R I R^T Jw_i); symmetric
// positive definite for a valid tree
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> mass_matrix(
    const KinematicTree<S>& tree, const Kinematics<S>& kin) {
  const int nv = tree.nv();
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> M =
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>::Zero(nv, nv);
  Eigen::Matrix<S, 3, Eigen::Dynamic> Jv(3, nv), Jw(3, nv);
  for (int i = 0; i < tree.n_links(); ++i) {
    const Link<S>& l = tree.links[i];
    detail::point_jacobians(tree, kin, i, kin.frames[i].com_w, &Jv, &Jw);
    const Eigen::Matrix<S, 3, 3> Iw =
        kin.frames[i].R * l.inertia * kin.frames[i].R.transpose();
    M.noalias() += l.mass * Jv.transpose() * Jv;
    M.noalias() += Jw.transpose() * Iw * Jw;
  }
  // symmetrize away rounding asymmetry
  M = ((M + M.transpose()) * S(0.5)).eval();
  return M;
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> mass_matrix(
    const KinematicTree<S>& tree, const GeneralizedState<S>& state) {
  return mass_matrix(tree, forward_kinematics(tree, state));
}

// gravity + velocity-product generalized forces C(q, v) such that
// M(q) vdot + C(q, v) = tau_gen. Computed by propagating bias accelerations
// (zero generalized acceleration) and projecting Newton-Euler wrenches through
// the com Jacobians. Exactly zero for zero velocity and zero gravity.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> bias_forces(
    const KinematicTree<S>& tree, const Kinematics<S>& kin,
    const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, 3, 1>>& gravity) {
  const int nb = tree.n_links();
  const int nv = tree.nv();
  // bias linear acceleration of each link origin and angular acceleration
  std::vector<Eigen::Matrix<S, 3, 1>> alpha(nb), a_origin(nb);
  alpha[0].setZero();
  a_origin[0].setZero();
  for (int i = 1; i < nb; ++i) {
    const Link<S>& l = tree.links[i];
    const LinkFrame<S>& par = kin.frames[l.parent];
    const Eigen::Matrix<S, 3, 1> r = par.R * l.origin;
    const S qd = state.joint_vel(i - 1);
    alpha[i] = alpha[l.parent] + par.omega.cross(kin.frames[i].axis_w * qd);
    a_origin[i] = a_origin[l.parent] + alpha[l.parent].cross(r) +
                  par.omega.cross(par.omega.cross(r));
  }

  Eigen::Matrix<S, Eigen::Dynamic, 1> C =
      Eigen::Matrix<S, Eigen::Dynamic, 1>::Zero(nv);
  Eigen::Matrix<S, 3, Eigen::Dynamic> Jv(3, nv), Jw(3, nv);
  for (int i = 0; i < nb; ++i) {
    const Link<S>& l = tree.links[i];
    const LinkFrame<S>& f = kin.frames[i];
    const Eigen::Matrix<S, 3, 1> rc = f.com_w - f.p;
    const Eigen::Matrix<S, 3, 1> a_com =
        a_origin[i] + alpha[i].cross(rc) + f.omega.cross(f.omega.cross(rc));
    const Eigen::Matrix<S, 3, 3> Iw = f.R * l.inertia * f.R.transpose();
    const Eigen::Matrix<S, 3, 1> force = l.mass * (a_com - gravity);
    const Eigen::Matrix<S, 3, 1> torque =
        Iw * alpha[i] + f.omega.cross(Iw * f.omega);
    detail::point_jacobians(tree, kin, i, f.com_w, &Jv, &Jw);
    C.noalias() += Jv.transpose() * force;
    C.noalias() += Jw.transpose() * torque;
  }
  return C;
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> bias_forces(
    const KinematicTree<S>& tree, const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, 3, 1>>& gravity) {
  return bias_forces(tree, forward_kinematics(tree, state), state, gravity);
}

// semi-implicit (symplectic) Euler: velocities first, then positions with the
// updated velocities; the quaternion advances along the world angular velocity
template <typename S>
GeneralizedState<S> integrate_state(
    const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& vdot, S dt) {
  const int n_j = state.n_j();
  if (vdot.size() != 6 + n_j)
    throw std::invalid_argument("integrate_state: acceleration size mismatch");
  GeneralizedState<S> r = state;
  r.base_lin_vel += dt * vdot.template segment<3>(0);
  r.base_ang_vel += dt * vdot.template segment<3>(3);
  r.joint_vel += dt * vdot.tail(n_j);
  r.base_pos += dt * r.base_lin_vel;
  r.base_quat = quat_boxplus(state.base_quat, (dt * r.base_ang_vel).eval());
  r.joint_pos += dt * r.joint_vel;
  return r;
}

// directly applies a generalized velocity change (e.g. a contact impulse
// response) before the position update
template <typename S>
GeneralizedState<S> apply_velocity(
    const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& v_new) {
  GeneralizedState<S> r = state;
  r.base_lin_vel = v_new.template segment<3>(0);
  r.base_ang_vel = v_new.template segment<3>(3);
  r.joint_vel = v_new.tail(state.n_j());
  return r;
}

template <typename S>
S kinetic_energy(const KinematicTree<S>& tree, const GeneralizedState<S>& state) {
  const Kinematics<S> kin = forward_kinematics(tree, state);
  S e = S(0);
  for (int i = 0; i < tree.n_links(); ++i) {
    const LinkFrame<S>& f = kin.frames[i];
    const Link<S>& l = tree.links[i];
    const Eigen::Matrix<S, 3, 1> v_com =
        f.v_origin + f.omega.cross(f.com_w - f.p);
    const Eigen::Matrix<S, 3, 3> Iw = f.R * l.inertia * f.R.transpose();
    e += S(0.5) * l.mass * v_com.squaredNorm() +
         S(0.5) * f.omega.dot(Iw * f.omega);
  }
  return e;
}

template <typename S>
S potential_energy(const KinematicTree<S>& tree, const GeneralizedState<S>& state,
                   const std::type_identity_t<Eigen::Matrix<S, 3, 1>>& gravity) {
  const Kinematics<S> kin = forward_kinematics(tree, state);
  S e = S(0);
  for (int i = 0; i < tree.n_links(); ++i)
    e -= tree.links[i].mass * gravity.dot(kin.frames[i].com_w);
  return e;
}

}  // namespace hmpc
