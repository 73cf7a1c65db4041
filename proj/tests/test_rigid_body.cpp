#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <hmpc/random.hpp>
#include <hmpc/rigid_body.hpp>

#include <Eigen/Dense>

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Quaterniond;
using Eigen::Vector3d;
using Eigen::VectorXd;
using hmpc::GeneralizedState;
using hmpc::KinematicTree;
using hmpc::Link;

namespace {

constexpr double kGravity = 9.81;

// planar double pendulum hanging from the floating root: joints about +y,
// links extending along -z at zero angle. The joint-space block of the
// floating-base matrices must match the textbook fixed-base expressions.
struct PendulumParams {
  double m1 = 1.3, m2 = 0.7;
  double l1 = 0.45;           // joint1 -> joint2 distance
  double lc1 = 0.21, lc2 = 0.27;  // joint -> com distances
  double I1 = 0.02, I2 = 0.015;   // com inertia about the joint axis (y)
};

KinematicTree<double> make_pendulum_tree(const PendulumParams& pp) {
  KinematicTree<double> tree;
  tree.name = "dp";
  Link<double> base;
  base.name = "base";
  base.parent = -1;
  base.joint.type = hmpc::Joint<double>::Type::kFloating;
  base.mass = 2.0;
  base.com = Vector3d::Zero();
  base.inertia = 0.01 * Matrix3d::Identity();
  tree.links.push_back(base);

  Link<double> l1;
  l1.name = "l1";
  l1.parent = 0;
  l1.joint.type = hmpc::Joint<double>::Type::kRevolute;
  l1.joint.axis = Vector3d::UnitY();
  l1.joint.lo = -10.0;
  l1.joint.hi = 10.0;
  l1.origin = Vector3d::Zero();
  l1.mass = pp.m1;
  l1.com = Vector3d(0, 0, -pp.lc1);
  l1.inertia = Eigen::Vector3d(pp.I1, pp.I1, 1e-4).asDiagonal();
  tree.links.push_back(l1);

  Link<double> l2 = l1;
  l2.name = "l2";
  l2.parent = 1;
  l2.origin = Vector3d(0, 0, -pp.l1);
  l2.mass = pp.m2;
  l2.com = Vector3d(0, 0, -pp.lc2);
  l2.inertia = Eigen::Vector3d(pp.I2, pp.I2, 1e-4).asDiagonal();
  tree.links.push_back(l2);

  tree.contact_points.push_back({2, Vector3d(0, 0, -0.4)});
  tree.validate();
  return tree;
}

// textbook Lagrangian expressions for the same geometry (independent oracle)
void pendulum_oracle(const PendulumParams& pp, double q1, double q2, double qd1,
                     double qd2, Eigen::Matrix2d* M, Eigen::Vector2d* C) {
  const double c2 = std::cos(q2);
  const double s2 = std::sin(q2);
  const double s1 = std::sin(q1);
  const double s12 = std::sin(q1 + q2);
  (*M)(0, 0) = pp.m1 * pp.lc1 * pp.lc1 + pp.I1 +
               pp.m2 * (pp.l1 * pp.l1 + pp.lc2 * pp.lc2 +
                        2 * pp.l1 * pp.lc2 * c2) +
               pp.I2;
  (*M)(0, 1) = pp.m2 * (pp.lc2 * pp.lc2 + pp.l1 * pp.lc2 * c2) + pp.I2;
  (*M)(1, 0) = (*M)(0, 1);
  (*M)(1, 1) = pp.m2 * pp.lc2 * pp.lc2 + pp.I2;
  const double h = pp.m2 * pp.l1 * pp.lc2 * s2;
  (*C)(0) = -h * (2 * qd1 * qd2 + qd2 * qd2) +
            (pp.m1 * pp.lc1 + pp.m2 * pp.l1) * kGravity * s1 +
            pp.m2 * pp.lc2 * kGravity * s12;
  (*C)(1) = h * qd1 * qd1 + pp.m2 * pp.lc2 * kGravity * s12;
}

GeneralizedState<double> random_state(const KinematicTree<double>& tree,
                                      hmpc::Rng& rng) {
  GeneralizedState<double> x = GeneralizedState<double>::Zero(tree.n_joints());
  x.base_pos = Vector3d(rng.normal(), rng.normal(), rng.normal());
  Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  x.base_quat = q.normalized();
  for (int i = 0; i < tree.n_joints(); ++i) {
    x.joint_pos(i) = rng.uniform(-1.5, 1.5);
    x.joint_vel(i) = rng.uniform(-2.0, 2.0);
  }
  x.base_lin_vel = Vector3d(rng.normal(), rng.normal(), rng.normal());
  x.base_ang_vel = Vector3d(rng.normal(), rng.normal(), rng.normal());
  return x;
}

}  // namespace

TEST_CASE("joint block of mass matrix and bias matches symbolic double pendulum") {
  PendulumParams pp;
  KinematicTree<double> tree = make_pendulum_tree(pp);
  hmpc::Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    GeneralizedState<double> x = GeneralizedState<double>::Zero(2);
    x.joint_pos << rng.uniform(-M_PI, M_PI), rng.uniform(-M_PI, M_PI);
    x.joint_vel << rng.uniform(-3, 3), rng.uniform(-3, 3);
    // base held: zero base velocity isolates the fixed-base dynamics
    const MatrixXd M = hmpc::mass_matrix(tree, x);
    const VectorXd C = hmpc::bias_forces(tree, x, Vector3d(0, 0, -kGravity));
    Eigen::Matrix2d Ms;
    Eigen::Vector2d Cs;
    pendulum_oracle(pp, x.joint_pos(0), x.joint_pos(1), x.joint_vel(0),
                    x.joint_vel(1), &Ms, &Cs);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j)
        CHECK(std::abs(M(6 + i, 6 + j) - Ms(i, j)) < 1e-10);
      CHECK(std::abs(C(6 + i) - Cs(i)) < 1e-10);
    }
  }
}

TEST_CASE("single pendulum point mass gives m*l^2 joint inertia") {
  KinematicTree<double> tree;
  Link<double> base;
  base.name = "base";
  base.parent = -1;
  base.joint.type = hmpc::Joint<double>::Type::kFloating;
  base.mass = 1.0;
  base.inertia = Matrix3d::Identity();
  tree.links.push_back(base);
  Link<double> rod;
  rod.name = "rod";
  rod.parent = 0;
  rod.joint.axis = Vector3d::UnitY();
  rod.joint.lo = -10;
  rod.joint.hi = 10;
  rod.mass = 0.8;
  rod.com = Vector3d(0, 0, -0.6);  // point mass at distance l
  rod.inertia = 1e-12 * Matrix3d::Identity();
  tree.links.push_back(rod);
  tree.validate();

  GeneralizedState<double> x = GeneralizedState<double>::Zero(1);
  x.joint_pos(0) = 0.37;
  const MatrixXd M = hmpc::mass_matrix(tree, x);
  CHECK(std::abs(M(6, 6) - 0.8 * 0.6 * 0.6) < 1e-10);
}

TEST_CASE("bias forces vanish exactly for zero velocity and zero gravity") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  GeneralizedState<double> x = GeneralizedState<double>::Zero(2);
  x.joint_pos << 0.9, -1.2;
  const VectorXd C = hmpc::bias_forces(tree, x, Vector3d::Zero());
  for (int i = 0; i < C.size(); ++i) CHECK(C(i) == 0.0);
}

TEST_CASE("mass matrix is symmetric positive definite and matches kinetic energy") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  hmpc::Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const GeneralizedState<double> x = random_state(tree, rng);
    const MatrixXd M = hmpc::mass_matrix(tree, x);
    CHECK((M - M.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    // energy computed from per-body twists is an independent path through the
    // velocity recursion; 0.5 v^T M v must agree
    const VectorXd v = x.velocity();
    const double e_quadratic = 0.5 * v.dot(M * v);
    const double e_direct = hmpc::kinetic_energy(tree, x);
    CHECK(e_quadratic ==
          doctest::Approx(e_direct).epsilon(1e-12));
  }
}

TEST_CASE("contact point jacobian matches central finite differences") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  hmpc::Rng rng(29);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    const GeneralizedState<double> x = random_state(tree, rng);
    const auto& cp = tree.contact_points[0];
    const MatrixXd J = hmpc::contact_point_jacobian(tree, x, cp);
    // position part of the tangent only: columns [dp, dtheta, dq2]
    for (int col = 0; col < 6 + tree.n_joints(); ++col) {
      VectorXd d = VectorXd::Zero(x.tangent_dim());
      d(col) = h;
      const auto xp = hmpc::state_boxplus(x, d);
      d(col) = -h;
      const auto xm = hmpc::state_boxplus(x, d);
      auto point_of = [&](const GeneralizedState<double>& s) {
        const auto kin = hmpc::forward_kinematics(tree, s);
        return Vector3d(kin.frames[cp.link].p + kin.frames[cp.link].R * cp.offset);
      };
      const Vector3d fd = (point_of(xp) - point_of(xm)) / (2 * h);
      const Vector3d an = J.col(col);
      const double scale = std::max(1.0, an.norm());
      CHECK((fd - an).norm() / scale < 1e-6);
    }
  }
}

TEST_CASE("jacobian maps generalized velocity to measured point velocity") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  hmpc::Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const GeneralizedState<double> x = random_state(tree, rng);
    const auto kin = hmpc::forward_kinematics(tree, x);
    const auto& cp = tree.contact_points[0];
    const MatrixXd J = hmpc::point_jacobian(tree, kin, cp.link, cp.offset);
    const Vector3d pw = kin.frames[cp.link].p + kin.frames[cp.link].R * cp.offset;
    const Vector3d v_rec = kin.frames[cp.link].v_origin +
                           kin.frames[cp.link].omega.cross(pw - kin.frames[cp.link].p);
    const Vector3d v_jac = J * x.velocity();
    CHECK((v_rec - v_jac).norm() < 1e-12 * std::max(1.0, v_rec.norm()));
  }
}

TEST_CASE("revolute joint column is axis cross lever arm") {
  // z-axis joint, point at distance d along x at zero angle: column = [0, d, 0]
  KinematicTree<double> tree;
  Link<double> base;
  base.parent = -1;
  base.joint.type = hmpc::Joint<double>::Type::kFloating;
  base.mass = 1.0;
  base.inertia = Matrix3d::Identity();
  tree.links.push_back(base);
  Link<double> arm;
  arm.parent = 0;
  arm.joint.axis = Vector3d::UnitZ();
  arm.joint.lo = -10;
  arm.joint.hi = 10;
  arm.mass = 0.5;
  arm.com = Vector3d(0.1, 0, 0);
  arm.inertia = 1e-3 * Matrix3d::Identity();
  tree.links.push_back(arm);
  tree.validate();
  GeneralizedState<double> x = GeneralizedState<double>::Zero(1);
  const double d = 0.35;
  const MatrixXd J =
      hmpc::contact_point_jacobian(tree, x, {1, Vector3d(d, 0, 0)});
  CHECK(J(0, 6) == doctest::Approx(0.0));
  CHECK(J(1, 6) == doctest::Approx(d).epsilon(1e-14));
  CHECK(J(2, 6) == doctest::Approx(0.0));
}

TEST_CASE("semi-implicit free fall follows its closed form exactly") {
  const double dt = 1e-3;
  const double g = kGravity;
  GeneralizedState<double> x = GeneralizedState<double>::Zero(0);
  VectorXd vdot(6);
  const int n = 500;
  for (int k = 0; k < n; ++k) {
    vdot << 0, 0, -g, 0, 0, 0;
    x = hmpc::integrate_state(x, vdot, dt);
  }
  // v_k = -g k dt, p_n = -g dt^2 n(n+1)/2
  const double pz_expect = -g * dt * dt * (double(n) * (n + 1) / 2.0);
  CHECK(x.base_pos.z() == doctest::Approx(pz_expect).epsilon(1e-12));
  CHECK(x.base_lin_vel.z() == doctest::Approx(-g * n * dt).epsilon(1e-12));
}

TEST_CASE("pure yaw rate integrates to the yaw rotation") {
  GeneralizedState<double> x = GeneralizedState<double>::Zero(0);
  x.base_ang_vel = Vector3d(0, 0, 2.0);
  const auto r = hmpc::integrate_state(x, VectorXd::Zero(6), 0.25);
  // rotation by omega*dt = 0.5 rad about z
  const Quaterniond expect(std::cos(0.25), 0, 0, std::sin(0.25));
  CHECK(hmpc::quat_same_rotation(r.base_quat, expect, 1e-12));
}

TEST_CASE("free-floating conservative motion keeps total energy within a percent") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  const Vector3d gravity(0, 0, -kGravity);
  GeneralizedState<double> x = GeneralizedState<double>::Zero(2);
  x.base_pos = Vector3d(0, 0, 1.0);
  x.joint_pos << 1.1, 0.4;
  x.joint_vel << 1.0, -2.0;
  x.base_ang_vel = Vector3d(0.3, 0.2, -0.1);
  const double e0 =
      hmpc::kinetic_energy(tree, x) + hmpc::potential_energy(tree, x, gravity);
  const double dt = 1e-3;
  double max_drift = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto kin = hmpc::forward_kinematics(tree, x);
    const MatrixXd M = hmpc::mass_matrix(tree, kin);
    const VectorXd C = hmpc::bias_forces(tree, kin, x, gravity);
    const VectorXd vdot = M.ldlt().solve(-C);
    x = hmpc::integrate_state(x, vdot, dt);
    const double e = hmpc::kinetic_energy(tree, x) +
                     hmpc::potential_energy(tree, x, gravity);
    max_drift = std::max(max_drift, std::abs(e - e0));
  }
  CHECK(max_drift / std::abs(e0) < 0.01);
}

TEST_CASE("state chart round trips through flat and tangent forms") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  hmpc::Rng rng(41);
  const GeneralizedState<double> a = random_state(tree, rng);
  const GeneralizedState<double> b = random_state(tree, rng);
  const auto a2 = GeneralizedState<double>::FromFlat(a.flat());
  CHECK((a2.flat() - a.flat()).norm() == 0.0);
  const VectorXd d = hmpc::state_boxminus(a, b);
  const auto r = hmpc::state_boxplus(b, d);
  CHECK((r.base_pos - a.base_pos).norm() < 1e-12);
  CHECK(hmpc::quat_same_rotation(r.base_quat, a.base_quat, 1e-12));
  CHECK((r.joint_pos - a.joint_pos).norm() < 1e-12);
  CHECK((r.joint_vel - a.joint_vel).norm() < 1e-12);
}

TEST_CASE("tree validation rejects malformed structures") {
  KinematicTree<double> tree = make_pendulum_tree(PendulumParams{});
  auto bad = tree;
  bad.links[1].mass = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tree;
  bad.links[1].joint.axis = Vector3d(0, 2, 0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tree;
  bad.links[1].joint.lo = 2.0;
  bad.links[1].joint.hi = -2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tree;
  bad.links[2].parent = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = tree;
  bad.links[1].inertia(0, 1) = 0.5;  // asymmetric
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
