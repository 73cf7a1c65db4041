#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "hmpc/contact.hpp"
#include "hmpc/random.hpp"
#include "hmpc/rigid_body.hpp"

using namespace hmpc;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

constexpr double kG = 9.81;
const Vector3d kGravity(0, 0, -kG);

// ---------------------------------------------------------------------------
// Independent dense oracle: minimize 0.5 l'Al + c'l over the product of
// 4-facet pyramid cones {ln >= 0, |lt1| <= eta ln, |lt2| <= eta ln}.
// Exhaustively enumerates per-contact KKT states (off / free / one facet /
// two facets), solves each equality-restricted system, and returns the primal
// feasible candidate with the lowest objective. With A positive definite the
// optimum's active set is among the enumerated states, so this is exact.
// ---------------------------------------------------------------------------
VectorXd oracle_pyramid_qp(const MatrixXd& A, const VectorXd& c,
                           const std::vector<double>& eta) {
  const int K = static_cast<int>(eta.size());
  const int n = 3 * K;
  REQUIRE(A.rows() == n);
  REQUIRE(c.size() == n);

  long total = 1;
  for (int k = 0; k < K; ++k) total *= 10;

  double best = std::numeric_limits<double>::infinity();
  VectorXd best_lambda;
  bool found = false;

  for (long combo = 0; combo < total; ++combo) {
    // decode per-contact states (base 10 digits)
    long rem = combo;
    std::vector<int> state(K);
    bool valid = true;
    for (int k = 0; k < K; ++k) {
      state[k] = static_cast<int>(rem % 10);
      rem /= 10;
      // frictionless contacts only need the off/free states; facet states
      // would duplicate rows
      if (eta[k] == 0.0 && state[k] >= 2) valid = false;
    }
    if (!valid) continue;

    std::vector<RowVectorXd> rows;
    auto facet_row = [&](int k, int t, double sign) {
      // lt - sign*eta*ln = 0  (force pinned to the pyramid facet)
      RowVectorXd r = RowVectorXd::Zero(n);
      r(3 * k + t) = 1.0;
      r(3 * k + 2) = -sign * eta[k];
      rows.push_back(r);
    };
    for (int k = 0; k < K; ++k) {
      switch (state[k]) {
        case 0:  // off: all three components zero
          for (int i = 0; i < 3; ++i) {
            RowVectorXd r = RowVectorXd::Zero(n);
            r(3 * k + i) = 1.0;
            rows.push_back(r);
          }
          break;
        case 1:  // free; for eta=0 the tangentials are structurally pinned
          if (eta[k] == 0.0) {
            for (int i = 0; i < 2; ++i) {
              RowVectorXd r = RowVectorXd::Zero(n);
              r(3 * k + i) = 1.0;
              rows.push_back(r);
            }
          }
          break;
        case 2: facet_row(k, 0, +1); break;
        case 3: facet_row(k, 0, -1); break;
        case 4: facet_row(k, 1, +1); break;
        case 5: facet_row(k, 1, -1); break;
        case 6: facet_row(k, 0, +1); facet_row(k, 1, +1); break;
        case 7: facet_row(k, 0, +1); facet_row(k, 1, -1); break;
        case 8: facet_row(k, 0, -1); facet_row(k, 1, +1); break;
        case 9: facet_row(k, 0, -1); facet_row(k, 1, -1); break;
      }
    }

    const int m = static_cast<int>(rows.size());
    MatrixXd B = MatrixXd::Zero(n + m, n + m);
    B.topLeftCorner(n, n) = A;
    for (int i = 0; i < m; ++i) {
      B.block(n + i, 0, 1, n) = rows[i];
      B.block(0, n + i, n, 1) = rows[i].transpose();
    }
    VectorXd rhs = VectorXd::Zero(n + m);
    rhs.head(n) = -c;

    const VectorXd sol = B.fullPivLu().solve(rhs);
    const double kkt_err = (B * sol - rhs).cwiseAbs().maxCoeff();
    if (!(kkt_err <= 1e-9 * std::max(1.0, c.cwiseAbs().maxCoeff()))) continue;

    const VectorXd lambda = sol.head(n);
    const double ftol = 1e-9 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
    bool feasible = true;
    for (int k = 0; k < K && feasible; ++k) {
      const double l1 = lambda(3 * k), l2 = lambda(3 * k + 1), ln = lambda(3 * k + 2);
      if (ln < -ftol) feasible = false;
      if (std::abs(l1) > eta[k] * ln + ftol) feasible = false;
      if (std::abs(l2) > eta[k] * ln + ftol) feasible = false;
    }
    if (!feasible) continue;

    const double obj = 0.5 * lambda.dot(A * lambda) + c.dot(lambda);
    if (obj < best) {
      best = obj;
      best_lambda = lambda;
      found = true;
    }
  }
  REQUIRE(found);
  return best_lambda;
}

// single floating box, bottom face in its own xy-plane, four corner points
KinematicTree<double> make_cube_tree(double mass = 2.0) {
  KinematicTree<double> tree;
  tree.name = "cube";
  Link<double> base;
  base.name = "base";
  base.parent = -1;
  base.joint.type = Joint<double>::Type::kFloating;
  base.mass = mass;
  base.com = Vector3d(0, 0, 0.05);
  base.inertia = Vector3d(8.33e-3, 8.33e-3, 1.33e-2).asDiagonal();
  tree.links.push_back(base);
  for (const double sx : {-1.0, 1.0})
    for (const double sy : {-1.0, 1.0}) {
      ContactPointDef<double> cp;
      cp.link = 0;
      cp.offset = Vector3d(0.1 * sx, 0.1 * sy, 0.0);
      tree.contact_points.push_back(cp);
    }
  tree.validate();
  return tree;
}

GeneralizedState<double> cube_rest_state() {
  auto x = GeneralizedState<double>::Zero(0);
  return x;
}

struct CubeSolve {
  ContactSet<double> contacts;
  ContactSolution<double> sol;
  VectorXd v_free;
};

// places the cube exactly on flat ground and solves one contact step
CubeSolve solve_cube(const KinematicTree<double>& tree,
                     const GeneralizedState<double>& x, const Terrain<double>& terrain,
                     const VectorXd& tau, double dt) {
  CubeSolve out;
  out.contacts = detect_contacts(tree, x, terrain, 1e-6);
  const MatrixXd M = mass_matrix(tree, x);
  const VectorXd C = bias_forces(tree, x, kGravity);
  out.sol = solve_contact_forces(M, C, tau, x.velocity(), out.contacts, dt);
  out.v_free = x.velocity() + dt * M.llt().solve(tau - C);
  return out;
}

}  // namespace

TEST_CASE("detection respects threshold, ordering, and flat-ground frames") {
  const auto tree = make_cube_tree();
  auto x = cube_rest_state();

  x.base_pos = Vector3d(0, 0, 1.0);  // hovering 1 m up
  CHECK(detect_contacts(tree, x, Terrain<double>::Flat(0.8), 1e-3).empty());

  x.base_pos.setZero();  // corners exactly on the plane
  const auto cs = detect_contacts(tree, x, Terrain<double>::Flat(0.8), 1e-3);
  REQUIRE(cs.size() == 4);
  for (int k = 0; k < 4; ++k) {
    CHECK(cs[k].point_index == k);
    CHECK(cs[k].link == 0);
    CHECK(cs[k].normal.isApprox(Vector3d(0, 0, 1)));
    CHECK(cs[k].penetration == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cs[k].mu == 0.8);
    // flat ground: contact frame coincides with world axes
    CHECK(cs[k].tangents.row(0).transpose().isApprox(Vector3d(1, 0, 0)));
    CHECK(cs[k].tangents.row(1).transpose().isApprox(Vector3d(0, 1, 0)));
    // contact-frame jacobian rows are the world point jacobian rows
    const auto Jp = contact_point_jacobian(tree, x, tree.contact_points[k]);
    CHECK((cs[k].jacobian - Jp).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // sunk 1 mm: positive penetration
  x.base_pos = Vector3d(0, 0, -1e-3);
  const auto sunk = detect_contacts(tree, x, Terrain<double>::Flat(0.8), 1e-6);
  REQUIRE(sunk.size() == 4);
  CHECK(sunk[0].penetration == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("ramp terrain: height profile and tilted contact frame") {
  const double slope = 10.0 * M_PI / 180.0;
  const auto terrain = Terrain<double>::Ramp(slope, 0.6);
  CHECK(terrain.height(-0.5, 0.3) == 0.0);
  CHECK(terrain.height(0.5, 0.0) == doctest::Approx(0.5 * std::tan(slope)).epsilon(1e-15));
  CHECK(terrain.normal(-0.5, 0).isApprox(Vector3d(0, 0, 1)));

  const Vector3d n = terrain.normal(0.5, 0.0);
  CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(n.z() == doctest::Approx(std::cos(slope)).epsilon(1e-12));
  CHECK(n.x() == doctest::Approx(-std::sin(slope)).epsilon(1e-12));

  // base origin 1 mm below the face: only the two uphill corners (world
  // x = 0.6) clear the vertical-gap threshold; the x = 0.4 pair floats
  // ~16.6 mm above the surface
  const auto tree = make_cube_tree();
  auto x = cube_rest_state();
  x.base_pos = Vector3d(0.5, 0, terrain.height(0.5, 0) - 1e-3);
  const auto cs = detect_contacts(tree, x, terrain, 1e-6);
  REQUIRE(cs.size() == 2);
  CHECK(cs[0].point_index == 2);
  CHECK(cs[1].point_index == 3);
  for (const auto& ct : cs) {
    CHECK(ct.normal.isApprox(n, 1e-12));
    // orthonormal basis orthogonal to the normal
    const Eigen::Matrix<double, 2, 3>& T = ct.tangents;
    CHECK((T * T.transpose() - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((T * ct.normal).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(ct.mu == 0.6);
    // penetration is the vertical gap resolved along the surface normal
    const double gap = x.base_pos.z() - terrain.height(0.6, 0);
    CHECK(ct.penetration == doctest::Approx(-gap * std::cos(slope)).epsilon(1e-12));
  }

  // sinking by one uphill-corner rise brings all four corners into contact,
  // with the downhill pair penetrating less
  x.base_pos.z() = terrain.height(0.4, 0) - 1e-3;
  const auto cs4 = detect_contacts(tree, x, terrain, 1e-6);
  REQUIRE(cs4.size() == 4);
  const double gap_lo = x.base_pos.z() - terrain.height(0.4, 0);
  const double gap_hi = x.base_pos.z() - terrain.height(0.6, 0);
  CHECK(cs4[0].penetration == doctest::Approx(-gap_lo * std::cos(slope)).epsilon(1e-12));
  CHECK(cs4[3].penetration == doctest::Approx(-gap_hi * std::cos(slope)).epsilon(1e-12));
  CHECK(cs4[3].penetration > cs4[0].penetration);
}

TEST_CASE("pyramid projection matches the enumeration oracle") {
  Rng rng(derive_seed(2026, "proj", 0));
  const double etas[] = {0.0, 0.1, 0.6 / std::sqrt(2.0), 1.0, 3.0};
  for (int trial = 0; trial < 400; ++trial) {
    const double eta = etas[trial % 5];
    const Vector3d a(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    const Vector3d p = project_pyramid<double>(a, eta);

    MatrixXd A = MatrixXd::Identity(3, 3);
    VectorXd c = -a;
    const VectorXd q = oracle_pyramid_qp(A, c, {eta});
    CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-10);

    // membership and idempotence
    CHECK(p.z() >= -1e-15);
    CHECK(std::abs(p.x()) <= eta * p.z() + 1e-12);
    CHECK(std::abs(p.y()) <= eta * p.z() + 1e-12);
    CHECK((project_pyramid<double>(p, eta) - p).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // interior point is untouched; polar-cone points map to zero
  CHECK(project_pyramid<double>(Vector3d(0.1, -0.1, 1.0), 1.0) == Vector3d(0.1, -0.1, 1.0));
  CHECK(project_pyramid<double>(Vector3d(0.0, 0.0, -1.0), 0.5).isZero(0.0));
  CHECK(project_pyramid<double>(Vector3d(0.3, 0.0, -1.0), 0.3).isZero(0.0));
}

TEST_CASE("resting cube: static equilibrium with equal corner shares") {
  const double m = 2.0, dt = 1e-3;
  const auto tree = make_cube_tree(m);
  const auto x = cube_rest_state();
  const auto r = solve_cube(tree, x, Terrain<double>::Flat(0.8), VectorXd::Zero(6), dt);

  REQUIRE(r.contacts.size() == 4);
  double fz_sum = 0;
  for (int k = 0; k < 4; ++k) {
    const Vector3d f = r.sol.forces[k];
    fz_sum += f.z();
    CHECK(std::abs(f.z() - m * kG / 4) <= 1e-6);
    CHECK(std::abs(f.x()) <= 1e-8);
    CHECK(std::abs(f.y()) <= 1e-8);
  }
  CHECK(std::abs(fz_sum - m * kG) <= 1e-6);
  // the cube stays put
  CHECK(r.sol.v_post.cwiseAbs().maxCoeff() <= 1e-9);
  // complementarity: no force does work against separation
  for (int k = 0; k < 4; ++k) {
    const double v_cz = (r.contacts[k].jacobian * r.sol.v_post)(2);
    CHECK(r.sol.forces[k].z() * std::max(v_cz, 0.0) <= 1e-6);
  }
  CHECK(r.sol.iterations <= 200);
}

TEST_CASE("random battery: pyramid constraints hold within 1e-8") {
  const double dt = 1e-3;
  const auto tree = make_cube_tree();
  Rng rng(derive_seed(2026, "battery", 0));
  for (int trial = 0; trial < 60; ++trial) {
    auto x = cube_rest_state();
    x.base_pos = Vector3d(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                          rng.uniform(-5e-4, 2e-4));
    x.base_lin_vel = Vector3d(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2),
                              rng.uniform(-0.3, 0.1));
    x.base_ang_vel = Vector3d(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                              rng.uniform(-0.5, 0.5));
    VectorXd tau(6);
    for (int i = 0; i < 6; ++i) tau(i) = rng.uniform(-3, 3);

    const double mu = (trial % 3 == 0) ? 0.3 : 0.8;
    const auto r = solve_cube(tree, x, Terrain<double>::Flat(mu), tau, dt);
    if (r.contacts.empty()) continue;

    const double eta = mu / std::sqrt(2.0);
    for (size_t k = 0; k < r.contacts.size(); ++k) {
      const Vector3d f = r.sol.forces[k];
      CHECK(f.z() >= -1e-8);
      CHECK(std::abs(f.x()) <= eta * f.z() + 1e-8);
      CHECK(std::abs(f.y()) <= eta * f.z() + 1e-8);
      // post-step constraint-frame velocity, penetration-correction bias on
      // the normal row: never penetrating, and orthogonal to the force
      Vector3d w = r.contacts[k].jacobian * r.sol.v_post;
      w.z() -= 0.1 * r.contacts[k].penetration / dt;
      CHECK(w.z() >= -(kContactReg * f.z() + 1e-8));
      // exact orthogonality holds against the regularized QP gradient
      CHECK(std::abs(f.dot(w) + kContactReg * f.squaredNorm()) <= 1e-6);
      // componentwise complementarity additionally holds whenever friction
      // is not saturated; a sliding contact legitimately trades tangential
      // dissipation for normal separation in this convex relaxation
      const bool saturated = std::abs(f.x()) > eta * f.z() - 1e-9 ||
                             std::abs(f.y()) > eta * f.z() - 1e-9;
      if (!saturated) CHECK(f.z() * std::max(w.z(), 0.0) <= 1e-6);
    }
  }
}

TEST_CASE("solver agrees with the dense enumeration oracle") {
  const double dt = 1e-3;
  const int nv = 12;
  Rng rng(derive_seed(2026, "oracle", 0));
  const double mus[] = {0.0, 0.3, 0.6, 1.0};

  for (int K = 1; K <= 3; ++K) {
    for (int trial = 0; trial < 40; ++trial) {
      // random well-conditioned SPD mass matrix around unit scale
      MatrixXd R(nv, nv);
      for (int i = 0; i < nv; ++i)
        for (int j = 0; j < nv; ++j) R(i, j) = rng.uniform(-1, 1);
      const MatrixXd M = 0.5 * (R * R.transpose()) + 2.0 * MatrixXd::Identity(nv, nv);

      ContactSet<double> contacts;
      std::vector<double> eta;
      for (int k = 0; k < K; ++k) {
        ActiveContact<double> ct;
        ct.point_index = k;
        ct.link = 0;
        ct.position.setZero();
        ct.normal = Vector3d(0, 0, 1);
        ct.tangents.row(0) = Eigen::RowVector3d(1, 0, 0);
        ct.tangents.row(1) = Eigen::RowVector3d(0, 1, 0);
        ct.penetration = rng.uniform(-5e-4, 1e-3);
        ct.mu = mus[(trial + k) % 4];
        ct.jacobian.resize(3, nv);
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < nv; ++j) ct.jacobian(i, j) = rng.uniform(-1, 1);
        contacts.push_back(ct);
        eta.push_back(ct.mu / std::sqrt(2.0));
      }

      VectorXd v(nv), tau(nv), C(nv);
      for (int i = 0; i < nv; ++i) {
        v(i) = rng.uniform(-0.5, 0.5);
        tau(i) = rng.uniform(-5, 5);
        C(i) = rng.uniform(-2, 2);
      }

      const auto qp = assemble_contact_qp(M, C, tau, v, contacts, dt);
      const auto sol = solve_contact_forces(M, C, tau, v, contacts, dt);
      const VectorXd ref = oracle_pyramid_qp(qp.A, qp.c, eta);

      VectorXd got(3 * K);
      for (int k = 0; k < K; ++k) got.segment<3>(3 * k) = sol.forces[k];
      CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6);

      // v_post consistency with the returned forces
      VectorXd jt_f = VectorXd::Zero(nv);
      for (int k = 0; k < K; ++k)
        jt_f += contacts[k].jacobian.transpose() * sol.forces[k];
      const VectorXd v_free = v + dt * M.llt().solve(tau - C);
      const VectorXd v_post_ref = v_free + dt * M.llt().solve(jt_f);
      CHECK((sol.v_post - v_post_ref).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("tangential push beyond the cone saturates a facet and slides") {
  const double m = 2.0, dt = 1e-3, mu = 0.6;
  const double eta = mu / std::sqrt(2.0);
  const auto tree = make_cube_tree(m);
  const auto x = cube_rest_state();
  VectorXd tau = VectorXd::Zero(6);
  tau(0) = 15.0;  // > mu*m*g/sqrt(2) = 8.3 N available along +x

  const auto r = solve_cube(tree, x, Terrain<double>::Flat(mu), tau, dt);
  REQUIRE(r.contacts.size() == 4);
  for (int k = 0; k < 4; ++k) {
    const Vector3d f = r.sol.forces[k];
    // friction fully mobilized against the push: every loaded corner is
    // pinned on the -t1 facet
    if (f.z() > 1e-6) CHECK(std::abs(f.x() + eta * f.z()) <= 1e-8);
  }
  CHECK(r.sol.v_post(0) > 1e-4);  // slides along +x

  // the whole force solution matches the dense enumeration oracle
  const MatrixXd M = mass_matrix(tree, x);
  const VectorXd C = bias_forces(tree, x, kGravity);
  const auto qp = assemble_contact_qp(M, C, tau, x.velocity(), r.contacts, dt);
  const VectorXd ref = oracle_pyramid_qp(qp.A, qp.c, qp.eta);
  VectorXd got(3 * 4);
  for (int k = 0; k < 4; ++k) got.segment<3>(3 * k) = r.sol.forces[k];
  CHECK((got - ref).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("frictionless ground cannot resist a tangential push") {
  const double m = 2.0, dt = 1e-3;
  const auto tree = make_cube_tree(m);
  const auto x = cube_rest_state();
  VectorXd tau = VectorXd::Zero(6);
  tau(0) = 0.5;

  const auto r = solve_cube(tree, x, Terrain<double>::Flat(0.0), tau, dt);
  REQUIRE(r.contacts.size() == 4);
  double fz_sum = 0;
  for (int k = 0; k < 4; ++k) {
    CHECK(std::abs(r.sol.forces[k].x()) <= 1e-12);
    CHECK(std::abs(r.sol.forces[k].y()) <= 1e-12);
    fz_sum += r.sol.forces[k].z();
  }
  CHECK(std::abs(fz_sum - m * kG) <= 1e-6);
  // full push goes into sliding acceleration
  CHECK(r.sol.v_post(0) == doctest::Approx(dt * tau(0) / m).epsilon(1e-9));
  CHECK(std::abs(r.sol.v_post(2)) <= 1e-9);
}

TEST_CASE("empty contact set reduces to unconstrained dynamics") {
  const auto tree = make_cube_tree();
  auto x = cube_rest_state();
  x.base_pos = Vector3d(0, 0, 1.0);
  const double dt = 1e-3;
  const MatrixXd M = mass_matrix(tree, x);
  const VectorXd C = bias_forces(tree, x, kGravity);
  const VectorXd tau = VectorXd::Zero(6);

  const ContactSet<double> none;
  const auto sol = solve_contact_forces(M, C, tau, x.velocity(), none, dt);
  CHECK(sol.forces.empty());
  const VectorXd v_free = x.velocity() + dt * M.llt().solve(tau - C);
  CHECK((sol.v_post - v_free).cwiseAbs().maxCoeff() == 0.0);
  CHECK(sol.v_post(2) == doctest::Approx(-kG * dt).epsilon(1e-12));
}

TEST_CASE("identical inputs produce bit-identical forces") {
  const auto tree = make_cube_tree();
  auto x = cube_rest_state();
  x.base_lin_vel = Vector3d(0.1, -0.05, -0.2);
  x.base_ang_vel = Vector3d(0.3, 0.2, -0.1);
  VectorXd tau(6);
  tau << 1.0, -2.0, 0.5, 0.1, -0.3, 0.2;

  const auto a = solve_cube(tree, x, Terrain<double>::Flat(0.8), tau, 1e-3);
  const auto b = solve_cube(tree, x, Terrain<double>::Flat(0.8), tau, 1e-3);
  REQUIRE(a.sol.forces.size() == b.sol.forces.size());
  for (size_t k = 0; k < a.sol.forces.size(); ++k) {
    CHECK(a.sol.forces[k](0) == b.sol.forces[k](0));
    CHECK(a.sol.forces[k](1) == b.sol.forces[k](1));
    CHECK(a.sol.forces[k](2) == b.sol.forces[k](2));
  }
  CHECK((a.sol.v_post.array() == b.sol.v_post.array()).all());
  CHECK(a.sol.iterations == b.sol.iterations);
}
