// Contact detection and force computation against flat/ramp terrain.
//
// Formulation: velocity-level convex QP in force units. With v_free the
// generalized velocity after applying all non-contact forces for one step dt,
// and J the stacked contact-frame Jacobians (rows t1, t2, n per contact), the
// contact forces f minimize
//
//     0.5 f' (dt J M^-1 J' + reg I) f + f' (J v_free + b)
//
// over the product of 4-facet friction pyramids
//
//     f_n >= 0,   |f_t1| <= (mu/sqrt(2)) f_n,   |f_t2| <= (mu/sqrt(2)) f_n,
//
// an inner approximation of the Coulomb cone (|f_t| <= mu f_n for any
// tangential direction). b adds a penetration-correction bias of
// -0.1 * depth / dt on the normal rows. The post-step velocity is
// v_post = v_free + dt M^-1 J' f; complementarity between forces and
// constraint-frame separation velocities follows from the QP optimality
// conditions.
//
// Solver: projected gradient descent (step 1/L from a Gershgorin bound) with
// exact per-contact pyramid projections, plus an active-set KKT polish that
// solves the equality-restricted system and verifies primal/dual feasibility.
// Restricted systems are solved as the minimum-norm correction of the current
// iterate, because rank-deficient contact patches (more force coordinates
// than independent velocity directions) make the KKT matrix singular along
// force-indeterminate directions. The same indeterminacy makes plain PGD
// creep: conflicting penetration bias drives a near-zero-curvature valley, so
// the iterate translates at a constant step for millions of iterations. Once
// consecutive steps become parallel, the loop extrapolates geometric tails to
// their limit and fast-forwards translations to the next facet/separation
// event, accepting either jump only on a strict natural-residual decrease.
// Deterministic: identical inputs give bit-identical results. Iteration cap
// 20000; failure to converge throws ContactSolverError (never silent zeros).
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hmpc/rigid_body.hpp"

namespace hmpc {

inline constexpr double kContactReg = 1e-10;   // QP curvature regularizer
inline constexpr double kContactTol = 1e-8;    // convergence tolerance (force scale)
inline constexpr int kContactIterCap = 20000;  // PGD iteration cap
inline constexpr double kContactBaumgarte = 0.1;  // penetration correction gain

class ContactSolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ground geometry: flat plane z=0, or flat up to ramp_start then a planar
// incline of the given slope along +x (piecewise-linear height in x)
template <typename S>
struct Terrain {
  enum class Kind { kFlat, kRamp };
  Kind kind = Kind::kFlat;
  S slope = S(0);       // rad; incline angle of the ramp face
  S ramp_start = S(0);  // x coordinate where the incline begins
  S mu = S(0.8);        // friction coefficient handed to detected contacts

  static Terrain Flat(S mu) {
    Terrain t;
    t.kind = Kind::kFlat;
    t.mu = mu;
    return t;
  }
  static Terrain Ramp(S slope, S mu, S ramp_start = S(0)) {
    Terrain t;
    t.kind = Kind::kRamp;
    t.slope = slope;
    t.ramp_start = ramp_start;
    t.mu = mu;
    return t;
  }

  S height(S x, S /*y*/) const {
    if (kind == Kind::kRamp && x > ramp_start) return (x - ramp_start) * std::tan(slope);
    return S(0);
  }
  Eigen::Matrix<S, 3, 1> normal(S x, S /*y*/) const {
    if (kind == Kind::kRamp && x > ramp_start)
      return Eigen::Matrix<S, 3, 1>(-std::sin(slope), S(0), std::cos(slope));
    return Eigen::Matrix<S, 3, 1>(S(0), S(0), S(1));
  }
};

// deterministic orthonormal basis orthogonal to a unit normal; on flat ground
// (n = +z) this is exactly the world x/y axes
template <typename S>
void tangent_basis(const Eigen::Matrix<S, 3, 1>& n, Eigen::Matrix<S, 3, 1>* t1,
                   Eigen::Matrix<S, 3, 1>* t2) {
  const Eigen::Matrix<S, 3, 1> a = std::abs(n.x()) < S(0.9)
                                       ? Eigen::Matrix<S, 3, 1>(S(1), S(0), S(0))
                                       : Eigen::Matrix<S, 3, 1>(S(0), S(1), S(0));
  *t1 = (a - n * n.dot(a)).normalized();
  *t2 = n.cross(*t1);
}

template <typename S>
struct ActiveContact {
  int point_index = -1;  // index into tree.contact_points
  int link = -1;
  Eigen::Matrix<S, 3, 1> position;  // world
  Eigen::Matrix<S, 3, 1> normal;    // unit surface normal
  Eigen::Matrix<S, 2, 3> tangents;  // rows t1, t2; orthonormal, orthogonal to normal
  S penetration = S(0);             // depth along the normal; > 0 means inside
  S mu = S(0);
  Eigen::Matrix<S, 3, Eigen::Dynamic> jacobian;  // contact-frame rows (t1,t2,n) x nv
};

template <typename S>
using ContactSet = std::vector<ActiveContact<S>>;

// All declared contact points whose vertical gap to the terrain is at most
// threshold, in declaration order. Penetration is the normal-direction depth
// (vertical gap scaled by n_z; exact for planar faces).
template <typename S>
ContactSet<S> detect_contacts(const KinematicTree<S>& tree, const Kinematics<S>& kin,
                              const Terrain<S>& terrain, S threshold) {
  ContactSet<S> out;
  const int nv = tree.nv();
  for (size_t idx = 0; idx < tree.contact_points.size(); ++idx) {
    const ContactPointDef<S>& cp = tree.contact_points[idx];
    const Eigen::Matrix<S, 3, 1> p =
        kin.frames[cp.link].p + kin.frames[cp.link].R * cp.offset;
    const S gap = p.z() - terrain.height(p.x(), p.y());
    if (gap > threshold) continue;

    ActiveContact<S> ct;
    ct.point_index = static_cast<int>(idx);
    ct.link = cp.link;
    ct.position = p;
    ct.normal = terrain.normal(p.x(), p.y());
    Eigen::Matrix<S, 3, 1> t1, t2;
    tangent_basis(ct.normal, &t1, &t2);
    ct.tangents.row(0) = t1.transpose();
    ct.tangents.row(1) = t2.transpose();
    ct.penetration = -gap * ct.normal.z();
    ct.mu = terrain.mu;

    const Eigen::Matrix<S, 3, Eigen::Dynamic> Jp =
        point_jacobian(tree, kin, cp.link, cp.offset);
    ct.jacobian.resize(3, nv);
    ct.jacobian.row(0) = t1.transpose() * Jp;
    ct.jacobian.row(1) = t2.transpose() * Jp;
    ct.jacobian.row(2) = ct.normal.transpose() * Jp;
    out.push_back(ct);
  }
  return out;
}

template <typename S>
ContactSet<S> detect_contacts(const KinematicTree<S>& tree,
                              const GeneralizedState<S>& state,
                              const Terrain<S>& terrain, S threshold) {
  return detect_contacts(tree, forward_kinematics(tree, state), terrain, threshold);
}

// Exact Euclidean projection onto {l_n >= 0, |l_t1| <= eta l_n, |l_t2| <= eta l_n}.
// For fixed l_n = z the tangentials clamp to [-eta z, eta z], leaving a convex
// piecewise-quadratic 1D problem in z solved region by region.
template <typename S>
Eigen::Matrix<S, 3, 1> project_pyramid(const Eigen::Matrix<S, 3, 1>& a, S eta) {
  using V3 = Eigen::Matrix<S, 3, 1>;
  const S a1 = a(0), a2 = a(1), an = a(2);
  if (eta <= S(0)) return V3(S(0), S(0), std::max(an, S(0)));

  const S u1 = std::abs(a1), u2 = std::abs(a2);
  if (eta * (u1 + u2) + an <= S(0)) return V3::Zero();  // inside the polar cone

  const S s_lo = std::min(u1, u2) / eta;
  const S s_hi = std::max(u1, u2) / eta;
  S z;
  const S zA = (an + eta * (u1 + u2)) / (S(1) + S(2) * eta * eta);
  if (zA <= s_lo) {
    z = zA;  // both tangentials clamped
  } else {
    const S zB = (an + eta * std::max(u1, u2)) / (S(1) + eta * eta);
    if (zB <= s_hi) {
      z = std::max(zB, s_lo);  // only the larger tangential clamped
    } else {
      z = std::max(an, s_hi);  // interior in both tangentials
    }
  }
  z = std::max(z, S(0));
  const S bound = eta * z;
  return V3(std::clamp(a1, -bound, bound), std::clamp(a2, -bound, bound), z);
}

// assembled QP data; A and c are in force units as documented above
template <typename S>
struct ContactQp {
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> A;
  Eigen::Matrix<S, Eigen::Dynamic, 1> c;
  std::vector<S> eta;                                   // mu/sqrt(2) per contact
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> J;   // 3K x nv
  Eigen::Matrix<S, Eigen::Dynamic, 1> v_free;           // nv
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> MinvJt;  // nv x 3K
  S dt = S(0);
};

template <typename S>
ContactQp<S> assemble_contact_qp(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& M,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& C,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& tau,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& v,
    const ContactSet<S>& contacts, S dt) {
  using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const int nv = static_cast<int>(M.rows());
  const int K = static_cast<int>(contacts.size());

  ContactQp<S> qp;
  qp.dt = dt;
  const Eigen::LLT<MatX> llt(M);
  qp.v_free = v + dt * llt.solve(tau - C);
  if (K == 0) return qp;

  qp.J.resize(3 * K, nv);
  qp.eta.resize(K);
  for (int k = 0; k < K; ++k) {
    qp.J.middleRows(3 * k, 3) = contacts[k].jacobian;
    qp.eta[k] = contacts[k].mu / std::sqrt(S(2));
  }
  qp.MinvJt = llt.solve(qp.J.transpose());
  MatX A = dt * (qp.J * qp.MinvJt);
  qp.A = S(0.5) * (A + A.transpose());
  qp.A.diagonal().array() += S(kContactReg);
  qp.c = qp.J * qp.v_free;
  for (int k = 0; k < K; ++k)
    qp.c(3 * k + 2) -= S(kContactBaumgarte) * contacts[k].penetration / dt;
  return qp;
}

// Minimizes 0.5 l'Al + l'c over the pyramid product. Returns the force vector
// (3 per contact, contact frame). Throws ContactSolverError on non-convergence.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> solve_pyramid_qp(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& A,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& c,
    const std::vector<S>& eta, int* iterations = nullptr, bool* polished = nullptr) {
  using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  const int n = static_cast<int>(c.size());
  const int K = n / 3;
  if (iterations) *iterations = 0;
  if (polished) *polished = false;
  if (n == 0) return VecX();

  // Gershgorin bound on the top eigenvalue gives a safe 1/L step
  S L = S(0);
  for (int i = 0; i < n; ++i) L = std::max(L, A.row(i).cwiseAbs().sum());
  L = std::max(L, S(kContactReg));
  const S fscale = std::max(S(1), c.template lpNorm<Eigen::Infinity>() / L);
  const S tol = S(kContactTol) * fscale;

  auto project_all = [&](VecX& l) {
    for (int k = 0; k < K; ++k)
      l.template segment<3>(3 * k) =
          project_pyramid<S>(l.template segment<3>(3 * k), eta[k]);
  };
  auto natural_residual = [&](const VecX& l) {
    VecX t = l - (A * l + c) / L;
    project_all(t);
    return (l - t).template lpNorm<Eigen::Infinity>();
  };

  // Active-set polish. From the PGD iterate, classify each contact as off /
  // free / facet-pinned, solve the equality-restricted KKT system exactly,
  // and accept only a solution that is primal and dual feasible for the
  // inequality problem. Classification thresholds are swept from tight to
  // loose, and each classification gets a few single-constraint repair
  // rounds (add the worst violated constraint, release the worst wrong-sign
  // multiplier) so weakly-active sets are still resolved exactly.
  constexpr int kTanFree = 0, kTanUpper = 1, kTanLower = -1, kTanPinned = 2;
  struct ConeState {
    bool off = false;
    int tan[2] = {kTanFree, kTanFree};
  };

  // solves the KKT system for a given classification; returns false only for
  // a numerically unusable (inconsistent) system. facet_id rows are
  // {contact, tangent, side} with side +1 (upper) / -1 (lower). The system is
  // singular whenever the active rows leave a force-indeterminate subspace
  // free; among the affine family of solutions, take the one nearest the
  // anchor (the current iterate), so candidates stay in its basin instead of
  // running down the near-null valley and landing infeasible.
  auto solve_restricted = [&](const std::vector<ConeState>& st, const VecX& anchor,
                              VecX* lp_out, std::vector<S>* facet_nu,
                              std::vector<std::array<int, 3>>* facet_id) -> bool {
    std::vector<Eigen::Matrix<S, 1, Eigen::Dynamic>> rows;
    std::vector<int> facet_row;  // indices into rows that are facet rows
    facet_id->clear();
    for (int k = 0; k < K; ++k) {
      if (st[k].off) {
        for (int i = 0; i < 3; ++i) {
          Eigen::Matrix<S, 1, Eigen::Dynamic> r =
              Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(n);
          r(3 * k + i) = S(1);
          rows.push_back(r);
        }
        continue;
      }
      for (int t = 0; t < 2; ++t) {
        if (st[k].tan[t] == kTanFree) continue;
        Eigen::Matrix<S, 1, Eigen::Dynamic> r =
            Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(n);
        r(3 * k + t) = S(1);
        if (st[k].tan[t] == kTanPinned) {
          rows.push_back(r);
          continue;
        }
        const int side = (st[k].tan[t] == kTanUpper) ? 1 : -1;
        r(3 * k + 2) = -side * eta[k];
        facet_row.push_back(static_cast<int>(rows.size()));
        facet_id->push_back({k, t, side});
        rows.push_back(r);
      }
    }
    const int m = static_cast<int>(rows.size());
    MatX B = MatX::Zero(n + m, n + m);
    B.topLeftCorner(n, n) = A;
    for (int i = 0; i < m; ++i) {
      B.block(n + i, 0, 1, n) = rows[i];
      B.block(0, n + i, n, 1) = rows[i].transpose();
    }
    VecX rhs = VecX::Zero(n + m);
    rhs.head(n) = -c;
    VecX x0 = VecX::Zero(n + m);
    x0.head(n) = anchor;
    const VecX sol = x0 + B.completeOrthogonalDecomposition().solve(rhs - B * x0);
    // residual of a backward-stable solve scales with the solution magnitude,
    // not the rhs; this gate only needs to catch inconsistent singular systems
    const S kkt_scale = std::max(S(1), sol.template lpNorm<Eigen::Infinity>() +
                                           rhs.template lpNorm<Eigen::Infinity>());
    const S kkt_err = (B * sol - rhs).template lpNorm<Eigen::Infinity>();
    if (!(kkt_err <= S(1e-10) * kkt_scale)) return false;
    *lp_out = sol.head(n);
    facet_nu->resize(facet_id->size());
    for (size_t i = 0; i < facet_row.size(); ++i)
      (*facet_nu)[i] = sol(n + facet_row[i]);
    return true;
  };

  auto try_polish = [&](const VecX& l, VecX* out) -> bool {
    const S scale = std::max(fscale, l.template lpNorm<Eigen::Infinity>());
    const S rels[] = {S(1e-9), S(1e-7), S(1e-5), S(1e-3)};
    for (const S rel : rels) {
      const S act = rel * scale;
      std::vector<ConeState> st(K);
      for (int k = 0; k < K; ++k) {
        const S l1 = l(3 * k), l2 = l(3 * k + 1), ln = l(3 * k + 2);
        if (ln <= act) {
          st[k].off = true;
          continue;
        }
        for (int t = 0; t < 2; ++t) {
          const S lt = (t == 0) ? l1 : l2;
          if (eta[k] * ln <= act)
            st[k].tan[t] = kTanPinned;  // cone degenerate in this tangent
          else if (lt >= eta[k] * ln - act)
            st[k].tan[t] = kTanUpper;
          else if (lt <= -eta[k] * ln + act)
            st[k].tan[t] = kTanLower;
        }
      }

      for (int round = 0; round < 10; ++round) {
        VecX lp;
        std::vector<S> nu;
        std::vector<std::array<int, 3>> nu_id;
        if (!solve_restricted(st, l, &lp, &nu, &nu_id)) break;

        const VecX g = A * lp + c;
        const S ptol = S(1e-9) * std::max(scale, lp.template lpNorm<Eigen::Infinity>());
        const S dtol = S(1e-7) * std::max(S(1), g.template lpNorm<Eigen::Infinity>());

        // worst violated condition decides the single repair for this round
        S worst = S(0);
        int fix_kind = -1, fix_k = -1, fix_t = 0, fix_sign = 0;
        for (int k = 0; k < K; ++k) {
          const S l1 = lp(3 * k), l2 = lp(3 * k + 1), ln = lp(3 * k + 2);
          if (!st[k].off) {
            if (-ln > std::max(worst, ptol)) {  // normal went negative: off
              worst = -ln;
              fix_kind = 0;
              fix_k = k;
            }
            for (int t = 0; t < 2; ++t) {
              if (st[k].tan[t] != kTanFree) continue;
              const S lt = (t == 0) ? l1 : l2;
              const S v = std::abs(lt) - eta[k] * ln;
              if (v > std::max(worst, ptol)) {  // outside a facet: pin to it
                worst = v;
                fix_kind = 1;
                fix_k = k;
                fix_t = t;
                fix_sign = (lt > S(0)) ? kTanUpper : kTanLower;
              }
            }
          } else {
            // vertex optimality: gradient must lie in the dual cone
            const S gn = g(3 * k + 2), g1 = g(3 * k), g2 = g(3 * k + 1);
            const S v = eta[k] * (std::abs(g1) + std::abs(g2)) - gn;
            if (v > std::max(worst, dtol)) {  // contact wrongly off: release
              worst = v;
              fix_kind = 2;
              fix_k = k;
            }
          }
        }
        for (size_t i = 0; i < nu.size(); ++i) {
          // the multiplier must push toward the feasible side: >= 0 on upper
          // facets, <= 0 on lower facets (rows are written as lt -/+ eta*ln)
          const S v = (nu_id[i][2] > 0) ? -nu[i] : nu[i];
          if (v > std::max(worst, dtol)) {  // wrong-sign multiplier: free
            worst = v;
            fix_kind = 3;
            fix_k = nu_id[i][0];
            fix_t = nu_id[i][1];
          }
        }

        if (fix_kind < 0) {
          // a facet whose multiplier is negative but below the repair
          // threshold still poisons the natural-map residual through the 1/L
          // amplification on near-singular (force-indeterminate) systems.
          // Peel such facets off one at a time — release-only, so the loop
          // terminates — and keep the result only while it stays primal
          // feasible; the residual gate below remains the sole arbiter.
          for (int peel = 0; peel < 2 * K; ++peel) {
            S worst_nu = S(0);
            int rel_k = -1, rel_t = 0;
            for (size_t i = 0; i < nu.size(); ++i) {
              const S v = (nu_id[i][2] > 0) ? -nu[i] : nu[i];
              if (v > worst_nu) {
                worst_nu = v;
                rel_k = nu_id[i][0];
                rel_t = nu_id[i][1];
              }
            }
            if (rel_k < 0) break;
            std::vector<ConeState> st_try = st;
            st_try[rel_k].tan[rel_t] = kTanFree;
            VecX lc;
            std::vector<S> nuc;
            std::vector<std::array<int, 3>> nuc_id;
            if (!solve_restricted(st_try, l, &lc, &nuc, &nuc_id)) break;
            const S ctol = S(1e-9) * std::max(scale, lc.template lpNorm<Eigen::Infinity>());
            bool clean = true;
            for (int k = 0; k < K && clean; ++k) {
              if (st_try[k].off) continue;
              const S ln = lc(3 * k + 2);
              if (-ln > ctol || std::abs(lc(3 * k)) - eta[k] * ln > ctol ||
                  std::abs(lc(3 * k + 1)) - eta[k] * ln > ctol)
                clean = false;
            }
            if (!clean) break;
            st = st_try;
            lp = lc;
            nu = nuc;
            nu_id = nuc_id;
          }
          if (natural_residual(lp) > tol) break;
          project_all(lp);  // snap fp-level violations to exact feasibility
          *out = lp;
          return true;
        }
        if (fix_kind == 0) {
          st[fix_k].off = true;
        } else if (fix_kind == 1) {
          st[fix_k].tan[fix_t] = fix_sign;
        } else if (fix_kind == 2) {
          st[fix_k] = ConeState();
        } else {
          st[fix_k].tan[fix_t] = kTanFree;
        }
      }
    }
    return false;
  };

  // first facet/separation event along the ray l + tau * d: a positive normal
  // reaching zero or an interior tangential crossing its (moving) facet
  auto first_event = [&](const VecX& l, const VecX& d) -> S {
    S tau = std::numeric_limits<S>::infinity();
    for (int k = 0; k < K; ++k) {
      const S ln = l(3 * k + 2), dn = d(3 * k + 2);
      if (ln <= S(0)) continue;
      if (dn < S(0)) tau = std::min(tau, ln / -dn);
      const S b = eta[k] * ln, db = eta[k] * dn;
      for (int t = 0; t < 2; ++t) {
        const S a = l(3 * k + t), da = d(3 * k + t);
        if (std::abs(a) >= b) continue;
        if (da - db > S(0)) {
          const S up = (b - a) / (da - db);
          if (up > S(0)) tau = std::min(tau, up);
        }
        if (da + db < S(0)) {
          const S lo = -(a + b) / (da + db);
          if (lo > S(0)) tau = std::min(tau, lo);
        }
      }
    }
    return tau;
  };

  VecX lam = VecX::Zero(n), lam_next(n), d(n), d_prev = VecX::Zero(n), cand(n), polish_out;
  for (int it = 1; it <= kContactIterCap; ++it) {
    lam_next = lam - (A * lam + c) / L;
    project_all(lam_next);
    d = lam_next - lam;
    const S r = d.template lpNorm<Eigen::Infinity>();
    lam.swap(lam_next);
    if (r <= tol) {
      if (iterations) *iterations = it;
      if (try_polish(lam, &polish_out)) {
        if (polished) *polished = true;
        return polish_out;
      }
      return lam;  // fixed point reached; polish not applicable
    }
    if (it % 5 == 0 && try_polish(lam, &polish_out)) {
      if (iterations) *iterations = it;
      if (polished) *polished = true;
      return polish_out;
    }
    // creep acceleration: once consecutive steps are parallel the iterate is
    // either in a geometric tail (extrapolate to its limit) or translating
    // along a force-indeterminate valley (fast-forward to the next event);
    // accept a jump only on a strict natural-residual decrease, which keeps
    // the loop monotone and cycle-free
    if (it >= 30 && it % 10 == 0) {
      const S dn_ = d.norm(), dp_ = d_prev.norm();
      if (dn_ > S(0) && dp_ > S(0)) {
        const S cosang = d.dot(d_prev) / (dn_ * dp_);
        const S rho = dn_ / dp_;
        if (cosang > S(0.999999) && rho <= S(1) + S(1e-12)) {
          const S n0 = natural_residual(lam);
          bool jumped = false;
          if (rho < S(1)) {
            const S gain = std::min(rho / (S(1) - rho), S(1e7));
            cand = lam + gain * d;
            project_all(cand);
            if (natural_residual(cand) < n0) {
              lam = cand;
              jumped = true;
            }
          }
          if (!jumped) {
            const S tau = first_event(lam, d);
            if (std::isfinite(tau) && tau > S(20)) {
              cand = lam + (tau - S(2)) * d;
              project_all(cand);
              if (natural_residual(cand) < n0) {
                lam = cand;
                jumped = true;
              }
            }
          }
          if (jumped) {
            d_prev.setZero();
            continue;
          }
        }
      }
    }
    d_prev = d;
  }
  throw ContactSolverError(
      "contact QP did not converge: " + std::to_string(K) + " contacts, residual " +
      std::to_string(natural_residual(lam)) + " > tol " + std::to_string(tol) +
      " after " + std::to_string(kContactIterCap) + " iterations");
}

template <typename S>
struct ContactSolution {
  std::vector<Eigen::Matrix<S, 3, 1>> forces;  // per contact, contact frame (t1,t2,n), N
  Eigen::Matrix<S, Eigen::Dynamic, 1> v_post;  // generalized velocity after the step
  int iterations = 0;
  bool polished = false;
};

template <typename S>
Eigen::Matrix<S, 3, 1> world_force(const ActiveContact<S>& ct,
                                   const Eigen::Matrix<S, 3, 1>& f) {
  return ct.tangents.row(0).transpose() * f(0) + ct.tangents.row(1).transpose() * f(1) +
         ct.normal * f(2);
}

template <typename S>
ContactSolution<S> solve_contact_forces(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& M,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& C,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& tau,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& v,
    const ContactSet<S>& contacts, S dt) {
  const ContactQp<S> qp = assemble_contact_qp(M, C, tau, v, contacts, dt);
  ContactSolution<S> sol;
  if (contacts.empty()) {
    sol.v_post = qp.v_free;
    return sol;
  }
  const Eigen::Matrix<S, Eigen::Dynamic, 1> lam =
      solve_pyramid_qp<S>(qp.A, qp.c, qp.eta, &sol.iterations, &sol.polished);
  sol.forces.resize(contacts.size());
  for (size_t k = 0; k < contacts.size(); ++k)
    sol.forces[k] = lam.template segment<3>(3 * static_cast<int>(k));
  sol.v_post = qp.v_free + dt * (qp.MinvJt * lam);
  return sol;
}

}  // namespace hmpc
