#pragma once
// Trajectory optimizer for the decision-rate layer: DDP-style backward and
// forward passes over finite-difference linearizations of a boxplus/boxminus
// state manifold, with control-dependent noise entering the backward pass as
// sigma^2-scaled quadratic corrections. Generic over a ControlSystem so the
// same solver runs on plain vector LTI systems (used by the equivalence
// tests) and on the augmented whole-body model.

#include <array>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace hmpc {

// discrete-time controlled system on a manifold-valued state: step advances
// one decision interval, boxplus/boxminus chart the state into tangent
// coordinates, and noise_gain maps unit white noise into the tangent space
// (time-indexed because the fallback control defining it varies per step)
template <typename Sys>
concept ControlSystem = requires(const Sys& s, const typename Sys::State& x,
                                 const Eigen::VectorXd& v, int t) {
  { s.tangent_dim() } -> std::convertible_to<int>;
  { s.control_dim() } -> std::convertible_to<int>;
  { s.sigma() } -> std::convertible_to<double>;
  { s.step(x, v) } -> std::same_as<typename Sys::State>;
  { s.boxminus(x, x) } -> std::convertible_to<Eigen::VectorXd>;
  { s.boxplus(x, v) } -> std::same_as<typename Sys::State>;
  { s.noise_gain(t, x, v) } -> std::convertible_to<Eigen::VectorXd>;
};

// diagonal quadratic running cost: ||x [-] x_ref||^2_Wx + ||u||^2_Wu
struct CostWeights {
  Eigen::VectorXd w_state;    // tangent-dim diagonal
  Eigen::VectorXd w_control;  // control-dim diagonal

  void validate() const {
    if ((w_state.array() < 0.0).any() || (w_control.array() < 0.0).any())
      throw std::invalid_argument("cost weights: negative diagonal entry");
  }
};

struct MpcConfig {
  int horizon = 12;     // states per solve; 12 * 0.060 s covers 0.72 s
  double dt = 0.060;    // decision interval, s
  int max_iterations = 50;
  double fd_step = 1e-5;    // tangent-space finite-difference step
  double reg_init = 0.0;    // Levenberg-style value-Hessian regularization
  double reg_min = 1e-6;
  double reg_max = 1e10;
  double cost_tol = 1e-9;   // relative accepted-improvement stop
  int workers = 1;          // derivative fan-out; result is worker-invariant

  void validate() const {
    if (horizon < 2) throw std::invalid_argument("mpc config: horizon < 2");
    if (!(dt > 0.0)) throw std::invalid_argument("mpc config: dt <= 0");
    if (!(fd_step > 0.0)) throw std::invalid_argument("mpc config: fd_step <= 0");
    if (max_iterations < 1) throw std::invalid_argument("mpc config: max_iterations < 1");
    if (workers < 1) throw std::invalid_argument("mpc config: workers < 1");
  }
};

inline constexpr std::array<double, 5> kLineSearchAlphas = {1.0, 0.5, 0.25, 0.125,
                                                            0.0625};

// time-indexed affine policy: u*_t + K*_t (x [-] x*_t)
template <typename State>
struct PolicyOutput {
  std::vector<Eigen::VectorXd> u;  // N-1 feedforward inputs
  std::vector<State> x;            // N nominal states
  std::vector<Eigen::MatrixXd> K;  // N-1 feedback gains, control x tangent
  double timestamp = 0.0;          // stamp of the state the solve started from

  // solve telemetry
  std::vector<double> cost_trace;  // initial + accepted totals, non-increasing
  double final_cost = std::numeric_limits<double>::infinity();
  double final_reg = 0.0;
  int iterations = 0;
  bool degraded = false;  // best-so-far returned after a cap or failure
  double duration_s = 0.0;
};

template <ControlSystem Sys>
double stage_cost(const Sys& sys, const CostWeights& w, const typename Sys::State& x,
                  const typename Sys::State& x_ref, const Eigen::VectorXd& u) {
  const Eigen::VectorXd e = sys.boxminus(x, x_ref);
  return e.dot((w.w_state.array() * e.array()).matrix()) +
         u.dot((w.w_control.array() * u.array()).matrix());
}

// cumulative cost over the rollout; the terminal stage is charged with u = 0
template <ControlSystem Sys>
double trajectory_cost(const Sys& sys, const CostWeights& w,
                       const std::vector<typename Sys::State>& x,
                       const std::vector<typename Sys::State>& refs,
                       const std::vector<Eigen::VectorXd>& u) {
  double total = 0.0;
  for (size_t t = 0; t < u.size(); ++t) total += stage_cost(sys, w, x[t], refs[t], u[t]);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(sys.control_dim());
  return total + stage_cost(sys, w, x.back(), refs[x.size() - 1], zero);
}

struct PolicyTick {
  Eigen::VectorXd u;
  bool stale = false;  // tick beyond the policy span: last element held
};

// Eq.-8-style policy evaluation at tick t with the observed state
template <ControlSystem Sys>
PolicyTick extract_policy_tick(const Sys& sys, const PolicyOutput<typename Sys::State>& p,
                               int t, const typename Sys::State& x) {
  if (p.u.empty() || p.K.size() != p.u.size() || p.x.size() != p.u.size() + 1)
    throw std::invalid_argument("policy tick: malformed policy");
  if (t < 0) throw std::invalid_argument("policy tick: negative index");
  PolicyTick r;
  r.stale = t >= static_cast<int>(p.u.size());
  const int tt = r.stale ? static_cast<int>(p.u.size()) - 1 : t;
  r.u = p.u[tt] + p.K[tt] * sys.boxminus(x, p.x[tt]);
  return r;
}

namespace detail {

template <typename State>
struct IlqgLinearization {
  Eigen::MatrixXd A;  // d(next tangent)/d(state tangent)
  Eigen::MatrixXd B;  // d(next tangent)/d(control)
  Eigen::VectorXd F;  // noise direction (tangent), sigma > 0 only
  Eigen::MatrixXd G;  // dF/du, sigma > 0 only
};

}  // namespace detail

// Stochastic trajectory optimization around an initial control sequence.
// Backward pass: value recursion over the finite-difference linearization
// with Levenberg regularization (x10 on failure, /2 on success) and, when
// sigma > 0, control-dependent-noise corrections
//   dQ_u  = sigma^2 G^T diag(Vxx) F,   dQ_uu = sigma^2 G^T diag(Vxx) G,
// which vanish identically at sigma = 0. Forward pass: backtracking line
// search over kLineSearchAlphas accepting only strict cost decrease, so the
// accepted-cost trace is non-increasing by construction. Dynamics failures
// (exceptions, non-finite values) during candidate rollouts reject the
// candidate; persistent failure inflates the regularization until reg_max,
// after which the best trajectory so far is returned flagged degraded. The
// solve never throws on dynamics errors after the initial state is accepted.
template <ControlSystem Sys>
PolicyOutput<typename Sys::State> ilqg_solve(
    const Sys& sys, const MpcConfig& cfg, const CostWeights& weights,
    const typename Sys::State& x0, const std::vector<typename Sys::State>& refs,
    std::vector<Eigen::VectorXd> u_init = {}, double timestamp = 0.0) {
  using State = typename Sys::State;
  using Eigen::MatrixXd;
  using Eigen::VectorXd;
  const auto t_start = std::chrono::steady_clock::now();

  cfg.validate();
  weights.validate();
  const int N = cfg.horizon;
  const int n = sys.tangent_dim();
  const int m = sys.control_dim();
  if (weights.w_state.size() != n || weights.w_control.size() != m)
    throw std::invalid_argument("ilqg: weight dimensions do not match the system");
  if (static_cast<int>(refs.size()) < N)
    throw std::invalid_argument("ilqg: reference window shorter than the horizon");
  if (u_init.empty()) u_init.assign(N - 1, VectorXd::Zero(m));
  if (static_cast<int>(u_init.size()) != N - 1)
    throw std::invalid_argument("ilqg: warm-start length must be horizon - 1");
  for (const auto& u : u_init)
    if (u.size() != m) throw std::invalid_argument("ilqg: warm-start control dimension");

  PolicyOutput<State> out;
  out.timestamp = timestamp;
  auto finish = [&](PolicyOutput<State>& p) -> PolicyOutput<State>& {
    p.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                                 t_start)
                       .count();
    return p;
  };

  // nominal rollout; on failure truncate by holding the last valid state
  std::vector<State> X(N, x0);
  std::vector<VectorXd> U = u_init;
  bool initial_ok = true;
  for (int t = 0; t < N - 1; ++t) {
    try {
      X[t + 1] = sys.step(X[t], U[t]);
      if (!sys.boxminus(X[t + 1], X[t]).allFinite()) throw std::runtime_error("non-finite");
    } catch (...) {
      for (int s = t + 1; s < N; ++s) X[s] = X[t];
      initial_ok = false;
      break;
    }
  }
  out.x = X;
  out.u = U;
  out.K.assign(N - 1, MatrixXd::Zero(m, n));
  if (!initial_ok) {
    out.degraded = true;
    out.cost_trace = {std::numeric_limits<double>::infinity()};
    return finish(out);
  }

  double cost = trajectory_cost(sys, weights, X, refs, U);
  out.cost_trace = {cost};
  out.final_cost = cost;

  const double sig = sys.sigma();
  const double h = cfg.fd_step;
  std::vector<detail::IlqgLinearization<State>> lin(N - 1);

  // derivative fan-out: each horizon slot fills its own preallocated block,
  // so the result is bit-identical for any worker count
  auto linearize = [&]() -> bool {
    std::vector<char> ok(N - 1, 1);
    const int nw = cfg.workers;
#pragma omp parallel for schedule(static) num_threads(nw)
    for (int t = 0; t < N - 1; ++t) {
      try {
        auto& L = lin[t];
        L.A.resize(n, n);
        L.B.resize(n, m);
        VectorXd d = VectorXd::Zero(n);
        for (int i = 0; i < n; ++i) {
          d(i) = h;
          const State fp = sys.step(sys.boxplus(X[t], d), U[t]);
          d(i) = -h;
          const State fm = sys.step(sys.boxplus(X[t], d), U[t]);
          d(i) = 0.0;
          L.A.col(i) =
              (sys.boxminus(fp, X[t + 1]) - sys.boxminus(fm, X[t + 1])) / (2.0 * h);
        }
        VectorXd up = U[t];
        for (int j = 0; j < m; ++j) {
          up(j) = U[t](j) + h;
          const State fp = sys.step(X[t], up);
          up(j) = U[t](j) - h;
          const State fm = sys.step(X[t], up);
          up(j) = U[t](j);
          L.B.col(j) =
              (sys.boxminus(fp, X[t + 1]) - sys.boxminus(fm, X[t + 1])) / (2.0 * h);
        }
        if (sig > 0.0) {
          L.F = sys.noise_gain(t, X[t], U[t]);
          L.G.resize(n, m);
          for (int j = 0; j < m; ++j) {
            up(j) = U[t](j) + h;
            const VectorXd gp = sys.noise_gain(t, X[t], up);
            up(j) = U[t](j) - h;
            const VectorXd gm = sys.noise_gain(t, X[t], up);
            up(j) = U[t](j);
            L.G.col(j) = (gp - gm) / (2.0 * h);
          }
        }
        if (!L.A.allFinite() || !L.B.allFinite() ||
            (sig > 0.0 && (!L.F.allFinite() || !L.G.allFinite())))
          ok[t] = 0;
      } catch (...) {
        ok[t] = 0;
      }
    }
    for (int t = 0; t < N - 1; ++t)
      if (!ok[t]) return false;
    return true;
  };

  std::vector<VectorXd> kff(N - 1, VectorXd::Zero(m));
  std::vector<MatrixXd> Kfb(N - 1, MatrixXd::Zero(m, n));

  // value recursion at regularization lam; false when Quu is not positive
  // definite at this lam
  auto backward = [&](double lam) -> bool {
    VectorXd Vx = 2.0 * (weights.w_state.array() *
                         sys.boxminus(X[N - 1], refs[N - 1]).array())
                            .matrix();
    MatrixXd Vxx = (2.0 * weights.w_state).asDiagonal();
    for (int t = N - 2; t >= 0; --t) {
      const auto& L = lin[t];
      const VectorXd e = sys.boxminus(X[t], refs[t]);
      const VectorXd Qx =
          2.0 * (weights.w_state.array() * e.array()).matrix() + L.A.transpose() * Vx;
      VectorXd Qu =
          2.0 * (weights.w_control.array() * U[t].array()).matrix() +
          L.B.transpose() * Vx;
      const MatrixXd Qxx = MatrixXd((2.0 * weights.w_state).asDiagonal()) +
                           L.A.transpose() * Vxx * L.A;
      const MatrixXd Qux = L.B.transpose() * Vxx * L.A;
      MatrixXd Quu = MatrixXd((2.0 * weights.w_control).asDiagonal()) +
                     L.B.transpose() * Vxx * L.B;
      MatrixXd Vxx_reg = Vxx;
      Vxx_reg.diagonal().array() += lam;
      const MatrixXd Qux_reg = L.B.transpose() * Vxx_reg * L.A;
      MatrixXd Quu_reg = MatrixXd((2.0 * weights.w_control).asDiagonal()) +
                         L.B.transpose() * Vxx_reg * L.B;
      if (sig > 0.0) {
        const VectorXd dv = Vxx.diagonal();
        const VectorXd dQu =
            sig * sig * L.G.transpose() * (dv.array() * L.F.array()).matrix();
        const MatrixXd dQuu = sig * sig * L.G.transpose() * dv.asDiagonal() * L.G;
        Qu += dQu;
        Quu += dQuu;
        Quu_reg += dQuu;
      }
      const Eigen::LLT<MatrixXd> llt(Quu_reg);
      if (llt.info() != Eigen::Success) return false;
      kff[t] = -llt.solve(Qu);
      Kfb[t] = -llt.solve(Qux_reg);
      Vx = Qx + Kfb[t].transpose() * Quu * kff[t] + Kfb[t].transpose() * Qu +
           Qux.transpose() * kff[t];
      Vxx = Qxx + Kfb[t].transpose() * Quu * Kfb[t] + Kfb[t].transpose() * Qux +
            Qux.transpose() * Kfb[t];
      Vxx = 0.5 * (Vxx + Vxx.transpose());
    }
    return true;
  };

  double lam = cfg.reg_init;
  auto inflate = [&]() -> bool {  // false once past the cap
    lam = std::max(lam * 10.0, cfg.reg_min);
    return lam <= cfg.reg_max;
  };

  // backward pass with regularization retries; false -> give up degraded
  auto backward_with_retries = [&]() -> bool {
    while (!backward(lam)) {
      if (!inflate()) return false;
    }
    return true;
  };

  auto publish = [&]() {
    out.x = X;
    out.u = U;
    out.K = Kfb;  // zeros before the first backward, else the latest gains
    out.final_cost = cost;
    out.final_reg = lam;
  };

  bool gains_stale = true;  // Kfb refers to an older nominal than X
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    out.iterations = iter;
    if (!linearize()) {
      out.degraded = true;
      publish();
      return finish(out);
    }
    if (!backward_with_retries()) {
      out.degraded = true;
      publish();
      return finish(out);
    }
    gains_stale = false;

    // vanishing feedforward step: converged at the current nominal (the
    // threshold sits above the finite-difference noise floor so an exact
    // optimum is recognized instead of spiraling up the regularization)
    double kmax = 0.0;
    for (const auto& k : kff) kmax = std::max(kmax, k.template lpNorm<Eigen::Infinity>());
    if (kmax <= 1e-8 * std::max(1.0, cost)) {
      publish();
      return finish(out);
    }

    bool accepted = false;
    for (const double alpha : kLineSearchAlphas) {
      std::vector<State> Xc(N, X[0]);
      std::vector<VectorXd> Uc(N - 1);
      bool roll_ok = true;
      for (int t = 0; t < N - 1 && roll_ok; ++t) {
        try {
          Uc[t] = U[t] + alpha * kff[t] + Kfb[t] * sys.boxminus(Xc[t], X[t]);
          if (!Uc[t].allFinite()) throw std::runtime_error("non-finite");
          Xc[t + 1] = sys.step(Xc[t], Uc[t]);
          if (!sys.boxminus(Xc[t + 1], Xc[t]).allFinite())
            throw std::runtime_error("non-finite");
        } catch (...) {
          roll_ok = false;
        }
      }
      if (!roll_ok) continue;
      const double cost_c = trajectory_cost(sys, weights, Xc, refs, Uc);
      if (!std::isfinite(cost_c) || cost_c >= cost) continue;

      const double drop = cost - cost_c;
      X.swap(Xc);
      U.swap(Uc);
      cost = cost_c;
      out.cost_trace.push_back(cost);
      gains_stale = true;  // gains were computed about the previous nominal
      lam = (lam <= cfg.reg_min ? 0.0 : lam * 0.5);
      accepted = true;
      if (drop <= cfg.cost_tol * std::max(1.0, cost)) {
        // converged; refresh the gains about the accepted nominal
        if (linearize() && backward_with_retries()) gains_stale = false;
        out.degraded = gains_stale;
        publish();
        return finish(out);
      }
      break;
    }
    if (!accepted) {
      if (!inflate()) {
        out.degraded = true;
        publish();
        return finish(out);
      }
    }
  }

  // iteration cap: best-so-far with gains refreshed about the final nominal
  if (gains_stale && linearize() && backward_with_retries()) gains_stale = false;
  out.degraded = true;
  publish();
  return finish(out);
}

}  // namespace hmpc
