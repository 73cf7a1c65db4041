#pragma once
// Ground-truth plant: a high-rate substep simulator running the TRUE
// (perturbed) parameters with proportional joint control, torque clamping,
// viscous joint friction, and contact. The controller side never reads the
// true parameters; it sees the plant only through (optionally delayed)
// rollout states. Substeps are semi-implicit: PD torque -> forward dynamics
// -> contact impulse -> position update.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hmpc/contact.hpp"
#include "hmpc/rigid_body.hpp"

namespace hmpc {

struct PlantDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
struct PlantConfig {
  using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

  KinematicTree<S> true_tree;
  Terrain<S> terrain = Terrain<S>::Flat(S(0.6));
  VecX viscous;       // per joint, N*m*s/rad
  VecX torque_limit;  // per joint, N*m
  VecX gains;         // diagonal proportional gain, N*m/rad
  S substep_dt = S(1e-3);
  S contact_threshold = S(1e-3);  // detection band above the surface, m
  int observation_delay = 1;      // in low-rate controller ticks
  Eigen::Matrix<S, 3, 1> gravity{S(0), S(0), S(-9.81)};
  std::uint64_t seed = 0;

  void validate() const {
    const int nj = true_tree.n_joints();
    if (!(substep_dt > S(0)) || substep_dt > S(1e-3) + S(1e-12))
      throw std::invalid_argument("plant: substep must be positive and <= 1 ms");
    if (gains.size() != nj || viscous.size() != nj || torque_limit.size() != nj)
      throw std::invalid_argument("plant: per-joint vector length != joint count");
    if (nj > 0 && gains.minCoeff() < S(0))
      throw std::invalid_argument("plant: gains must be >= 0");
    if (nj > 0 && viscous.minCoeff() < S(0))
      throw std::invalid_argument("plant: viscous friction must be >= 0");
    if (nj > 0 && torque_limit.minCoeff() <= S(0))
      throw std::invalid_argument("plant: torque limits must be > 0");
    if (observation_delay < 0)
      throw std::invalid_argument("plant: observation delay must be >= 0");
    if (contact_threshold < S(0))
      throw std::invalid_argument("plant: contact threshold must be >= 0");
  }
};

// tau = clamp(K (q2_ref - q2), +/- limit), elementwise
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> pd_torque(
    const PlantConfig<S>& config,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& q2_target,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& q2) {
  if (q2_target.size() != config.gains.size() || q2.size() != config.gains.size())
    throw std::invalid_argument("pd_torque: joint vector length mismatch");
  return (config.gains.array() * (q2_target - q2).array())
      .min(config.torque_limit.array())
      .max(-config.torque_limit.array())
      .matrix();
}

// one substep: clamped PD torque plus viscous friction, true-parameter
// forward dynamics, contact impulse, then the position update
template <typename S>
GeneralizedState<S> plant_substep(
    const PlantConfig<S>& config, const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& q2_target) {
  using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  const int nj = state.n_j();
  const S dt = config.substep_dt;

  VecX tau = VecX::Zero(6 + nj);
  tau.tail(nj) = pd_torque(config, q2_target, state.joint_pos) -
                 (config.viscous.array() * state.joint_vel.array()).matrix();

  const auto M = mass_matrix(config.true_tree, state);
  const VecX C = bias_forces(config.true_tree, state, config.gravity);
  const auto contacts =
      detect_contacts(config.true_tree, state, config.terrain, config.contact_threshold);
  const auto sol =
      solve_contact_forces(M, C, tau, state.velocity(), contacts, dt);

  // velocities already advanced by the contact solve; move positions
  return integrate_state(apply_velocity(state, sol.v_post),
                         VecX::Zero(6 + nj), dt);
}

// rolls the plant for horizon_dt (an integer multiple of the substep);
// any velocity component exceeding 1e3 aborts as divergence
template <typename S>
GeneralizedState<S> step_plant(
    const PlantConfig<S>& config, const GeneralizedState<S>& state,
    const std::type_identity_t<Eigen::Matrix<S, Eigen::Dynamic, 1>>& q2_target,
    S horizon_dt) {
  const S ratio = horizon_dt / config.substep_dt;
  const int n = static_cast<int>(std::lround(static_cast<double>(ratio)));
  if (n < 1 || std::abs(ratio - S(n)) > S(1e-9) * std::max(S(1), ratio))
    throw std::invalid_argument(
        "step_plant: horizon not an integer multiple of the substep");

  GeneralizedState<S> x = state;
  for (int i = 0; i < n; ++i) {
    x = plant_substep(config, x, q2_target);
    const S vmax = x.velocity().cwiseAbs().maxCoeff();
    if (!(vmax <= S(1e3)))
      throw PlantDivergence("plant diverged: |velocity| = " +
                            std::to_string(static_cast<double>(vmax)) +
                            " at substep " + std::to_string(i + 1));
  }
  return x;
}

// fixed-rate state history; observe(d) returns the state d pushes ago,
// clamped to the oldest entry (startup rule: not enough history yet)
template <typename S>
class ObservationBuffer {
 public:
  void push(const GeneralizedState<S>& x) { hist_.push_back(x); }
  void clear() { hist_.clear(); }
  int size() const { return static_cast<int>(hist_.size()); }

  const GeneralizedState<S>& observe(int delay_ticks) const {
    if (hist_.empty()) throw std::logic_error("observe: no history");
    if (delay_ticks < 0) throw std::invalid_argument("observe: negative delay");
    const int idx = std::max(0, size() - 1 - delay_ticks);
    return hist_[static_cast<size_t>(idx)];
  }

 private:
  std::vector<GeneralizedState<S>> hist_;
};

// default deliberate plant/model gap: heavier links, unmodeled viscous
// friction, slicker ground than the controller's model assumes
template <typename S>
struct MismatchSpec {
  S mass_scale = S(1.15);
  Eigen::Matrix<S, 3, 1> com_offset = Eigen::Matrix<S, 3, 1>::Zero();
  S extra_viscous = S(0.02);  // N*m*s/rad on every joint
  S true_mu = S(0.6);         // vs the nominal 0.8
};

// returns a perturbed copy; the nominal tree is never modified
template <typename S>
KinematicTree<S> apply_mismatch(const KinematicTree<S>& nominal,
                                const MismatchSpec<S>& spec) {
  KinematicTree<S> tree = nominal;
  for (auto& link : tree.links) {
    link.mass *= spec.mass_scale;
    link.com += spec.com_offset;
  }
  return tree;
}

}  // namespace hmpc
