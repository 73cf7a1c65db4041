#pragma once
// Decision-rate whole-body MPC facade: adapts the augmented dynamics model
// to the trajectory optimizer and provides the delayed-state prediction used
// to anchor each solve at the estimated current state.

#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hmpc/dynamics_model.hpp"
#include "hmpc/ilqg.hpp"

namespace hmpc {

// optimizer view of the augmented model. The per-step fallback controls (what
// the lower layers would command without the optimizer's contribution) define
// the control-sensitivity noise direction; missing entries fall back to the
// last one, an empty sequence to zero.
struct AugmentedSystem {
  using State = GeneralizedState<double>;

  const AugmentedModel* model = nullptr;
  std::vector<Eigen::VectorXd> u_fallback;

  int tangent_dim() const { return 12 + 2 * model->tree.n_joints(); }
  int control_dim() const { return model->tree.n_joints(); }
  double sigma() const { return model->sigma; }

  State step(const State& x, const Eigen::VectorXd& u) const {
    return step_augmented(*model, x, u);
  }
  Eigen::VectorXd boxminus(const State& a, const State& b) const {
    return state_boxminus(a, b);
  }
  State boxplus(const State& x, const Eigen::VectorXd& d) const {
    return state_boxplus(x, d);
  }
  Eigen::VectorXd noise_gain(int t, const State& x, const Eigen::VectorXd& u) const {
    if (u_fallback.empty())
      return hmpc::noise_gain(*model, x, u, Eigen::VectorXd::Zero(u.size()));
    const size_t tt = std::min<size_t>(std::max(t, 0), u_fallback.size() - 1);
    return hmpc::noise_gain(*model, x, u, u_fallback[tt]);
  }
};

// one-step-ahead estimate bridging the measurement/actuation latency: the
// state the plant will be in when the next command lands, propagated from
// the delayed observation through the model under the command in flight
inline GeneralizedState<double> predict_current_state(
    const AugmentedModel& model, const GeneralizedState<double>& delayed,
    const Eigen::VectorXd& command_in_flight) {
  return step_augmented(model, delayed, command_in_flight);
}

}  // namespace hmpc
