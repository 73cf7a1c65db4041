#pragma once
// Controller-side dynamics stack: a parametric analytical model (scaled
// masses, shifted coms, joint friction, friction coefficient) stepped at the
// decision rate, an additive learned residual in tangent coordinates, and a
// control-sensitivity noise model for stochastic rollouts. The analytical
// parameters are identified by derivative-free search over multi-step
// open-loop prediction error; the residual is trained on one-step errors.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hmpc/cem.hpp"
#include "hmpc/contact.hpp"
#include "hmpc/mlp.hpp"
#include "hmpc/rigid_body.hpp"

namespace hmpc {

// physically-interpretable correction applied on top of a nominal tree.
// pack order: mass scales (per link), com offsets (xyz per link), joint
// viscous friction (per joint), friction coefficient.
struct AnalyticalParams {
  Eigen::VectorXd mass_scale;   // dimensionless, per link
  Eigen::Matrix3Xd com_offset;  // m, link frame, per link
  Eigen::VectorXd viscous;      // N*m*s/rad, per joint
  double mu = 0.8;

  static AnalyticalParams Nominal(const KinematicTree<double>& tree, double mu);

  int n_links() const { return static_cast<int>(mass_scale.size()); }
  int n_joints() const { return static_cast<int>(viscous.size()); }
  int packed_dim() const { return 4 * n_links() + n_joints() + 1; }

  Eigen::VectorXd pack() const;
  static AnalyticalParams Unpack(const Eigen::VectorXd& v, int n_links,
                                 int n_joints);

  // throws std::invalid_argument on non-physical values
  void validate() const;
};

// fixed identification box, aligned with AnalyticalParams::pack()
struct ParamBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

// mass scales within +/-30% of nominal, com offsets within +/-3 cm, joint
// friction in [0, 0.5], friction coefficient in [0, 2]
ParamBox default_param_box(const KinematicTree<double>& tree);

// returns a copy of the nominal tree with the parametric corrections applied
// (mass scaled, com shifted; rotational inertia kept nominal)
KinematicTree<double> effective_tree(const KinematicTree<double>& nominal,
                                     const AnalyticalParams& params);

// analytical stage + residual network + noise scale, stepped at dt
struct AugmentedModel {
  KinematicTree<double> tree;  // nominal; corrections live in params
  AnalyticalParams params;
  Terrain<double> terrain;
  Eigen::VectorXd gains;         // proportional joint gains, N*m/rad
  Eigen::VectorXd torque_limit;  // N*m
  double dt = 0.060;             // decision-rate step, s
  double contact_threshold = 1e-3;
  Eigen::Vector3d gravity{0, 0, -9.81};

  Mlp residual;        // input [state flat; control], output tangent delta
  Normalizer in_norm;  // fitted on inputs
  Normalizer out_norm; // zero-preserving, fitted on raw tangent targets

  double sigma = 0.7;  // noise scale in [sigma_min, sigma_max]
  static constexpr double kSigmaMin = 0.1;
  static constexpr double kSigmaMax = 0.7;

  // nominal params, zero residual, identity normalizers
  static AugmentedModel Create(const KinematicTree<double>& tree,
                               const Terrain<double>& terrain,
                               const Eigen::VectorXd& gains,
                               const Eigen::VectorXd& torque_limit);
};

// one decision-rate step of the analytical stage: clamped PD torque toward
// the joint-angle target, forward dynamics, contact resolution, semi-implicit
// integration
GeneralizedState<double> step_analytical(const AugmentedModel& model,
                                         const AnalyticalParams& params,
                                         const GeneralizedState<double>& x,
                                         const Eigen::VectorXd& u);
GeneralizedState<double> step_analytical(const AugmentedModel& model,
                                         const GeneralizedState<double>& x,
                                         const Eigen::VectorXd& u);

// raw residual-network output in normalized units for (x, u)
Eigen::VectorXd residual_output(const AugmentedModel& model,
                                const GeneralizedState<double>& x,
                                const Eigen::VectorXd& u);

// analytical step composed with the denormalized residual via boxplus;
// bitwise equal to the analytical step while the residual is the zero map
GeneralizedState<double> step_augmented(const AugmentedModel& model,
                                        const GeneralizedState<double>& x,
                                        const Eigen::VectorXd& u);

// control-sensitivity noise direction: the tangent difference between the
// augmented step under u and under the fallback control u_wo, scaled by
// 1/sqrt(dt) so injected noise variance grows linearly with the step
Eigen::VectorXd noise_gain(const AugmentedModel& model,
                           const GeneralizedState<double>& x,
                           const Eigen::VectorXd& u,
                           const Eigen::VectorXd& u_wo);

// augmented step perturbed by sigma * noise_gain elementwise-modulated by
// omega (one standard-normal draw per tangent dimension)
GeneralizedState<double> step_stochastic(const AugmentedModel& model,
                                         const GeneralizedState<double>& x,
                                         const Eigen::VectorXd& u,
                                         const Eigen::VectorXd& u_wo,
                                         const Eigen::VectorXd& omega);

// noise scale proportional to the loss ratio, clamped to [0.1, 0.7]:
// 0.7 * min(1, loss / loss_ref)
double schedule_sigma(double loss, double loss_ref);

// one rollout: states[k+1] observed after applying controls[k]
struct Episode {
  std::vector<GeneralizedState<double>> states;
  std::vector<Eigen::VectorXd> controls;

  int n_transitions() const { return static_cast<int>(controls.size()); }
  void validate() const;
};

struct MotionDataset {
  std::vector<Episode> episodes;

  int n_transitions() const;
  void validate() const;
};

// number of length-N windows; windows never span episode boundaries
int count_windows(const MotionDataset& data, int horizon);

// mean over windows of the weighted squared open-loop prediction error,
// accumulated over every step of the window (orientation error via boxminus)
double n_step_loss(const AugmentedModel& model, const Episode& episode,
                   const Eigen::VectorXd& weights, int horizon);

// same metric over a whole dataset using only the analytical stage with the
// given candidate params; this is the identification objective
double analytical_window_loss(const AugmentedModel& model,
                              const AnalyticalParams& params,
                              const MotionDataset& data, int horizon,
                              const Eigen::VectorXd& weights);

// derivative-free search for analytical params inside the box; guaranteed
// not to return params worse than model.params on the same windows (keeps
// the initial values and warns when the search fails outright)
AnalyticalParams identify_params(const AugmentedModel& model,
                                 const MotionDataset& data, int horizon,
                                 const Eigen::VectorXd& weights,
                                 const ParamBox& box, const CemConfig& cem,
                                 std::uint64_t seed);

struct TrainConfig {
  int epochs = 200;
  int batch = 128;  // full batch when the training set is smaller
  double lr = 1e-4;
  double l2 = 1e-4;
  double val_frac = 0.1;  // 90/10 train/validation split
};

struct TrainReport {
  double initial_loss = 0.0;   // validation MSE of the zero residual
  double best_val_loss = 0.0;  // validation MSE at the kept checkpoint
  double final_train_loss = 0.0;
  int best_epoch = -1;  // -1 when the zero net was never beaten
};

// fits normalizers and a fresh residual on one-step analytical prediction
// errors; keeps the best-validation checkpoint. updates model in place.
TrainReport train_residual(AugmentedModel& model, const MotionDataset& data,
                           const TrainConfig& config, std::uint64_t seed);

}  // namespace hmpc
