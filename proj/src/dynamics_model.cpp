#include "hmpc/dynamics_model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

namespace hmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

AnalyticalParams AnalyticalParams::Nominal(const KinematicTree<double>& tree,
                                           double mu) {
  AnalyticalParams p;
  p.mass_scale = VectorXd::Ones(tree.n_links());
  p.com_offset = Eigen::Matrix3Xd::Zero(3, tree.n_links());
  p.viscous = VectorXd::Zero(tree.n_joints());
  p.mu = mu;
  return p;
}

VectorXd AnalyticalParams::pack() const {
  const int nl = n_links();
  const int nj = n_joints();
  VectorXd v(packed_dim());
  v.head(nl) = mass_scale;
  v.segment(nl, 3 * nl) =
      Eigen::Map<const VectorXd>(com_offset.data(), 3 * nl);
  v.segment(4 * nl, nj) = viscous;
  v(4 * nl + nj) = mu;
  return v;
}

AnalyticalParams AnalyticalParams::Unpack(const VectorXd& v, int n_links,
                                          int n_joints) {
  if (v.size() != 4 * n_links + n_joints + 1)
    throw std::invalid_argument("params: packed size mismatch");
  AnalyticalParams p;
  p.mass_scale = v.head(n_links);
  p.com_offset =
      Eigen::Map<const Eigen::Matrix3Xd>(v.segment(n_links, 3 * n_links).data(),
                                         3, n_links);
  p.viscous = v.segment(4 * n_links, n_joints);
  p.mu = v(4 * n_links + n_joints);
  return p;
}

void AnalyticalParams::validate() const {
  if (com_offset.cols() != mass_scale.size())
    throw std::invalid_argument("params: com/mass size mismatch");
  if ((mass_scale.array() <= 0.0).any())
    throw std::invalid_argument("params: mass scales must be positive");
  if ((viscous.array() < 0.0).any())
    throw std::invalid_argument("params: viscous friction must be >= 0");
  if (!(mu >= 0.0) || mu > 2.0)
    throw std::invalid_argument("params: mu must lie in [0, 2]");
}

ParamBox default_param_box(const KinematicTree<double>& tree) {
  const int nl = tree.n_links();
  const int nj = tree.n_joints();
  ParamBox box;
  box.lo.resize(4 * nl + nj + 1);
  box.hi.resize(4 * nl + nj + 1);
  box.lo.head(nl).setConstant(0.7);
  box.hi.head(nl).setConstant(1.3);
  box.lo.segment(nl, 3 * nl).setConstant(-0.03);
  box.hi.segment(nl, 3 * nl).setConstant(0.03);
  box.lo.segment(4 * nl, nj).setConstant(0.0);
  box.hi.segment(4 * nl, nj).setConstant(0.5);
  box.lo(4 * nl + nj) = 0.0;
  box.hi(4 * nl + nj) = 2.0;
  return box;
}

KinematicTree<double> effective_tree(const KinematicTree<double>& nominal,
                                     const AnalyticalParams& params) {
  if (params.n_links() != nominal.n_links() ||
      params.n_joints() != nominal.n_joints())
    throw std::invalid_argument("params: dimensioned for a different tree");
  KinematicTree<double> tree = nominal;
  for (int l = 0; l < tree.n_links(); ++l) {
    tree.links[l].mass *= params.mass_scale(l);
    tree.links[l].com += params.com_offset.col(l);
  }
  return tree;
}

AugmentedModel AugmentedModel::Create(const KinematicTree<double>& tree,
                                      const Terrain<double>& terrain,
                                      const Eigen::VectorXd& gains,
                                      const Eigen::VectorXd& torque_limit) {
  const int nj = tree.n_joints();
  if (gains.size() != nj || torque_limit.size() != nj)
    throw std::invalid_argument("model: gain/limit size mismatch");
  AugmentedModel m;
  m.tree = tree;
  m.params = AnalyticalParams::Nominal(tree, terrain.mu);
  m.terrain = terrain;
  m.gains = gains;
  m.torque_limit = torque_limit;
  const GeneralizedState<double> probe = GeneralizedState<double>::Zero(nj);
  m.residual = Mlp(probe.flat_dim() + nj, probe.tangent_dim());
  m.in_norm = Normalizer::Identity(probe.flat_dim() + nj);
  m.out_norm = Normalizer::Identity(probe.tangent_dim());
  return m;
}

namespace {

// candidate parameters baked into concrete stepping inputs
struct Realization {
  KinematicTree<double> tree;
  Terrain<double> terrain;
  VectorXd viscous;
};

Realization realize(const AugmentedModel& model, const AnalyticalParams& p) {
  Realization r;
  r.tree = effective_tree(model.tree, p);
  r.terrain = model.terrain;
  r.terrain.mu = p.mu;
  r.viscous = p.viscous;
  return r;
}

// clamped PD toward the joint target -> forward dynamics -> contact
// resolution -> semi-implicit integration, all at the decision rate
GeneralizedState<double> step_core(const AugmentedModel& model,
                                   const Realization& r,
                                   const GeneralizedState<double>& x,
                                   const VectorXd& u) {
  const int nj = x.n_j();
  if (u.size() != nj)
    throw std::invalid_argument("model step: control size mismatch");
  VectorXd tau = VectorXd::Zero(6 + nj);
  tau.tail(nj) = ((model.gains.array() * (u - x.joint_pos).array())
                      .min(model.torque_limit.array())
                      .max(-model.torque_limit.array()) -
                  r.viscous.array() * x.joint_vel.array())
                     .matrix();

  // implicit joint damping: folding dt*c into the mass-matrix diagonal keeps
  // the damping channel unconditionally stable at the coarse decision step
  Eigen::MatrixXd M = mass_matrix(r.tree, x);
  for (int j = 0; j < nj; ++j) M(6 + j, 6 + j) += model.dt * r.viscous(j);
  const VectorXd C = bias_forces(r.tree, x, model.gravity);
  const auto contacts =
      detect_contacts(r.tree, x, r.terrain, model.contact_threshold);
  const auto sol =
      solve_contact_forces(M, C, tau, x.velocity(), contacts, model.dt);
  return integrate_state(apply_velocity(x, sol.v_post),
                         VectorXd::Zero(6 + nj), model.dt);
}

VectorXd residual_input(const GeneralizedState<double>& x, const VectorXd& u) {
  VectorXd in(x.flat_dim() + u.size());
  in << x.flat(), u;
  return in;
}

GeneralizedState<double> augment(const AugmentedModel& model,
                                 const GeneralizedState<double>& analytical,
                                 const GeneralizedState<double>& x,
                                 const VectorXd& u) {
  const VectorXd out =
      mlp_forward(model.residual, model.in_norm.normalize(residual_input(x, u)));
  return state_boxplus(analytical, model.out_norm.denormalize(out));
}

}  // namespace

GeneralizedState<double> step_analytical(const AugmentedModel& model,
                                         const AnalyticalParams& params,
                                         const GeneralizedState<double>& x,
                                         const VectorXd& u) {
  return step_core(model, realize(model, params), x, u);
}

GeneralizedState<double> step_analytical(const AugmentedModel& model,
                                         const GeneralizedState<double>& x,
                                         const VectorXd& u) {
  return step_analytical(model, model.params, x, u);
}

VectorXd residual_output(const AugmentedModel& model,
                         const GeneralizedState<double>& x,
                         const VectorXd& u) {
  return mlp_forward(model.residual,
                     model.in_norm.normalize(residual_input(x, u)));
}

GeneralizedState<double> step_augmented(const AugmentedModel& model,
                                        const GeneralizedState<double>& x,
                                        const VectorXd& u) {
  return augment(model, step_analytical(model, x, u), x, u);
}

VectorXd noise_gain(const AugmentedModel& model,
                    const GeneralizedState<double>& x, const VectorXd& u,
                    const VectorXd& u_wo) {
  return state_boxminus(step_augmented(model, x, u),
                        step_augmented(model, x, u_wo)) /
         std::sqrt(model.dt);
}

GeneralizedState<double> step_stochastic(const AugmentedModel& model,
                                         const GeneralizedState<double>& x,
                                         const VectorXd& u,
                                         const VectorXd& u_wo,
                                         const VectorXd& omega) {
  const GeneralizedState<double> base = step_augmented(model, x, u);
  if (omega.size() != state_boxminus(base, base).size())
    throw std::invalid_argument("stochastic step: noise size mismatch");
  const VectorXd delta =
      model.sigma * noise_gain(model, x, u, u_wo).cwiseProduct(omega);
  return state_boxplus(base, delta);
}

double schedule_sigma(double loss, double loss_ref) {
  if (!(loss >= 0.0) || !(loss_ref >= 0.0))
    throw std::invalid_argument("sigma schedule: losses must be >= 0");
  const double ratio =
      loss_ref > 0.0 ? loss / loss_ref : (loss > 0.0 ? 1.0 : 0.0);
  return std::clamp(AugmentedModel::kSigmaMax * std::min(1.0, ratio),
                    AugmentedModel::kSigmaMin, AugmentedModel::kSigmaMax);
}

void Episode::validate() const {
  if (states.size() != controls.size() + 1)
    throw std::invalid_argument(
        "episode: need exactly one more state than controls");
  if (controls.empty())
    throw std::invalid_argument("episode: no transitions");
  const int nj = states[0].n_j();
  for (const auto& s : states)
    if (s.n_j() != nj) throw std::invalid_argument("episode: mixed state sizes");
  for (const auto& u : controls)
    if (u.size() != nj)
      throw std::invalid_argument("episode: control size mismatch");
}

int MotionDataset::n_transitions() const {
  int n = 0;
  for (const auto& ep : episodes) n += ep.n_transitions();
  return n;
}

void MotionDataset::validate() const {
  if (episodes.empty()) throw std::invalid_argument("dataset: no episodes");
  for (const auto& ep : episodes) ep.validate();
}

int count_windows(const MotionDataset& data, int horizon) {
  if (horizon < 1)
    throw std::invalid_argument("windows: horizon must be >= 1");
  int n = 0;
  for (const auto& ep : data.episodes)
    n += std::max(0, ep.n_transitions() - horizon + 1);
  return n;
}

namespace {

// sum over windows of the per-window accumulated weighted squared error;
// stepper takes (state, control) and advances one decision step
template <typename Stepper>
double window_loss_sum(const Episode& ep, const VectorXd& weights, int horizon,
                       int* n_windows, const Stepper& step) {
  double total = 0.0;
  for (int k = 0; k + horizon <= ep.n_transitions(); ++k) {
    GeneralizedState<double> pred = ep.states[k];
    double acc = 0.0;
    for (int t = 1; t <= horizon; ++t) {
      pred = step(pred, ep.controls[k + t - 1]);
      const VectorXd d = state_boxminus(pred, ep.states[k + t]);
      acc += d.dot(weights.cwiseProduct(d));
    }
    total += acc;
    ++*n_windows;
  }
  return total;
}

}  // namespace

double n_step_loss(const AugmentedModel& model, const Episode& episode,
                   const VectorXd& weights, int horizon) {
  episode.validate();
  if (horizon < 1)
    throw std::invalid_argument("n-step loss: horizon must be >= 1");
  if (episode.n_transitions() < horizon)
    throw std::invalid_argument("n-step loss: episode shorter than horizon");
  if (weights.size() != state_boxminus(episode.states[0], episode.states[0]).size())
    throw std::invalid_argument("n-step loss: weight size mismatch");
  const Realization r = realize(model, model.params);
  int n = 0;
  const double total = window_loss_sum(
      episode, weights, horizon, &n,
      [&](const GeneralizedState<double>& x, const VectorXd& u) {
        return augment(model, step_core(model, r, x, u), x, u);
      });
  return total / n;
}

double analytical_window_loss(const AugmentedModel& model,
                              const AnalyticalParams& params,
                              const MotionDataset& data, int horizon,
                              const VectorXd& weights) {
  data.validate();
  const int n_win = count_windows(data, horizon);
  if (n_win < 1)
    throw std::invalid_argument("window loss: no usable windows");
  const Realization r = realize(model, params);
  double total = 0.0;
  int n = 0;
  for (const auto& ep : data.episodes)
    total += window_loss_sum(
        ep, weights, horizon, &n,
        [&](const GeneralizedState<double>& x, const VectorXd& u) {
          return step_core(model, r, x, u);
        });
  return total / n;
}

AnalyticalParams identify_params(const AugmentedModel& model,
                                 const MotionDataset& data, int horizon,
                                 const VectorXd& weights, const ParamBox& box,
                                 const CemConfig& cem_in, std::uint64_t seed) {
  if (horizon < 1)
    throw std::invalid_argument("identify: horizon must be >= 1");
  data.validate();
  if (count_windows(data, horizon) < 1)
    throw std::invalid_argument("identify: no usable windows");
  const int nl = model.tree.n_links();
  const int nj = model.tree.n_joints();
  if (box.lo.size() != model.params.packed_dim() ||
      box.hi.size() != model.params.packed_dim())
    throw std::invalid_argument("identify: box size mismatch");

  const auto objective = [&](const VectorXd& theta) -> double {
    const AnalyticalParams p = AnalyticalParams::Unpack(theta, nl, nj);
    try {
      p.validate();
      return analytical_window_loss(model, p, data, horizon, weights);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const double loss_init =
      analytical_window_loss(model, model.params, data, horizon, weights);

  CemConfig cem = cem_in;
  cem.lo = box.lo;
  cem.hi = box.hi;
  cem.init_std = (box.hi - box.lo) / 6.0;

  VectorXd best;
  try {
    best = cem_optimize(objective, cem, model.params.pack(), seed).best;
  } catch (const CemError& e) {
    std::cerr << "identify: search failed (" << e.what()
              << "); keeping initial params\n";
    return model.params;
  }
  if (objective(best) < loss_init)
    return AnalyticalParams::Unpack(best, nl, nj);
  return model.params;
}

TrainReport train_residual(AugmentedModel& model, const MotionDataset& data,
                           const TrainConfig& config, std::uint64_t seed) {
  data.validate();
  if (config.epochs < 1 || config.batch < 1 || !(config.lr > 0.0) ||
      config.l2 < 0.0 || !(config.val_frac > 0.0) || config.val_frac >= 1.0)
    throw std::invalid_argument("train: bad configuration");
  const int n = data.n_transitions();
  const GeneralizedState<double>& probe = data.episodes[0].states[0];
  const int in_dim = probe.flat_dim() + probe.n_j();
  const int out_dim = probe.tangent_dim();

  // one-step analytical prediction errors in tangent coordinates
  MatrixXd X(n, in_dim);
  MatrixXd Y_raw(n, out_dim);
  const Realization r = realize(model, model.params);
  int row = 0;
  for (const auto& ep : data.episodes)
    for (int k = 0; k < ep.n_transitions(); ++k, ++row) {
      const auto pred = step_core(model, r, ep.states[k], ep.controls[k]);
      X.row(row) = residual_input(ep.states[k], ep.controls[k]);
      Y_raw.row(row) = state_boxminus(ep.states[k + 1], pred);
    }

  const Normalizer in_norm = Normalizer::Fit(X);
  const Normalizer out_norm = Normalizer::FitScaleOnly(Y_raw);
  MatrixXd Xn(n, in_dim), Yn(n, out_dim);
  for (int i = 0; i < n; ++i) {
    Xn.row(i) = in_norm.normalize(X.row(i));
    Yn.row(i) = out_norm.normalize(Y_raw.row(i));
  }

  Rng rng(derive_seed(seed, "residual-train", 0));

  // deterministic 90/10 split; a lone sample validates on itself
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  const int n_val = n >= 2 ? std::max(1, int(std::lround(config.val_frac * n)))
                           : 0;
  std::vector<int> val_idx(perm.begin(), perm.begin() + n_val);
  std::vector<int> train_idx(perm.begin() + n_val, perm.end());
  if (val_idx.empty()) val_idx = train_idx;

  const auto gather = [&](const std::vector<int>& idx, const MatrixXd& A) {
    MatrixXd out(idx.size(), A.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.row(i) = A.row(idx[i]);
    return out;
  };
  const MatrixXd Xv = gather(val_idx, Xn), Yv = gather(val_idx, Yn);

  Mlp net(in_dim, out_dim);
  net.init(rng);

  TrainReport rep;
  rep.initial_loss = mlp_loss(net, Xv, Yv, 0.0);
  rep.best_val_loss = rep.initial_loss;
  VectorXd best_theta = pack_params(net);

  AdamConfig adam;
  adam.lr = config.lr;
  AdamState opt(net.n_params());
  VectorXd theta = best_theta;
  const int n_train = static_cast<int>(train_idx.size());
  const int batch = std::min(config.batch, n_train);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int i = n_train - 1; i > 0; --i)
      std::swap(train_idx[i], train_idx[rng.uniform_int(0, i)]);
    bool aborted = false;
    for (int start = 0; start < n_train; start += batch) {
      const int len = std::min(batch, n_train - start);
      std::vector<int> chunk(train_idx.begin() + start,
                             train_idx.begin() + start + len);
      const MatrixXd Xb = gather(chunk, Xn), Yb = gather(chunk, Yn);
      const VectorXd g = mlp_gradient(net, Xb, Yb, config.l2);
      if (!g.allFinite()) {
        aborted = true;
        break;
      }
      adam_step(opt, theta, g, adam);
      unpack_params(net, theta);
    }
    const double val = mlp_loss(net, Xv, Yv, 0.0);
    if (aborted || !std::isfinite(val)) break;
    if (val < rep.best_val_loss) {
      rep.best_val_loss = val;
      rep.best_epoch = epoch;
      best_theta = theta;
    }
  }

  unpack_params(net, best_theta);
  rep.final_train_loss = mlp_loss(net, gather(train_idx, Xn),
                                  gather(train_idx, Yn), 0.0);
  model.residual = net;
  model.in_norm = in_norm;
  model.out_norm = out_norm;
  return rep;
}

}  // namespace hmpc
