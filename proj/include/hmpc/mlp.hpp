#pragma once
// Fixed-architecture residual network: input -> 64 -> 64 -> output, softplus
// hidden activations, identity output. Gradients are hand-derived reverse
// accumulation for loss = mean-squared error (over batch and output dims)
// plus l2 * ||theta||^2 over ALL parameters including biases. Training capped
// to this one architecture keeps the checkpoint format and the gradient code
// trivially auditable.

#include <vector>

#include <Eigen/Dense>

#include "hmpc/random.hpp"

namespace hmpc {

struct Mlp {
  std::vector<Eigen::MatrixXd> W;  // [64 x in], [64 x 64], [out x 64]
  std::vector<Eigen::VectorXd> b;

  Mlp() = default;
  Mlp(int input_dim, int output_dim, int hidden = 64);

  int input_dim() const { return static_cast<int>(W[0].cols()); }
  int output_dim() const { return static_cast<int>(W[2].rows()); }
  int n_params() const;

  // symmetric uniform +/- 1/sqrt(fan_in) on hidden layers; the output layer
  // is zeroed so a freshly initialized net is exactly the zero map
  void init(Rng& rng);
};

// numerically safe softplus and its derivative (logistic sigmoid)
double softplus(double z);
double softplus_prime(double z);

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x);

// rows of X are inputs, rows of Y are targets
double mlp_loss(const Mlp& net, const Eigen::MatrixXd& X,
                const Eigen::MatrixXd& Y, double l2);

// gradient of mlp_loss in pack_params order
Eigen::VectorXd mlp_gradient(const Mlp& net, const Eigen::MatrixXd& X,
                             const Eigen::MatrixXd& Y, double l2);

// flat parameter vector: layers in order, each W column-major then its b
Eigen::VectorXd pack_params(const Mlp& net);
void unpack_params(Mlp& net, const Eigen::VectorXd& theta);

// per-dimension affine whitening fitted from data rows; dimensions with
// std < 1e-8 get std := 1 so constants pass through unscaled
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  static Normalizer Fit(const Eigen::MatrixXd& data);
  // zero-preserving variant (mean forced to 0): used for residual outputs so
  // the zero-initialized net maps to an exactly-zero residual
  static Normalizer FitScaleOnly(const Eigen::MatrixXd& data);
  static Normalizer Identity(int dim);

  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const {
    return ((x - mean).array() / std.array()).matrix();
  }
  Eigen::VectorXd denormalize(const Eigen::VectorXd& z) const {
    return (z.array() * std.array()).matrix() + mean;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamState(int n)
      : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

// standard bias-corrected Adam update, in place
void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad, const AdamConfig& config);

}  // namespace hmpc
