#include "hmpc/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace hmpc {

Mlp::Mlp(int input_dim, int output_dim, int hidden) {
  if (input_dim < 1 || output_dim < 1 || hidden < 1)
    throw std::invalid_argument("mlp: dimensions must be positive");
  W.resize(3);
  b.resize(3);
  W[0] = Eigen::MatrixXd::Zero(hidden, input_dim);
  W[1] = Eigen::MatrixXd::Zero(hidden, hidden);
  W[2] = Eigen::MatrixXd::Zero(output_dim, hidden);
  for (int l = 0; l < 3; ++l) b[l] = Eigen::VectorXd::Zero(W[l].rows());
}

int Mlp::n_params() const {
  int n = 0;
  for (int l = 0; l < 3; ++l)
    n += static_cast<int>(W[l].size() + b[l].size());
  return n;
}

void Mlp::init(Rng& rng) {
  for (int l = 0; l < 2; ++l) {
    const double s = 1.0 / std::sqrt(static_cast<double>(W[l].cols()));
    // column-major order so the stream of draws is layout-stable
    for (int c = 0; c < W[l].cols(); ++c)
      for (int r = 0; r < W[l].rows(); ++r) W[l](r, c) = rng.uniform(-s, s);
    for (int r = 0; r < b[l].size(); ++r) b[l](r) = rng.uniform(-s, s);
  }
  W[2].setZero();
  b[2].setZero();
}

double softplus(double z) {
  // max(z, 0) + log1p(exp(-|z|)) never overflows
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double softplus_prime(double z) {
  // logistic sigmoid, evaluated on the non-positive branch
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

struct ForwardTrace {
  Eigen::VectorXd z1, h1, z2, h2, y;
};

ForwardTrace forward_trace(const Mlp& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dim())
    throw std::invalid_argument("mlp_forward: input dimension mismatch");
  ForwardTrace t;
  t.z1 = net.W[0] * x + net.b[0];
  t.h1 = t.z1.unaryExpr([](double z) { return softplus(z); });
  t.z2 = net.W[1] * t.h1 + net.b[1];
  t.h2 = t.z2.unaryExpr([](double z) { return softplus(z); });
  t.y = net.W[2] * t.h2 + net.b[2];
  return t;
}

}  // namespace

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  return forward_trace(net, x).y;
}

double mlp_loss(const Mlp& net, const Eigen::MatrixXd& X,
                const Eigen::MatrixXd& Y, double l2) {
  if (X.rows() != Y.rows() || X.rows() == 0)
    throw std::invalid_argument("mlp_loss: empty batch or row mismatch");
  double se = 0.0;
  for (int r = 0; r < X.rows(); ++r)
    se += (mlp_forward(net, X.row(r).transpose()) - Y.row(r).transpose())
              .squaredNorm();
  const double n = static_cast<double>(X.rows() * Y.cols());
  return se / n + l2 * pack_params(net).squaredNorm();
}

Eigen::VectorXd mlp_gradient(const Mlp& net, const Eigen::MatrixXd& X,
                             const Eigen::MatrixXd& Y, double l2) {
  if (X.rows() != Y.rows() || X.rows() == 0)
    throw std::invalid_argument("mlp_gradient: empty batch or row mismatch");
  Mlp g(net.input_dim(), net.output_dim(),
        static_cast<int>(net.W[0].rows()));  // zero-shaped accumulator

  const double n = static_cast<double>(X.rows() * Y.cols());
  for (int r = 0; r < X.rows(); ++r) {
    const Eigen::VectorXd x = X.row(r).transpose();
    const ForwardTrace t = forward_trace(net, x);

    const Eigen::VectorXd d3 = 2.0 / n * (t.y - Y.row(r).transpose());
    g.W[2] += d3 * t.h2.transpose();
    g.b[2] += d3;
    const Eigen::VectorXd d2 =
        (net.W[2].transpose() * d3).cwiseProduct(
            t.z2.unaryExpr([](double z) { return softplus_prime(z); }));
    g.W[1] += d2 * t.h1.transpose();
    g.b[1] += d2;
    const Eigen::VectorXd d1 =
        (net.W[1].transpose() * d2).cwiseProduct(
            t.z1.unaryExpr([](double z) { return softplus_prime(z); }));
    g.W[0] += d1 * x.transpose();
    g.b[0] += d1;
  }
  return pack_params(g) + 2.0 * l2 * pack_params(net);
}

Eigen::VectorXd pack_params(const Mlp& net) {
  Eigen::VectorXd theta(net.n_params());
  int at = 0;
  for (int l = 0; l < 3; ++l) {
    const int nw = static_cast<int>(net.W[l].size());
    theta.segment(at, nw) = Eigen::Map<const Eigen::VectorXd>(
        net.W[l].data(), nw);
    at += nw;
    theta.segment(at, net.b[l].size()) = net.b[l];
    at += static_cast<int>(net.b[l].size());
  }
  return theta;
}

void unpack_params(Mlp& net, const Eigen::VectorXd& theta) {
  if (theta.size() != net.n_params())
    throw std::invalid_argument("unpack_params: length mismatch");
  int at = 0;
  for (int l = 0; l < 3; ++l) {
    const int nw = static_cast<int>(net.W[l].size());
    Eigen::Map<Eigen::VectorXd>(net.W[l].data(), nw) = theta.segment(at, nw);
    at += nw;
    net.b[l] = theta.segment(at, net.b[l].size());
    at += static_cast<int>(net.b[l].size());
  }
}

Normalizer Normalizer::Fit(const Eigen::MatrixXd& data) {
  if (data.rows() == 0) throw std::invalid_argument("normalizer: empty data");
  Normalizer nz;
  nz.mean = data.colwise().mean();
  const Eigen::MatrixXd centered = data.rowwise() - nz.mean.transpose();
  nz.std = (centered.array().square().colwise().mean()).sqrt();
  for (int i = 0; i < nz.std.size(); ++i)
    if (nz.std(i) < 1e-8) nz.std(i) = 1.0;
  return nz;
}

Normalizer Normalizer::FitScaleOnly(const Eigen::MatrixXd& data) {
  if (data.rows() == 0) throw std::invalid_argument("normalizer: empty data");
  Normalizer nz;
  nz.mean = Eigen::VectorXd::Zero(data.cols());
  nz.std = data.array().square().colwise().mean().sqrt();
  for (int i = 0; i < nz.std.size(); ++i)
    if (nz.std(i) < 1e-8) nz.std(i) = 1.0;
  return nz;
}

Normalizer Normalizer::Identity(int dim) {
  Normalizer nz;
  nz.mean = Eigen::VectorXd::Zero(dim);
  nz.std = Eigen::VectorXd::Ones(dim);
  return nz;
}

void adam_step(AdamState& state, Eigen::VectorXd& params,
               const Eigen::VectorXd& grad, const AdamConfig& config) {
  if (params.size() != state.m.size() || grad.size() != state.m.size())
    throw std::invalid_argument("adam_step: size mismatch");
  state.t += 1;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad;
  state.v = config.beta2 * state.v +
            (1.0 - config.beta2) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  params -= (config.lr * (state.m / bc1).array() /
             ((state.v / bc2).array().sqrt() + config.eps))
                .matrix();
}

}  // namespace hmpc
