#pragma once
// Cross-entropy method over a box: diagonal-Gaussian sampling, elite
// selection with survivor retention (previous elites stay in the selection
// pool, which makes the per-iteration elite-mean objective provably
// non-increasing on deterministic objectives), and exponential smoothing of
// the sampling mean and std. Fully deterministic given the seed.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace hmpc {

struct CemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CemConfig {
  int population = 64;
  double elite_frac = 0.1;
  int iterations = 30;
  double smoothing = 0.7;  // new_stat = 0.7 * elite_stat + 0.3 * old_stat
  Eigen::VectorXd init_std;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  int n_elite() const {
    return std::max(2, static_cast<int>(std::lround(population * elite_frac)));
  }

  void validate() const {
    if (!(elite_frac > 0.0) || elite_frac > 1.0)
      throw std::invalid_argument("cem: elite fraction must be in (0, 1]");
    if (population < 2.0 / elite_frac)
      throw std::invalid_argument("cem: population must be >= 2/elite_frac");
    if (iterations < 1) throw std::invalid_argument("cem: iterations must be >= 1");
    if (!(smoothing > 0.0) || smoothing > 1.0)
      throw std::invalid_argument("cem: smoothing must be in (0, 1]");
    if (lo.size() != hi.size() || lo.size() != init_std.size() || lo.size() == 0)
      throw std::invalid_argument("cem: box/std dimension mismatch");
    if ((lo.array() > hi.array()).any())
      throw std::invalid_argument("cem: lo > hi");
    if ((init_std.array() < 0.0).any())
      throw std::invalid_argument("cem: negative initial std");
  }
};

struct CemResult {
  Eigen::VectorXd best;  // elite mean of the final iteration, clamped to box
  Eigen::VectorXd final_std;
  std::vector<double> elite_mean_trace;  // mean elite objective per iteration
};

CemResult cem_optimize(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const CemConfig& config, const Eigen::VectorXd& init_mean,
    std::uint64_t seed);

}  // namespace hmpc
