#include "hmpc/cem.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hmpc/random.hpp"

namespace hmpc {

CemResult cem_optimize(
    const std::function<double(const Eigen::VectorXd&)>& objective,
    const CemConfig& config, const Eigen::VectorXd& init_mean,
    std::uint64_t seed) {
  config.validate();
  const int dim = static_cast<int>(init_mean.size());
  if (dim != config.lo.size())
    throw std::invalid_argument("cem: init_mean dimension mismatch");

  Rng rng(seed);
  Eigen::VectorXd mean =
      init_mean.cwiseMax(config.lo).cwiseMin(config.hi);
  Eigen::VectorXd std_dev = config.init_std;
  const int n_elite = config.n_elite();

  struct Scored {
    Eigen::VectorXd x;
    double f;
  };
  std::vector<Scored> survivors;  // previous elites, kept in the pool

  CemResult result;
  Eigen::VectorXd elite_mean = mean;
  for (int iter = 0; iter < config.iterations; ++iter) {
    std::vector<Scored> pool = survivors;
    int n_finite_fresh = 0;
    for (int s = 0; s < config.population; ++s) {
      Eigen::VectorXd x(dim);
      for (int j = 0; j < dim; ++j) x(j) = mean(j) + std_dev(j) * rng.normal();
      x = x.cwiseMax(config.lo).cwiseMin(config.hi);
      const double f = objective(x);
      if (std::isfinite(f)) ++n_finite_fresh;
      pool.push_back({std::move(x), f});
    }
    if (n_finite_fresh == 0)
      throw CemError("cem: all " + std::to_string(config.population) +
                     " samples non-finite at iteration " +
                     std::to_string(iter + 1));

    // non-finite values rank last; stable order keeps ties deterministic
    std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) {
      const bool fa = std::isfinite(a.f), fb = std::isfinite(b.f);
      if (fa != fb) return fa;
      return a.f < b.f;
    });
    const int n_e = std::min(n_elite, static_cast<int>(pool.size()));

    elite_mean = Eigen::VectorXd::Zero(dim);
    double obj_sum = 0.0;
    for (int e = 0; e < n_e; ++e) {
      elite_mean += pool[e].x;
      obj_sum += pool[e].f;
    }
    elite_mean /= n_e;
    Eigen::VectorXd elite_var = Eigen::VectorXd::Zero(dim);
    for (int e = 0; e < n_e; ++e)
      elite_var += (pool[e].x - elite_mean).array().square().matrix();
    const Eigen::VectorXd elite_std = (elite_var / n_e).array().sqrt();

    mean = config.smoothing * elite_mean + (1.0 - config.smoothing) * mean;
    std_dev = config.smoothing * elite_std + (1.0 - config.smoothing) * std_dev;
    result.elite_mean_trace.push_back(obj_sum / n_e);

    survivors.assign(pool.begin(), pool.begin() + n_e);
  }

  result.best = elite_mean.cwiseMax(config.lo).cwiseMin(config.hi);
  result.final_std = std_dev;
  return result;
}

}  // namespace hmpc
