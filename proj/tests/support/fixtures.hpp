#pragma once

#include "dynot/objective.hpp"
#include "dynot/params.hpp"
#include "dynot/problem.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace dynot::testing {

inline Problem gaussian_pair(int d, double shift, double var0 = 1.0, double var1 = 1.0) {
  Problem p;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(d);
  m1[0] = shift;
  p.initial = Density(GaussianSpec::isotropic(Eigen::VectorXd::Zero(d), var0));
  p.target = Density(GaussianSpec::isotropic(m1, var1));
  p.regularizer_box = default_regularizer_box(p.initial, p.target);
  return p;
}

/// Random parameters with O(1) entries including biases.
inline ParameterVector random_params(const NetworkShape& shape, std::uint64_t seed,
                                     double scale = 0.5) {
  ParameterVector params = initialize_parameters(shape, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Eigen::Index k = 0; k < params.values().size(); ++k) params.values()[k] += u(rng);
  return params;
}

/// Central finite difference of the plain loss in every coordinate.
inline Eigen::VectorXd fd_gradient(const ParameterVector& params, const Problem& problem,
                                   const Hyperparameters& hyper, const SampleSet& samples,
                                   double h) {
  Eigen::VectorXd g(params.values().size());
  ParameterVector probe = params;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    const double x = params.values()[k];
    probe.values()[k] = x + h;
    const double up = evaluate_loss(probe, problem, hyper, samples).total;
    probe.values()[k] = x - h;
    const double down = evaluate_loss(probe, problem, hyper, samples).total;
    probe.values()[k] = x;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace dynot::testing
