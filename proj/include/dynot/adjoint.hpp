#pragma once

#include "dynot/objective.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace dynot {

/// U(1) = lambda grad log rho_1(z1).
Eigen::VectorXd terminal_condition(const Eigen::VectorXd& z1, const Density& target,
                                   double kl_weight);

/// dU/dt = -J^T U + 2 J^T v - lambda grad(div v) + lambda_P grad Q, all at (z, t).
Eigen::VectorXd adjoint_rhs(const ParameterVector& params, const Eigen::VectorXd& z, double t,
                            const Eigen::VectorXd& U, double kl_weight,
                            const PreferenceSpec& pref = NoPreference{}, double pref_weight = 0.0);

/// Adjoint and recomputed positions at the 2N+1 stored points (index 0 is t=0).
struct AdjointBatch {
  int steps = 0;
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> U;  // r x d
  std::vector<Eigen::MatrixXd> z;  // r x d, recovered by integrating backwards
  double reversibility_defect = 0.0;  // max |z(0) - x0|
  std::optional<std::string> warning;
};

/// Backward RK4 sweep of the coupled (z, U) system from t=1 to t=0 starting
/// at the terminal positions `z1`. `x0` (the original samples) is only used
/// to measure the reversibility defect; a defect above 1e-6 attaches a
/// warning.
AdjointBatch solve_adjoint(const ParameterVector& params, const Eigen::MatrixXd& z1,
                           const Eigen::MatrixXd& x0, const Problem& problem,
                           const Hyperparameters& hyper);

/// (1/r) sum_i Simpson int [(2v - U_i)^T v_theta - lambda (div v)_theta] dt
///   + (alpha / (s P0)) sum_j Simpson int 2 <(grad v)_theta, grad v> dt.
ParameterVector assemble_adjoint_gradient(const ParameterVector& params,
                                          const AdjointBatch& adjoint,
                                          const Eigen::MatrixXd& reg_samples,
                                          const Problem& problem, const Hyperparameters& hyper);

/// Forward solve, backward sweep and on-the-fly gradient accumulation.
/// Only valid when particles are sampled from rho_0.
LossAndGradient adjoint_gradient(const ParameterVector& params, const Problem& problem,
                                 const Hyperparameters& hyper, const SampleSet& samples);

}  // namespace dynot
