#pragma once

#include "dynot/dynamics.hpp"
#include "dynot/params.hpp"
#include "dynot/problem.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace dynot {

struct LossBreakdown {
  double kinetic = 0.0;      // E
  double kl = 0.0;           // P
  double regularizer = 0.0;  // R
  double preference = 0.0;   // Q
  double total = 0.0;

  void finalize() { total = kinetic + kl + regularizer + preference; }
};

/// Weights of the 2N+1 stored points for composite Simpson on [0, 1].
Eigen::VectorXd simpson_weights(int steps);

/// (h/6) sum_n [f(t_n) + 4 f(t_n + h/2) + f(t_{n+1})], h = 1/N.
double simpson_integrate(const Eigen::VectorXd& nodes, const Eigen::VectorXd& midpoints);

/// Per-particle weights w_i. Constant in time because log rho - log mu is
/// transported unchanged along characteristics.
Eigen::VectorXd particle_weights(const TrajectoryBatch& batch);

double kinetic_term(const TrajectoryBatch& batch, const Eigen::VectorXd& weights);
double kl_term(const TrajectoryBatch& batch, const Density& target, double kl_weight,
               const Eigen::VectorXd& weights);
double regularizer_term(const ParameterVector& params, const UniformBoxSpec& box,
                        const Eigen::MatrixXd& samples, double reg_weight, int steps);
double preference_term(const TrajectoryBatch& batch, const PreferenceSpec& pref,
                       double pref_weight, const Eigen::VectorXd& weights);

/// Everything random in one loss evaluation.
struct SampleSet {
  Eigen::MatrixXd x0;                    // r x d particles
  Eigen::VectorXd log_rho0;              // log rho_0(x0)
  std::optional<Eigen::VectorXd> log_mu0;  // log mu_0(x0) under importance sampling
  Eigen::MatrixXd reg;                   // s x d regularizer samples (empty when alpha = 0)
};

SampleSet draw_samples(const Problem& problem, const Hyperparameters& hyper, std::uint64_t seed);

/// Loss with plain (untaped) arithmetic.
LossBreakdown evaluate_loss(const ParameterVector& params, const Problem& problem,
                            const Hyperparameters& hyper, const SampleSet& samples);

LossBreakdown total_loss(const ParameterVector& params, const Problem& problem,
                         const Hyperparameters& hyper, std::uint64_t seed);

struct LossAndGradient {
  LossBreakdown loss;
  ParameterVector gradient;
};

/// Exact gradient of the discretized loss by reverse-mode differentiation
/// through every RK4 stage. Particles are split into chunks of
/// `hyper.chunk`, each on its own tape; chunk gradients are summed in chunk
/// order whatever the number of workers.
LossAndGradient backprop_gradient(const ParameterVector& params, const Problem& problem,
                                  const Hyperparameters& hyper, const SampleSet& samples);

/// Throws DomainError naming the first particle outside the support of a
/// uniform target.
void require_support(const Density& target, const Eigen::MatrixXd& z, int first_particle = 0);

}  // namespace dynot
