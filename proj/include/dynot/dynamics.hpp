#pragma once

#include "dynot/densities.hpp"
#include "dynot/params.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <vector>

namespace dynot {

/// One particle on a characteristic: position, log of the transported
/// density and, under importance sampling, log of the sampling density.
struct ParticleState {
  Eigen::VectorXd z;
  double log_rho = 0.0;
  std::optional<double> log_mu;
};

ParticleState operator+(const ParticleState& a, const ParticleState& b);
ParticleState operator*(double s, const ParticleState& a);
bool all_finite(const ParticleState& s);

/// d/dt (z, log rho, log mu) = (v(z,t), -div v(z,t), -div v(z,t)).
ParticleState characteristic_rhs(const ParameterVector& params, const ParticleState& state,
                                 double t);

/// Classical four-stage explicit Runge-Kutta step of size h (h may be
/// negative). `State` needs `+`, scalar `*` and an `all_finite` overload.
template <class State, class Rhs>
State rk4_step(const Rhs& rhs, const State& y, double t, double h) {
  const double half = 0.5 * h;
  const State k1 = rhs(y, t);
  const State k2 = rhs(y + half * k1, t + half);
  const State k3 = rhs(y + half * k2, t + half);
  const State k4 = rhs(y + h * k3, t + h);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// All particles at every Simpson node and midpoint: 2N+1 time points with
/// spacing 1/(2N).
struct TrajectoryBatch {
  int steps = 0;  // N
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> positions;   // r x d per time point
  std::vector<Eigen::VectorXd> log_rho;     // r per time point
  std::vector<Eigen::VectorXd> log_mu;      // empty unless importance sampling
  std::vector<Eigen::MatrixXd> velocities;  // v(z, t) at each stored state

  int particles() const { return positions.empty() ? 0 : static_cast<int>(positions[0].rows()); }
  int dim() const { return positions.empty() ? 0 : static_cast<int>(positions[0].cols()); }
  int points() const { return static_cast<int>(times.size()); }
  bool has_log_mu() const { return !log_mu.empty(); }
};

/// Time of stored point p on the half-step grid.
inline double grid_time(int point, int steps) {
  return static_cast<double>(point) / static_cast<double>(2 * steps);
}

/// Integrates the characteristics with 2N RK4 steps of size 1/(2N).
/// `steps` must be a multiple of the number of basis intervals M.
TrajectoryBatch integrate_forward(const ParameterVector& params, const Eigen::MatrixXd& x0,
                                  const Eigen::VectorXd& log_rho0,
                                  const std::optional<Eigen::VectorXd>& log_mu0, int steps);

/// Convenience overload: log rho_0 (and log mu_0) evaluated from densities.
TrajectoryBatch integrate_forward(const ParameterVector& params, const Eigen::MatrixXd& x0,
                                  const Density& initial, const Density* sampling, int steps);

/// w_i(t) = exp(log rho_i(t) - log mu_i(t)) / r, or 1/r without importance
/// sampling.
Eigen::VectorXd importance_weights(const TrajectoryBatch& batch, int point);

/// CSV with columns particle_id, t, z_1..z_d, log_rho for the first
/// `max_particles` particles (all when negative).
void write_trajectory_csv(std::ostream& out, const TrajectoryBatch& batch, int max_particles = -1);

void check_steps(int steps, int intervals);

}  // namespace dynot
