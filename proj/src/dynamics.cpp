#include "dynot/dynamics.hpp"

#include "dynot/errors.hpp"
#include "dynot/velocity_field.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace dynot {

ParticleState operator+(const ParticleState& a, const ParticleState& b) {
  ParticleState s{a.z + b.z, a.log_rho + b.log_rho, std::nullopt};
  if (a.log_mu && b.log_mu) s.log_mu = *a.log_mu + *b.log_mu;
  return s;
}

ParticleState operator*(double s, const ParticleState& a) {
  ParticleState out{s * a.z, s * a.log_rho, std::nullopt};
  if (a.log_mu) out.log_mu = s * *a.log_mu;
  return out;
}

bool all_finite(const ParticleState& s) {
  return s.z.allFinite() && std::isfinite(s.log_rho) && (!s.log_mu || std::isfinite(*s.log_mu));
}

ParticleState characteristic_rhs(const ParameterVector& params, const ParticleState& state,
                                 double t) {
  const PointDerivatives p = point_derivatives(params, state.z, t);
  ParticleState out{p.velocity, -p.divergence, std::nullopt};
  if (state.log_mu) out.log_mu = -p.divergence;
  return out;
}

void check_steps(int steps, int intervals) {
  if (steps < 1 || steps % intervals != 0) {
    throw ConfigError("number of time steps N=" + std::to_string(steps) +
                      " must be a positive multiple of M=" + std::to_string(intervals));
  }
}

namespace {

struct BatchState {
  Eigen::MatrixXd z;
  Eigen::VectorXd log_rho;
  Eigen::VectorXd log_mu;  // size 0 when absent
};

BatchState operator+(const BatchState& a, const BatchState& b) {
  return {a.z + b.z, a.log_rho + b.log_rho, a.log_mu + b.log_mu};
}

BatchState operator*(double s, const BatchState& a) {
  return {s * a.z, s * a.log_rho, s * a.log_mu};
}

void require_finite(const BatchState& s, double t) {
  if (s.z.allFinite() && s.log_rho.allFinite() && s.log_mu.allFinite()) return;
  for (Eigen::Index i = 0; i < s.z.rows(); ++i) {
    const bool ok = s.z.row(i).allFinite() && std::isfinite(s.log_rho[i]) &&
                    (s.log_mu.size() == 0 || std::isfinite(s.log_mu[i]));
    if (!ok) {
      std::ostringstream msg;
      msg << "non-finite characteristic state for particle " << i << " at t=" << t;
      throw NumericError(msg.str());
    }
  }
}

}  // namespace

TrajectoryBatch integrate_forward(const ParameterVector& params, const Eigen::MatrixXd& x0,
                                  const Eigen::VectorXd& log_rho0,
                                  const std::optional<Eigen::VectorXd>& log_mu0, int steps) {
  check_steps(steps, params.shape().intervals);
  if (x0.cols() != params.shape().dim || log_rho0.size() != x0.rows() ||
      (log_mu0 && log_mu0->size() != x0.rows())) {
    throw DomainError("integrate_forward: sample shapes do not match the network");
  }
  const int points = 2 * steps + 1;
  const double dt = 1.0 / (2.0 * steps);

  TrajectoryBatch batch;
  batch.steps = steps;
  batch.times.reserve(static_cast<std::size_t>(points));
  batch.positions.reserve(static_cast<std::size_t>(points));
  batch.log_rho.reserve(static_cast<std::size_t>(points));
  batch.velocities.reserve(static_cast<std::size_t>(points));

  BatchState state{x0, log_rho0, log_mu0 ? *log_mu0 : Eigen::VectorXd()};
  const bool with_mu = log_mu0.has_value();

  // The first stage of each step is the field at the stored state; keep it
  // as the cached velocity.
  BatchField at_state = evaluate_batch(params, state.z, 0.0);
  for (int p = 0; p < points; ++p) {
    const double t = grid_time(p, steps);
    batch.times.push_back(t);
    batch.positions.push_back(state.z);
    batch.log_rho.push_back(state.log_rho);
    if (with_mu) batch.log_mu.push_back(state.log_mu);
    batch.velocities.push_back(at_state.velocity);
    if (p + 1 == points) break;

    auto rhs = [&](const BatchState& y, double s) {
      const BatchField f = evaluate_batch(params, y.z, s);
      return BatchState{f.velocity, -f.divergence,
                        with_mu ? Eigen::VectorXd(-f.divergence) : Eigen::VectorXd()};
    };
    const BatchState k1{at_state.velocity, -at_state.divergence,
                        with_mu ? Eigen::VectorXd(-at_state.divergence) : Eigen::VectorXd()};
    const double half = 0.5 * dt;
    const BatchState k2 = rhs(state + half * k1, t + half);
    const BatchState k3 = rhs(state + half * k2, t + half);
    const double t_next = grid_time(p + 1, steps);
    const BatchState k4 = rhs(state + dt * k3, t_next);
    state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(state, t_next);
    at_state = evaluate_batch(params, state.z, t_next);
  }
  return batch;
}

TrajectoryBatch integrate_forward(const ParameterVector& params, const Eigen::MatrixXd& x0,
                                  const Density& initial, const Density* sampling, int steps) {
  Eigen::VectorXd log_rho0(x0.rows());
  std::optional<Eigen::VectorXd> log_mu0;
  if (sampling) log_mu0 = Eigen::VectorXd(x0.rows());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    const Eigen::VectorXd x = x0.row(i).transpose();
    log_rho0[i] = initial.log_pdf(x);
    if (sampling) (*log_mu0)[i] = sampling->log_pdf(x);
  }
  return integrate_forward(params, x0, log_rho0, log_mu0, steps);
}

Eigen::VectorXd importance_weights(const TrajectoryBatch& batch, int point) {
  const int r = batch.particles();
  if (!batch.has_log_mu()) return Eigen::VectorXd::Constant(r, 1.0 / r);
  const auto k = static_cast<std::size_t>(point);
  return ((batch.log_rho[k] - batch.log_mu[k]).array().exp() / r).matrix();
}

void write_trajectory_csv(std::ostream& out, const TrajectoryBatch& batch, int max_particles) {
  const int r = max_particles < 0 ? batch.particles() : std::min(max_particles, batch.particles());
  out << "particle_id,t";
  for (int k = 1; k <= batch.dim(); ++k) out << ",z_" << k;
  out << ",log_rho\n";
  out << std::setprecision(10);
  for (int i = 0; i < r; ++i) {
    for (int p = 0; p < batch.points(); ++p) {
      const auto k = static_cast<std::size_t>(p);
      out << i << ',' << batch.times[k];
      for (int c = 0; c < batch.dim(); ++c) out << ',' << batch.positions[k](i, c);
      out << ',' << batch.log_rho[k][i] << '\n';
    }
  }
}

}  // namespace dynot
