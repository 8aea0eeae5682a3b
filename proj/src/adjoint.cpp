#include "dynot/adjoint.hpp"

#include "dynot/errors.hpp"
#include "dynot/velocity_field.hpp"

#include <functional>
#include <sstream>

namespace dynot {

Eigen::VectorXd terminal_condition(const Eigen::VectorXd& z1, const Density& target,
                                   double kl_weight) {
  if (kl_weight == 0.0) return Eigen::VectorXd::Zero(z1.size());
  return kl_weight * target.grad_log_pdf(z1);
}

Eigen::VectorXd adjoint_rhs(const ParameterVector& params, const Eigen::VectorXd& z, double t,
                            const Eigen::VectorXd& U, double kl_weight,
                            const PreferenceSpec& pref, double pref_weight) {
  const PointDerivatives p = point_derivatives(params, z, t);
  Eigen::VectorXd out =
      p.jacobian.transpose() * (2.0 * p.velocity - U) - kl_weight * p.grad_divergence;
  if (pref_weight != 0.0 && has_preference(pref)) out += pref_weight * preference_gradient(pref, z);
  return out;
}

namespace {

struct CoupledState {
  Eigen::VectorXd z;
  Eigen::VectorXd U;
};

CoupledState operator+(const CoupledState& a, const CoupledState& b) { return {a.z + b.z, a.U + b.U}; }
CoupledState operator*(double s, const CoupledState& a) { return {s * a.z, s * a.U}; }

void require_rho0_sampling(const Problem& problem) {
  if (problem.importance_sampling()) {
    throw ConfigError("the adjoint gradient requires particles sampled from rho_0 (mu_0 = rho_0)");
  }
}

using PointVisitor = std::function<void(int particle, int point, double t, const Eigen::VectorXd& z,
                                        const Eigen::VectorXd& U)>;

// Sweeps one particle at a time from t=1 down to t=0, calling `visit` at
// every stored point, t=1 first. Returns z(0) per particle.
Eigen::MatrixXd backward_sweep(const ParameterVector& params, const Eigen::MatrixXd& z1,
                               const Problem& problem, const Hyperparameters& hyper,
                               const PointVisitor& visit) {
  const int steps = hyper.steps;
  check_steps(steps, params.shape().intervals);
  const int last = 2 * steps;
  const double dt = 1.0 / (2.0 * steps);
  const double pref_weight = has_preference(problem.preference) ? hyper.pref_weight : 0.0;
  auto rhs = [&](const CoupledState& s, double t) {
    const PointDerivatives p = point_derivatives(params, s.z, t);
    CoupledState d{p.velocity,
                   p.jacobian.transpose() * (2.0 * p.velocity - s.U) -
                       hyper.kl_weight * p.grad_divergence};
    if (pref_weight != 0.0) d.U += pref_weight * preference_gradient(problem.preference, s.z);
    return d;
  };

  Eigen::MatrixXd z0(z1.rows(), z1.cols());
  for (Eigen::Index i = 0; i < z1.rows(); ++i) {
    const Eigen::VectorXd zi = z1.row(i).transpose();
    CoupledState s{zi, terminal_condition(zi, problem.target, hyper.kl_weight)};
    visit(static_cast<int>(i), last, 1.0, s.z, s.U);
    for (int p = last; p > 0; --p) {
      const double t = grid_time(p, steps);
      s = rk4_step(rhs, s, t, -dt);
      const double t_prev = grid_time(p - 1, steps);
      if (!s.z.allFinite() || !s.U.allFinite()) {
        std::ostringstream msg;
        msg << "non-finite adjoint state for particle " << i << " at t=" << t_prev;
        throw NumericError(msg.str());
      }
      visit(static_cast<int>(i), p - 1, t_prev, s.z, s.U);
    }
    z0.row(i) = s.z.transpose();
  }
  return z0;
}

void accumulate_particle_point(const ParameterVector& params, const Hyperparameters& hyper,
                               double coeff, double t, const Eigen::VectorXd& z,
                               const Eigen::VectorXd& U, Eigen::VectorXd& out) {
  const Eigen::VectorXd v = eval_velocity(params, z, t);
  accumulate_contractions(params, z, t, 2.0 * v - U, coeff, -hyper.kl_weight * coeff,
                          Eigen::MatrixXd(), 0.0, out);
}

void accumulate_regularizer(const ParameterVector& params, const Eigen::MatrixXd& y,
                            const Problem& problem, const Hyperparameters& hyper,
                            Eigen::VectorXd& out) {
  if (hyper.reg_weight == 0.0 || y.rows() == 0) return;
  const Eigen::VectorXd c = simpson_weights(hyper.steps);
  const double scale =
      hyper.reg_weight / (static_cast<double>(y.rows()) * problem.regularizer_box.density());
  const Eigen::VectorXd none = Eigen::VectorXd::Zero(params.shape().dim);
  for (int p = 0; p < c.size(); ++p) {
    const double t = grid_time(p, hyper.steps);
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      const Eigen::VectorXd yj = y.row(j).transpose();
      accumulate_contractions(params, yj, t, none, 0.0, 0.0, jacobian_x(params, yj, t),
                              2.0 * scale * c[p], out);
    }
  }
}

void attach_defect(AdjointBatch& batch, const Eigen::MatrixXd& z0, const Eigen::MatrixXd& x0) {
  if (x0.rows() != z0.rows() || x0.cols() != z0.cols()) return;
  batch.reversibility_defect = (z0 - x0).cwiseAbs().maxCoeff();
  if (batch.reversibility_defect > 1e-6) {
    std::ostringstream msg;
    msg << "backward recomputation deviates from the original samples by "
        << batch.reversibility_defect;
    batch.warning = msg.str();
  }
}

}  // namespace

AdjointBatch solve_adjoint(const ParameterVector& params, const Eigen::MatrixXd& z1,
                           const Eigen::MatrixXd& x0, const Problem& problem,
                           const Hyperparameters& hyper) {
  require_rho0_sampling(problem);
  const int points = 2 * hyper.steps + 1;
  AdjointBatch batch;
  batch.steps = hyper.steps;
  for (int p = 0; p < points; ++p) {
    batch.times.push_back(grid_time(p, hyper.steps));
    batch.U.emplace_back(z1.rows(), z1.cols());
    batch.z.emplace_back(z1.rows(), z1.cols());
  }
  const Eigen::MatrixXd z0 = backward_sweep(
      params, z1, problem, hyper,
      [&](int i, int p, double, const Eigen::VectorXd& z, const Eigen::VectorXd& U) {
        batch.z[static_cast<std::size_t>(p)].row(i) = z.transpose();
        batch.U[static_cast<std::size_t>(p)].row(i) = U.transpose();
      });
  attach_defect(batch, z0, x0);
  return batch;
}

ParameterVector assemble_adjoint_gradient(const ParameterVector& params,
                                          const AdjointBatch& adjoint,
                                          const Eigen::MatrixXd& reg_samples,
                                          const Problem& problem, const Hyperparameters& hyper) {
  const Eigen::VectorXd c = simpson_weights(adjoint.steps);
  ParameterVector grad(params.shape());
  const int r = adjoint.z.empty() ? 0 : static_cast<int>(adjoint.z[0].rows());
  for (int i = 0; i < r; ++i) {
    for (int p = 0; p < c.size(); ++p) {
      const auto k = static_cast<std::size_t>(p);
      accumulate_particle_point(params, hyper, c[p] / r, adjoint.times[k],
                                adjoint.z[k].row(i).transpose(), adjoint.U[k].row(i).transpose(),
                                grad.values());
    }
  }
  accumulate_regularizer(params, reg_samples, problem, hyper, grad.values());
  return grad;
}

LossAndGradient adjoint_gradient(const ParameterVector& params, const Problem& problem,
                                 const Hyperparameters& hyper, const SampleSet& samples) {
  require_rho0_sampling(problem);
  hyper.validate();
  LossAndGradient out{evaluate_loss(params, problem, hyper, samples), ParameterVector(params.shape())};
  const TrajectoryBatch forward =
      integrate_forward(params, samples.x0, samples.log_rho0, std::nullopt, hyper.steps);
  const Eigen::MatrixXd& z1 = forward.positions.back();
  const Eigen::VectorXd c = simpson_weights(hyper.steps);
  const double r = static_cast<double>(z1.rows());
  backward_sweep(params, z1, problem, hyper,
                 [&](int, int p, double t, const Eigen::VectorXd& z, const Eigen::VectorXd& U) {
                   accumulate_particle_point(params, hyper, c[p] / r, t, z, U,
                                             out.gradient.values());
                 });
  accumulate_regularizer(params, samples.reg, problem, hyper, out.gradient.values());
  return out;
}

}  // namespace dynot
