#include "dynot/objective.hpp"

#include "dynot/errors.hpp"
#include "dynot/tape.hpp"
#include "dynot/velocity_field.hpp"

#include <exception>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace dynot {

Eigen::VectorXd simpson_weights(int steps) {
  if (steps < 1) throw DomainError("simpson_weights: need N >= 1");
  const int points = 2 * steps + 1;
  const double unit = 1.0 / (6.0 * steps);
  Eigen::VectorXd c(points);
  for (int p = 0; p < points; ++p) c[p] = (p % 2 == 1) ? 4.0 * unit : 2.0 * unit;
  c[0] = unit;
  c[points - 1] = unit;
  return c;
}

double simpson_integrate(const Eigen::VectorXd& nodes, const Eigen::VectorXd& midpoints) {
  const Eigen::Index n = midpoints.size();
  if (n < 1 || nodes.size() != n + 1) {
    throw DomainError("simpson_integrate: need N+1 node values and N midpoint values");
  }
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) acc += nodes[k] + 4.0 * midpoints[k] + nodes[k + 1];
  return acc / (6.0 * static_cast<double>(n));
}

namespace {

Eigen::VectorXd weights_from(const Eigen::VectorXd& log_rho0,
                             const std::optional<Eigen::VectorXd>& log_mu0) {
  const auto r = static_cast<double>(log_rho0.size());
  if (!log_mu0) return Eigen::VectorXd::Constant(log_rho0.size(), 1.0 / r);
  return ((log_rho0 - *log_mu0).array().exp() / r).matrix();
}

std::shared_ptr<const ad::RowFunction> log_density_fn(const Density& density) {
  auto fn = std::make_shared<ad::RowFunction>();
  fn->name = "log_target";
  fn->eval = [&density](const Eigen::Ref<const Eigen::RowVectorXd>& x,
                        Eigen::Ref<Eigen::RowVectorXd> grad) {
    const Eigen::VectorXd p = x.transpose();
    grad = density.grad_log_pdf(p).transpose();
    return density.log_pdf(p);
  };
  return fn;
}

std::shared_ptr<const ad::RowFunction> preference_fn(const PreferenceSpec& pref) {
  auto fn = std::make_shared<ad::RowFunction>();
  fn->name = "preference";
  fn->eval = [&pref](const Eigen::Ref<const Eigen::RowVectorXd>& x,
                     Eigen::Ref<Eigen::RowVectorXd> grad) {
    const Eigen::VectorXd p = x.transpose();
    grad = preference_gradient(pref, p).transpose();
    return preference(pref, p);
  };
  return fn;
}

bool uses_preference(const Problem& problem, const Hyperparameters& hyper) {
  return hyper.pref_weight > 0.0 && has_preference(problem.preference);
}

double regularizer_scale(const Problem& problem, const Hyperparameters& hyper, Eigen::Index s) {
  return hyper.reg_weight / (static_cast<double>(s) * problem.regularizer_box.density());
}

}  // namespace

Eigen::VectorXd particle_weights(const TrajectoryBatch& batch) {
  if (batch.points() == 0) return {};
  if (!batch.has_log_mu()) return weights_from(batch.log_rho[0], std::nullopt);
  return weights_from(batch.log_rho[0], batch.log_mu[0]);
}

double kinetic_term(const TrajectoryBatch& batch, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd c = simpson_weights(batch.steps);
  double acc = 0.0;
  for (int p = 0; p < batch.points(); ++p) {
    const auto k = static_cast<std::size_t>(p);
    acc += c[p] * weights.dot(batch.velocities[k].rowwise().squaredNorm());
  }
  return acc;
}

void require_support(const Density& target, const Eigen::MatrixXd& z, int first_particle) {
  const auto* box = std::get_if<UniformBoxSpec>(&target.spec());
  if (!box) return;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (!box->contains(z.row(i).transpose())) {
      throw DomainError("particle " + std::to_string(first_particle + i) +
                        " ends outside the support of the target density");
    }
  }
}

double kl_term(const TrajectoryBatch& batch, const Density& target, double kl_weight,
               const Eigen::VectorXd& weights) {
  if (kl_weight == 0.0) return 0.0;
  const auto last = static_cast<std::size_t>(batch.points() - 1);
  const Eigen::MatrixXd& z = batch.positions[last];
  require_support(target, z);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    acc += weights[i] * (batch.log_rho[last][i] - target.log_pdf(z.row(i).transpose()));
  }
  return kl_weight * acc;
}

double regularizer_term(const ParameterVector& params, const UniformBoxSpec& box,
                        const Eigen::MatrixXd& samples, double reg_weight, int steps) {
  if (reg_weight == 0.0 || samples.rows() == 0) return 0.0;
  const Eigen::VectorXd c = simpson_weights(steps);
  double acc = 0.0;
  for (int p = 0; p < c.size(); ++p) {
    acc += c[p] * jacobian_norm_sq_sum(params, samples, grid_time(p, steps));
  }
  return reg_weight * acc / (static_cast<double>(samples.rows()) * box.density());
}

double preference_term(const TrajectoryBatch& batch, const PreferenceSpec& pref,
                       double pref_weight, const Eigen::VectorXd& weights) {
  if (pref_weight == 0.0 || !has_preference(pref)) return 0.0;
  const Eigen::VectorXd c = simpson_weights(batch.steps);
  double acc = 0.0;
  for (int p = 0; p < batch.points(); ++p) {
    const Eigen::MatrixXd& z = batch.positions[static_cast<std::size_t>(p)];
    double sum = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      sum += weights[i] * preference(pref, z.row(i).transpose());
    }
    acc += c[p] * sum;
  }
  return pref_weight * acc;
}

SampleSet draw_samples(const Problem& problem, const Hyperparameters& hyper, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SampleSet s;
  const Density& source = problem.sampling ? *problem.sampling : problem.initial;
  s.x0 = source.sample(hyper.particles, rng);
  s.log_rho0.resize(hyper.particles);
  if (problem.sampling) s.log_mu0 = Eigen::VectorXd(hyper.particles);
  for (int i = 0; i < hyper.particles; ++i) {
    const Eigen::VectorXd x = s.x0.row(i).transpose();
    s.log_rho0[i] = problem.initial.log_pdf(x);
    if (problem.sampling) (*s.log_mu0)[i] = problem.sampling->log_pdf(x);
  }
  if (hyper.reg_weight > 0.0) s.reg = Density(problem.regularizer_box).sample(hyper.reg_samples, rng);
  return s;
}

LossBreakdown evaluate_loss(const ParameterVector& params, const Problem& problem,
                            const Hyperparameters& hyper, const SampleSet& samples) {
  const TrajectoryBatch batch =
      integrate_forward(params, samples.x0, samples.log_rho0, samples.log_mu0, hyper.steps);
  const Eigen::VectorXd w = weights_from(samples.log_rho0, samples.log_mu0);
  LossBreakdown out;
  out.kinetic = kinetic_term(batch, w);
  out.kl = kl_term(batch, problem.target, hyper.kl_weight, w);
  out.regularizer = regularizer_term(params, problem.regularizer_box, samples.reg,
                                     hyper.reg_weight, hyper.steps);
  out.preference = preference_term(batch, problem.preference, hyper.pref_weight, w);
  out.finalize();
  return out;
}

LossBreakdown total_loss(const ParameterVector& params, const Problem& problem,
                         const Hyperparameters& hyper, std::uint64_t seed) {
  return evaluate_loss(params, problem, hyper, draw_samples(problem, hyper, seed));
}

namespace {

struct ChunkResult {
  LossBreakdown loss;
  ParameterVector gradient;
};

ChunkResult particle_chunk(const ParameterVector& params, const Problem& problem,
                           const Hyperparameters& hyper, const SampleSet& samples,
                           const Eigen::VectorXd& weights, int begin, int count) {
  ad::Tape tape;
  TracedField field(tape, params);
  const int steps = hyper.steps;
  const int points = 2 * steps + 1;
  const double dt = 1.0 / (2.0 * steps);
  const Eigen::VectorXd c = simpson_weights(steps);
  const bool with_pref = uses_preference(problem, hyper);
  const auto pref_fn = with_pref ? preference_fn(problem.preference) : nullptr;

  ad::Var z = tape.constant(samples.x0.middleRows(begin, count));
  ad::Var log_rho = tape.constant(samples.log_rho0.segment(begin, count));
  const ad::Var w = tape.constant(weights.segment(begin, count));

  std::vector<ad::Var> kinetic_terms;
  std::vector<ad::Var> pref_terms;
  std::vector<double> pref_coeffs;
  for (const double ci : c) pref_coeffs.push_back(hyper.pref_weight * ci);

  TracedField::Output cur = field.evaluate(z, 0.0);
  for (int p = 0; p < points; ++p) {
    kinetic_terms.push_back(tape.sum(tape.mul(tape.square(cur.velocity), w)));
    if (with_pref) pref_terms.push_back(tape.sum(tape.mul(tape.row_function(z, pref_fn), w)));
    if (p + 1 == points) break;

    const double t = grid_time(p, steps);
    const double half = 0.5 * dt;
    const TracedField::Output k1 = cur;
    const TracedField::Output k2 =
        field.evaluate(tape.lincomb({z, k1.velocity}, {1.0, half}), t + half);
    const TracedField::Output k3 =
        field.evaluate(tape.lincomb({z, k2.velocity}, {1.0, half}), t + half);
    const double t_next = grid_time(p + 1, steps);
    const TracedField::Output k4 =
        field.evaluate(tape.lincomb({z, k3.velocity}, {1.0, dt}), t_next);
    const double a = dt / 6.0;
    const double b = dt / 3.0;
    z = tape.lincomb({z, k1.velocity, k2.velocity, k3.velocity, k4.velocity}, {1.0, a, b, b, a});
    log_rho = tape.lincomb({log_rho, k1.divergence, k2.divergence, k3.divergence, k4.divergence},
                           {1.0, -a, -b, -b, -a});
    cur = field.evaluate(z, t_next);
  }

  const ad::Var kinetic = tape.lincomb(kinetic_terms, std::span<const double>(c.data(), c.size()));
  std::vector<ad::Var> parts{kinetic};
  ChunkResult out;
  out.loss.kinetic = tape.scalar(kinetic);
  if (hyper.kl_weight != 0.0) {
    require_support(problem.target, tape.value(z), begin);
    const ad::Var log_target = tape.row_function(z, log_density_fn(problem.target));
    const ad::Var kl =
        tape.scale(tape.sum(tape.mul(tape.sub(log_rho, log_target), w)), hyper.kl_weight);
    out.loss.kl = tape.scalar(kl);
    parts.push_back(kl);
  }
  if (with_pref) {
    const ad::Var pref = tape.lincomb(pref_terms, pref_coeffs);
    out.loss.preference = tape.scalar(pref);
    parts.push_back(pref);
  }
  const std::vector<double> ones(parts.size(), 1.0);
  tape.backward(tape.lincomb(parts, ones));
  out.gradient = field.gather_gradient();
  return out;
}

ChunkResult regularizer_chunk(const ParameterVector& params, const Problem& problem,
                              const Hyperparameters& hyper, const Eigen::MatrixXd& y) {
  ad::Tape tape;
  TracedField field(tape, params);
  const Eigen::VectorXd c = simpson_weights(hyper.steps);
  const double scale = regularizer_scale(problem, hyper, y.rows());
  const ad::Var yv = tape.constant(y);
  std::vector<ad::Var> terms;
  std::vector<double> coeffs;
  for (int p = 0; p < c.size(); ++p) {
    terms.push_back(field.jacobian_norm_sq_sum(yv, grid_time(p, hyper.steps)));
    coeffs.push_back(scale * c[p]);
  }
  const ad::Var reg = tape.lincomb(terms, coeffs);
  tape.backward(reg);
  ChunkResult out;
  out.loss.regularizer = tape.scalar(reg);
  out.gradient = field.gather_gradient();
  return out;
}

}  // namespace

LossAndGradient backprop_gradient(const ParameterVector& params, const Problem& problem,
                                  const Hyperparameters& hyper, const SampleSet& samples) {
  hyper.validate();
  check_steps(hyper.steps, params.shape().intervals);
  const int r = static_cast<int>(samples.x0.rows());
  if (r < 1 || samples.x0.cols() != params.shape().dim) {
    throw DomainError("backprop_gradient: sample shape does not match the network");
  }
  const Eigen::VectorXd weights = weights_from(samples.log_rho0, samples.log_mu0);
  const int chunks = (r + hyper.chunk - 1) / hyper.chunk;
  const bool with_reg = hyper.reg_weight > 0.0 && samples.reg.rows() > 0;
  const int jobs = chunks + (with_reg ? 1 : 0);

  std::vector<ChunkResult> results(static_cast<std::size_t>(jobs));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  auto run = [&](int job) {
    const auto k = static_cast<std::size_t>(job);
    try {
      if (job < chunks) {
        const int begin = job * hyper.chunk;
        results[k] = particle_chunk(params, problem, hyper, samples, weights, begin,
                                    std::min(hyper.chunk, r - begin));
      } else {
        results[k] = regularizer_chunk(params, problem, hyper, samples.reg);
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  const int workers = std::min(hyper.workers, jobs);
  if (workers <= 1) {
    for (int job = 0; job < jobs; ++job) run(job);
  } else {
    std::vector<std::thread> pool;
    for (int wk = 0; wk < workers; ++wk) {
      pool.emplace_back([&, wk] {
        for (int job = wk; job < jobs; job += workers) run(job);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  LossAndGradient out{LossBreakdown{}, ParameterVector(params.shape())};
  for (const ChunkResult& res : results) {
    out.loss.kinetic += res.loss.kinetic;
    out.loss.kl += res.loss.kl;
    out.loss.regularizer += res.loss.regularizer;
    out.loss.preference += res.loss.preference;
    out.gradient.values() += res.gradient.values();
  }
  out.loss.finalize();
  return out;
}

}  // namespace dynot
