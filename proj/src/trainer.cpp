#include "dynot/trainer.hpp"

#include "dynot/adjoint.hpp"
#include "dynot/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>

namespace dynot {

std::string_view to_string(GradientPath path) {
  return path == GradientPath::Backprop ? "backprop" : "adjoint";
}

GradientPath gradient_path_from_string(std::string_view name) {
  if (name == "backprop") return GradientPath::Backprop;
  if (name == "adjoint") return GradientPath::Adjoint;
  throw ConfigError("unknown gradient path '" + std::string(name) +
                    "' (expected backprop or adjoint)");
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (!(decay > 0.0) || decay_period < 1) throw ConfigError("train: bad learning-rate decay");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be > 0");
  if (eval_samples < 1) throw ConfigError("train: eval_samples must be >= 1");
}

double TrainConfig::learning_rate_at(int iter) const {
  return learning_rate * std::pow(decay, iter / decay_period);
}

void adam_step(Eigen::VectorXd& values, const Eigen::VectorXd& grad, AdamState& state, double lr,
               double beta1, double beta2, double epsilon) {
  if (state.m.size() != values.size()) {
    state.m = Eigen::VectorXd::Zero(values.size());
    state.v = Eigen::VectorXd::Zero(values.size());
    state.step = 0;
  }
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, state.step);
  const double c2 = 1.0 - std::pow(beta2, state.step);
  values.array() -=
      lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + epsilon);
}

std::string metrics_line(const IterationRecord& record) {
  nlohmann::ordered_json j;
  j["iter"] = record.iter;
  j["E"] = record.loss.kinetic;
  j["P"] = record.loss.kl;
  j["R"] = record.loss.regularizer;
  j["Q"] = record.loss.preference;
  j["total"] = record.loss.total;
  j["lr"] = record.lr;
  j["wall_ms"] = record.wall_ms;
  return j.dump();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over a combined state
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

constexpr std::uint64_t kSampleStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr int kMaxConsecutiveDivergences = 5;

}  // namespace

double evaluate_cost(const ParameterVector& params, const Problem& problem, int samples,
                     std::uint64_t seed, int steps) {
  constexpr int kChunk = 4096;
  std::mt19937_64 rng(seed);
  const Eigen::VectorXd c = simpson_weights(steps);
  double acc = 0.0;
  for (int begin = 0; begin < samples; begin += kChunk) {
    const int count = std::min(kChunk, samples - begin);
    const Eigen::MatrixXd x0 = problem.initial.sample(count, rng);
    const TrajectoryBatch batch =
        integrate_forward(params, x0, Eigen::VectorXd::Zero(count), std::nullopt, steps);
    for (int p = 0; p < batch.points(); ++p) {
      acc += c[p] * batch.velocities[static_cast<std::size_t>(p)].squaredNorm();
    }
  }
  return acc / samples;
}

TrainReport train(const Problem& problem, ParameterVector initial, const Hyperparameters& hyper,
                  const TrainConfig& config, const IterationCallback& on_iteration) {
  problem.validate();
  hyper.validate();
  config.validate();
  check_steps(hyper.steps, initial.shape().intervals);
  if (config.path == GradientPath::Adjoint && problem.importance_sampling()) {
    throw ConfigError("the adjoint gradient path requires sampling from rho_0");
  }

  TrainReport report;
  report.params = std::move(initial);
  AdamState adam;
  double lr_scale = 1.0;
  int consecutive = 0;
  std::vector<double> times;
  const std::uint64_t sample_base = derive_seed(config.seed, kSampleStream);

  for (int iter = 0; iter < config.iterations; ++iter) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = config.learning_rate_at(iter) * lr_scale;
    LossAndGradient step;
    bool ok = true;
    try {
      const SampleSet samples = draw_samples(problem, hyper, derive_seed(sample_base, static_cast<std::uint64_t>(iter)));
      step = config.path == GradientPath::Backprop
                 ? backprop_gradient(report.params, problem, hyper, samples)
                 : adjoint_gradient(report.params, problem, hyper, samples);
      ok = std::isfinite(step.loss.total) && step.gradient.all_finite();
    } catch (const NumericError&) {
      ok = false;
    } catch (const DomainError&) {
      ok = false;
    }
    if (!ok) {
      ++report.diverged_iterations;
      lr_scale *= 0.5;
      if (++consecutive >= kMaxConsecutiveDivergences) {
        report.aborted = true;
        report.abort_reason = "aborted after " + std::to_string(consecutive) +
                              " consecutive diverged evaluations at iteration " +
                              std::to_string(iter);
        break;
      }
      continue;
    }
    consecutive = 0;
    adam_step(report.params.values(), step.gradient.values(), adam, lr, config.beta1,
              config.beta2, config.epsilon);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    times.push_back(ms);
    report.history.push_back({iter, step.loss, lr, ms});
    if (on_iteration) on_iteration(report.history.back());
  }

  if (!times.empty()) {
    double sum = 0.0;
    for (double t : times) sum += t;
    report.mean_iteration_ms = sum / static_cast<double>(times.size());
    auto mid = times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2);
    std::nth_element(times.begin(), mid, times.end());
    report.median_iteration_ms = *mid;
  }
  if (!report.aborted) {
    report.final_cost = evaluate_cost(report.params, problem, config.eval_samples,
                                      derive_seed(config.seed, kEvalStream), hyper.steps);
  }
  return report;
}

}  // namespace dynot
