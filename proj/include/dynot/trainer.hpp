#pragma once

#include "dynot/objective.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace dynot {

enum class GradientPath { Backprop, Adjoint };

std::string_view to_string(GradientPath path);
GradientPath gradient_path_from_string(std::string_view name);

struct TrainConfig {
  int iterations = 1000;
  double learning_rate = 0.01;  // eta_0
  double decay = 0.98;
  int decay_period = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  GradientPath path = GradientPath::Backprop;
  std::uint64_t seed = 0;
  int eval_samples = 16384;

  void validate() const;
  /// eta_0 * decay^floor(iter / period).
  double learning_rate_at(int iter) const;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int step = 0;
};

/// One bias-corrected Adam update of `values` in place.
void adam_step(Eigen::VectorXd& values, const Eigen::VectorXd& grad, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

struct IterationRecord {
  int iter = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// {"iter", "E", "P", "R", "Q", "total", "lr", "wall_ms"} on one line.
std::string metrics_line(const IterationRecord& record);

struct TrainReport {
  std::vector<IterationRecord> history;  // completed iterations only
  ParameterVector params;
  double final_cost = 0.0;
  double mean_iteration_ms = 0.0;
  double median_iteration_ms = 0.0;
  int diverged_iterations = 0;
  bool aborted = false;
  std::string abort_reason;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Adam on fresh particles every iteration. A diverged evaluation skips the
/// iteration and halves the learning rate; five in a row abort training.
/// Deterministic given `config.seed` (wall times aside).
TrainReport train(const Problem& problem, ParameterVector initial, const Hyperparameters& hyper,
                  const TrainConfig& config, const IterationCallback& on_iteration = {});

/// Kinetic energy only, on `samples` fresh draws from rho_0.
double evaluate_cost(const ParameterVector& params, const Problem& problem, int samples,
                     std::uint64_t seed, int steps);

/// Independent 64-bit seed for stream `stream` of a run seeded with `base`.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace dynot
