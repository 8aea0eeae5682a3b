#pragma once

#include "dynot/config.hpp"
#include "dynot/sinkhorn.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dynot {

struct SeedResult {
  std::uint64_t seed = 0;
  double cost = 0.0;
  double kl_estimate = 0.0;  // terminal KL(rho~_1 || rho_1) on fresh samples
  double mean_iteration_ms = 0.0;
  int iterations = 0;
  int diverged_iterations = 0;
  bool aborted = false;
  std::string abort_reason;
};

struct SolveSummary {
  std::vector<SeedResult> seeds;
  double cost_mean = 0.0;
  double cost_std = 0.0;
  std::optional<double> ground_truth;
  double mean_iteration_ms = 0.0;

  bool failed() const;
};

/// Trains every seed of `config` and writes, below `config.output`:
/// config.json, summary.json and per seed seed_<s>/{metrics.jsonl,
/// checkpoint.txt, trajectory.csv}. Progress lines go to `log` when given.
SolveSummary run_solve(const ExperimentConfig& config, std::ostream* log = nullptr);

Json summary_to_json(const SolveSummary& summary);

/// Sinkhorn between `samples` draws from rho_0 and from rho_1.
SinkhornResult sinkhorn_for_problem(const Problem& problem, int samples, std::uint64_t seed,
                                    const SinkhornOptions& options = {});

struct BenchmarkOptions {
  std::vector<std::string> presets{"test1"};
  std::vector<int> dims{2};
  int iterations = 1000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool adjoint = false;
  bool sinkhorn = true;
  int sinkhorn_samples = 1024;
  std::filesystem::path output = "runs/benchmark";
};

struct BenchmarkRow {
  std::string preset;
  int dim = 0;
  double ours_bp = 0.0;
  std::optional<double> ours_adjoint;
  std::optional<double> sinkhorn;
  std::optional<double> ground_truth;
  double ms_per_iteration = 0.0;
};

/// One row per (preset, d); writes benchmark.csv and benchmark.json.
std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options,
                                        std::ostream* log = nullptr);
void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows);
Json benchmark_to_json(const std::vector<BenchmarkRow>& rows);

struct GradientConsistency {
  int steps = 0;
  double relative_l2 = 0.0;  // |g_adjoint - g_bp| / |g_bp|
  double cosine = 0.0;
};

/// Adjoint versus backprop gradients at the initial parameters of `seed`,
/// for each N in `steps`, on the same particles.
std::vector<GradientConsistency> gradient_consistency(const ExperimentConfig& config,
                                                      const std::vector<int>& steps,
                                                      std::uint64_t seed);

/// Writes plot-ready files for one trained seed of a solve run into
/// <run>/plots/seed_<s>/ and returns their paths: particle slices at
/// t in {0, 0.2, 0.5, 0.8, 1} (first two coordinates), characteristic
/// polylines, a 200x200 preference grid for crowd problems and, in 1-d, the
/// velocity over (t, x).
std::vector<std::filesystem::path> export_plot_data(const std::filesystem::path& run_dir,
                                                    std::uint64_t seed);

/// Mean of log rho(z(x,1), 1) - log rho_1(z(x,1)) over fresh draws x ~ rho_0.
double estimate_terminal_kl(const ParameterVector& params, const Problem& problem, int samples,
                            std::uint64_t seed, int steps);

}  // namespace dynot
