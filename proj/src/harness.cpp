#include "dynot/harness.hpp"

#include "dynot/adjoint.hpp"
#include "dynot/errors.hpp"
#include "dynot/velocity_field.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dynot {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kTrajectoryStream = 11;
constexpr std::uint64_t kKlStream = 12;
constexpr std::uint64_t kSinkhornStream = 13;
constexpr std::uint64_t kPlotStream = 14;
constexpr std::uint64_t kConsistencyStream = 15;
constexpr int kKlSamples = 16384;

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const Json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

fs::path seed_dir(const fs::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

TrainReport train_with_log(const ExperimentConfig& config, const ParameterVector& init,
                           const TrainConfig& train_config, std::ostream& metrics,
                           std::ostream* log) {
  return train(config.problem, init, config.hyper, train_config,
               [&](const IterationRecord& r) {
                 metrics << metrics_line(r) << '\n';
                 if (log && (r.iter % 100 == 0 || r.iter + 1 == train_config.iterations)) {
                   *log << "  seed " << train_config.seed << " iter " << r.iter << " total "
                        << r.loss.total << " E " << r.loss.kinetic << '\n';
                 }
               });
}

}  // namespace

bool SolveSummary::failed() const {
  for (const auto& s : seeds) {
    if (s.aborted) return true;
  }
  return false;
}

double estimate_terminal_kl(const ParameterVector& params, const Problem& problem, int samples,
                            std::uint64_t seed, int steps) {
  const Eigen::MatrixXd x0 = problem.initial.sample(samples, seed);
  const TrajectoryBatch batch = integrate_forward(params, x0, problem.initial, nullptr, steps);
  const Eigen::MatrixXd& z = batch.positions.back();
  require_support(problem.target, z);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    acc += batch.log_rho.back()[i] - problem.target.log_pdf(z.row(i).transpose());
  }
  return acc / samples;
}

SolveSummary run_solve(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  fs::create_directories(config.output);
  write_json(config.output / "config.json", config_to_json(config));

  SolveSummary summary;
  summary.ground_truth = ground_truth(config.problem);
  std::vector<double> costs, times;
  for (const std::uint64_t seed : config.seeds) {
    const fs::path dir = seed_dir(config.output, seed);
    fs::create_directories(dir);
    auto metrics = open_out(dir / "metrics.jsonl");
    TrainConfig train = config.train;
    train.seed = seed;
    const ParameterVector init = initialize_parameters(config.network, derive_seed(seed, kInitStream));
    const TrainReport report = train_with_log(config, init, train, metrics, log);

    SeedResult r;
    r.seed = seed;
    r.iterations = static_cast<int>(report.history.size());
    r.mean_iteration_ms = report.mean_iteration_ms;
    r.diverged_iterations = report.diverged_iterations;
    r.aborted = report.aborted;
    r.abort_reason = report.abort_reason;
    save_checkpoint(dir / "checkpoint.txt", report.params);
    if (!report.aborted) {
      r.cost = report.final_cost;
      r.kl_estimate = estimate_terminal_kl(report.params, config.problem, kKlSamples,
                                           derive_seed(seed, kKlStream), config.hyper.steps);
      costs.push_back(r.cost);
      const int count = config.trajectory_particles;
      const Eigen::MatrixXd x0 =
          config.problem.initial.sample(count, derive_seed(seed, kTrajectoryStream));
      const TrajectoryBatch batch = integrate_forward(report.params, x0, config.problem.initial,
                                                      nullptr, config.hyper.steps);
      auto csv = open_out(dir / "trajectory.csv");
      write_trajectory_csv(csv, batch);
    }
    times.push_back(r.mean_iteration_ms);
    if (log) {
      *log << "seed " << seed << ": cost " << r.cost << ", KL " << r.kl_estimate << ", "
           << r.mean_iteration_ms << " ms/iter" << (r.aborted ? " [aborted]" : "") << '\n';
    }
    summary.seeds.push_back(r);
  }
  summary.cost_mean = mean_of(costs);
  summary.cost_std = std_of(costs);
  summary.mean_iteration_ms = mean_of(times);
  write_json(config.output / "summary.json", summary_to_json(summary));
  Json timing{{"mean_iteration_ms", summary.mean_iteration_ms}};
  for (const auto& s : summary.seeds) timing["seed_" + std::to_string(s.seed)] = s.mean_iteration_ms;
  write_json(config.output / "timing.json", timing);
  return summary;
}

Json summary_to_json(const SolveSummary& summary) {
  Json j;
  j["cost_mean"] = summary.cost_mean;
  j["cost_std"] = summary.cost_std;
  j["ground_truth"] = optional_number(summary.ground_truth);
  std::vector<std::uint64_t> seeds;
  Json per_seed = Json::array();
  for (const auto& s : summary.seeds) {
    seeds.push_back(s.seed);
    Json r{{"seed", s.seed},
           {"cost", s.cost},
           {"kl_estimate", s.kl_estimate},
           {"iterations", s.iterations},
           {"diverged_iterations", s.diverged_iterations},
           {"aborted", s.aborted}};
    if (s.aborted) r["abort_reason"] = s.abort_reason;
    per_seed.push_back(r);
  }
  j["seeds"] = seeds;
  j["runs"] = per_seed;
  return j;
}

SinkhornResult sinkhorn_for_problem(const Problem& problem, int samples, std::uint64_t seed,
                                    const SinkhornOptions& options) {
  std::mt19937_64 rng(derive_seed(seed, kSinkhornStream));
  const PointCloud source = PointCloud::uniform(problem.initial.sample(samples, rng));
  const PointCloud target = PointCloud::uniform(problem.target.sample(samples, rng));
  return sinkhorn(source, target, options);
}

std::vector<BenchmarkRow> run_benchmark(const BenchmarkOptions& options, std::ostream* log) {
  std::vector<BenchmarkRow> rows;
  for (const auto& preset : options.presets) {
    for (const int dim : options.dims) {
      ExperimentConfig config = make_preset(preset, dim);
      config.train.iterations = options.iterations;
      config.seeds = options.seeds;
      config.output = options.output / (preset + "_d" + std::to_string(dim));
      BenchmarkRow row;
      row.preset = preset;
      row.dim = dim;
      row.ground_truth = ground_truth(config.problem);
      if (log) *log << "== " << preset << " d=" << dim << " backprop\n";
      const SolveSummary bp = run_solve(config, log);
      if (bp.failed()) throw NumericError(preset + " d=" + std::to_string(dim) + ": training diverged");
      row.ours_bp = bp.cost_mean;
      row.ms_per_iteration = bp.mean_iteration_ms;
      if (options.adjoint) {
        ExperimentConfig adj = config;
        adj.train.path = GradientPath::Adjoint;
        adj.output = config.output.string() + "_adjoint";
        if (log) *log << "== " << preset << " d=" << dim << " adjoint\n";
        const SolveSummary as = run_solve(adj, log);
        if (as.failed()) throw NumericError(preset + ": adjoint training diverged");
        row.ours_adjoint = as.cost_mean;
      }
      if (options.sinkhorn) {
        std::vector<double> costs;
        for (const auto seed : options.seeds) {
          costs.push_back(sinkhorn_for_problem(config.problem, options.sinkhorn_samples, seed).cost);
        }
        row.sinkhorn = mean_of(costs);
      }
      rows.push_back(row);
    }
  }
  fs::create_directories(options.output);
  auto csv = open_out(options.output / "benchmark.csv");
  write_benchmark_csv(csv, rows);
  write_json(options.output / "benchmark.json", benchmark_to_json(rows));
  return rows;
}

void write_benchmark_csv(std::ostream& out, const std::vector<BenchmarkRow>& rows) {
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream s;
    s << std::setprecision(10);
    if (v) s << *v;
    return s.str();
  };
  out << "preset,d,ours_bp,ours_adjoint,sinkhorn,ground_truth,ms_per_iteration\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.preset << ',' << r.dim << ',' << r.ours_bp << ',' << opt(r.ours_adjoint) << ','
        << opt(r.sinkhorn) << ',' << opt(r.ground_truth) << ',' << r.ms_per_iteration << '\n';
  }
}

Json benchmark_to_json(const std::vector<BenchmarkRow>& rows) {
  Json arr = Json::array();
  for (const auto& r : rows) {
    arr.push_back(Json{{"preset", r.preset},
                       {"d", r.dim},
                       {"ours_bp", r.ours_bp},
                       {"ours_adjoint", optional_number(r.ours_adjoint)},
                       {"sinkhorn", optional_number(r.sinkhorn)},
                       {"ground_truth", optional_number(r.ground_truth)},
                       {"ms_per_iteration", r.ms_per_iteration}});
  }
  return arr;
}

std::vector<GradientConsistency> gradient_consistency(const ExperimentConfig& config,
                                                      const std::vector<int>& steps,
                                                      std::uint64_t seed) {
  const ParameterVector params =
      initialize_parameters(config.network, derive_seed(seed, kInitStream));
  std::vector<GradientConsistency> out;
  for (const int n : steps) {
    Hyperparameters hyper = config.hyper;
    hyper.steps = n;
    const SampleSet samples =
        draw_samples(config.problem, hyper, derive_seed(seed, kConsistencyStream));
    const Eigen::VectorXd bp = backprop_gradient(params, config.problem, hyper, samples).gradient.values();
    const Eigen::VectorXd adj = adjoint_gradient(params, config.problem, hyper, samples).gradient.values();
    out.push_back({n, (adj - bp).norm() / bp.norm(), adj.dot(bp) / (adj.norm() * bp.norm())});
  }
  return out;
}

namespace {

int plot_steps(int steps, int intervals) {
  const int unit = std::lcm(intervals, 5);
  return ((steps + unit - 1) / unit) * unit;
}

void write_xy(std::ostream& out, const Eigen::MatrixXd& z) {
  const int cols = static_cast<int>(std::min<Eigen::Index>(2, z.cols()));
  out << (cols == 2 ? "x1,x2\n" : "x1\n");
  out << std::setprecision(8);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out << z(i, 0);
    if (cols == 2) out << ',' << z(i, 1);
    out << '\n';
  }
}

}  // namespace

std::vector<fs::path> export_plot_data(const fs::path& run_dir, std::uint64_t seed) {
  const ExperimentConfig config = load_config(run_dir / "config.json");
  const ParameterVector params = load_checkpoint(seed_dir(run_dir, seed) / "checkpoint.txt");
  if (!(params.shape() == config.network)) {
    throw ConfigError("checkpoint shape does not match " + (run_dir / "config.json").string());
  }
  const fs::path out_dir = run_dir / "plots" / ("seed_" + std::to_string(seed));
  std::vector<fs::path> written;

  const int steps = plot_steps(config.hyper.steps, config.network.intervals);
  constexpr int kSliceParticles = 2048;
  const Eigen::MatrixXd x0 =
      config.problem.initial.sample(kSliceParticles, derive_seed(seed, kPlotStream));
  const TrajectoryBatch batch = integrate_forward(params, x0, config.problem.initial, nullptr, steps);
  for (const double t : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const int p = static_cast<int>(std::lround(t * 2 * steps));
    std::ostringstream name;
    name << "slice_t" << std::fixed << std::setprecision(2) << t << ".csv";
    auto out = open_out(out_dir / name.str());
    write_xy(out, batch.positions[static_cast<std::size_t>(p)]);
    written.push_back(out_dir / name.str());
  }

  {
    constexpr int kLines = 64;
    auto out = open_out(out_dir / "characteristics.csv");
    const bool planar = batch.dim() >= 2;
    out << (planar ? "particle_id,t,x1,x2\n" : "particle_id,t,x1\n") << std::setprecision(8);
    for (int i = 0; i < std::min(kLines, batch.particles()); ++i) {
      for (int p = 0; p < batch.points(); ++p) {
        const auto& z = batch.positions[static_cast<std::size_t>(p)];
        out << i << ',' << batch.times[static_cast<std::size_t>(p)] << ',' << z(i, 0);
        if (planar) out << ',' << z(i, 1);
        out << '\n';
      }
    }
    written.push_back(out_dir / "characteristics.csv");
  }

  if (has_preference(config.problem.preference)) {
    constexpr int kGrid = 200;
    auto out = open_out(out_dir / "obstacle_grid.csv");
    out << "x1,x2,q\n" << std::setprecision(8);
    const UniformBoxSpec& w = config.plot_window;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(config.dim);
    for (int a = 0; a < kGrid; ++a) {
      for (int b = 0; b < kGrid; ++b) {
        x[0] = w.lower[0] + (w.upper[0] - w.lower[0]) * a / (kGrid - 1);
        x[1] = w.lower[1] + (w.upper[1] - w.lower[1]) * b / (kGrid - 1);
        out << x[0] << ',' << x[1] << ',' << preference(config.problem.preference, x) << '\n';
      }
    }
    written.push_back(out_dir / "obstacle_grid.csv");
  }

  if (config.dim == 1) {
    constexpr int kTimes = 201;
    constexpr int kPositions = 41;
    auto out = open_out(out_dir / "velocity_profile.csv");
    out << "t,x,v\n" << std::setprecision(10);
    const double lo = config.plot_window.lower[0];
    const double hi = config.plot_window.upper[0];
    Eigen::VectorXd x(1);
    for (int a = 0; a < kTimes; ++a) {
      const double t = static_cast<double>(a) / (kTimes - 1);
      for (int b = 0; b < kPositions; ++b) {
        x[0] = lo + (hi - lo) * b / (kPositions - 1);
        out << t << ',' << x[0] << ',' << eval_velocity(params, x, t)[0] << '\n';
      }
    }
    written.push_back(out_dir / "velocity_profile.csv");
  }
  return written;
}

}  // namespace dynot
