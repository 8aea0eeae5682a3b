#include "dynot/config.hpp"
#include "dynot/errors.hpp"
#include "dynot/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace {

using dynot::Json;

struct Overrides {
  std::string config_path;
  std::string preset;
  std::optional<int> dim;
  std::vector<std::uint64_t> seeds;
  std::string output;
  std::optional<int> iterations;
  std::optional<double> learning_rate;
  std::optional<double> kl_weight;
  std::optional<double> reg_weight;
  std::optional<double> pref_weight;
  std::optional<int> particles;
  std::optional<int> steps;
  std::optional<int> workers;
  std::string gradient;
  std::string architecture;
};

void add_override_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "Experiment preset");
  cmd->add_option("--dim", o.dim, "Dimension d");
  cmd->add_option("--seeds", o.seeds, "Seed list")->delimiter(',');
  cmd->add_option("--output", o.output, "Output directory");
  cmd->add_option("--iterations", o.iterations, "Training iterations");
  cmd->add_option("--lr", o.learning_rate, "Initial learning rate");
  cmd->add_option("--lambda", o.kl_weight, "KL penalty weight");
  cmd->add_option("--alpha", o.reg_weight, "Jacobian regularizer weight");
  cmd->add_option("--lambda-p", o.pref_weight, "Preference weight");
  cmd->add_option("--particles", o.particles, "Particles per iteration (r)");
  cmd->add_option("--steps", o.steps, "Time intervals N");
  cmd->add_option("--workers", o.workers, "Concurrent particle chunks");
  cmd->add_option("--gradient", o.gradient, "backprop or adjoint");
  cmd->add_option("--architecture", o.architecture, "nodal or time-weights");
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dynot::ConfigError("cannot open " + path);
  try {
    return Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw dynot::ConfigError(path + ": " + e.what());
  }
}

dynot::ExperimentConfig resolve(const Overrides& o) {
  Json doc = o.config_path.empty() ? Json::object() : read_json_file(o.config_path);
  if (!o.preset.empty()) doc["preset"] = o.preset;
  if (!doc.contains("preset") && !doc.contains("problem")) doc["preset"] = "test1";
  if (o.dim) doc["dim"] = *o.dim;
  if (!o.seeds.empty()) doc["seeds"] = o.seeds;
  if (!o.output.empty()) doc["output"] = o.output;
  if (o.iterations) doc["train"]["iterations"] = *o.iterations;
  if (o.learning_rate) doc["train"]["learning_rate"] = *o.learning_rate;
  if (!o.gradient.empty()) doc["train"]["gradient"] = o.gradient;
  if (o.kl_weight) doc["hyper"]["kl_weight"] = *o.kl_weight;
  if (o.reg_weight) doc["hyper"]["reg_weight"] = *o.reg_weight;
  if (o.pref_weight) doc["hyper"]["pref_weight"] = *o.pref_weight;
  if (o.particles) doc["hyper"]["particles"] = *o.particles;
  if (o.steps) doc["hyper"]["steps"] = *o.steps;
  if (o.workers) doc["hyper"]["workers"] = *o.workers;
  if (!o.architecture.empty()) doc["network"]["architecture"] = o.architecture;
  return dynot::config_from_json(doc);
}

int run_solve(const Overrides& o) {
  const dynot::ExperimentConfig config = resolve(o);
  const dynot::SolveSummary summary = dynot::run_solve(config, &std::cerr);
  std::cout << dynot::summary_to_json(summary).dump(2) << '\n';
  return summary.failed() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic optimal transport with neural velocity fields"};
  app.require_subcommand(1);

  Overrides solve_opts;
  auto* solve = app.add_subcommand("solve", "Train on a preset or config and write artifacts");
  add_override_flags(solve, solve_opts);

  dynot::BenchmarkOptions bench;
  std::string bench_presets = "test1";
  std::string bench_dims = "2";
  bool bench_no_sinkhorn = false;
  std::string bench_output = bench.output.string();
  auto* benchmark = app.add_subcommand("benchmark", "Cost and timing table over presets and dims");
  benchmark->add_option("--presets", bench.presets, "Presets")->delimiter(',');
  benchmark->add_option("--dims", bench.dims, "Dimensions")->delimiter(',');
  benchmark->add_option("--iterations", bench.iterations, "Training iterations");
  benchmark->add_option("--seeds", bench.seeds, "Seeds")->delimiter(',');
  benchmark->add_flag("--adjoint", bench.adjoint, "Also train with the adjoint gradient");
  benchmark->add_flag("--no-sinkhorn", bench_no_sinkhorn, "Skip the Sinkhorn column");
  benchmark->add_option("--sinkhorn-samples", bench.sinkhorn_samples, "Samples per side");
  benchmark->add_option("--output", bench_output, "Output directory");

  std::string sk_preset = "test1";
  int sk_dim = 2;
  int sk_samples = 1024;
  std::vector<std::uint64_t> sk_seeds{0, 1, 2, 3, 4};
  dynot::SinkhornOptions sk_opts;
  auto* sk = app.add_subcommand("sinkhorn", "Entropic OT between sample clouds of a preset");
  sk->add_option("--preset", sk_preset, "Preset");
  sk->add_option("--dim", sk_dim, "Dimension");
  sk->add_option("--samples", sk_samples, "Samples per side");
  sk->add_option("--seeds", sk_seeds, "Seeds")->delimiter(',');
  sk->add_option("--epsilon", sk_opts.epsilon, "Entropic regularization (default 1e-2 mean cost)");
  sk->add_option("--max-iters", sk_opts.max_iterations, "Maximum sweeps");
  sk->add_option("--tol", sk_opts.tolerance, "Marginal L1 tolerance");

  std::vector<std::string> cmp_presets{"test1", "test2", "test3"};
  int cmp_dim = 2;
  int cmp_iterations = 1000;
  std::vector<std::uint64_t> cmp_seeds{0, 1, 2, 3, 4};
  std::string cmp_output = "runs/compare";
  bool cmp_consistency_only = false;
  auto* cmp = app.add_subcommand("compare-gradients", "Backprop versus adjoint gradients");
  cmp->add_option("--presets", cmp_presets, "Presets")->delimiter(',');
  cmp->add_option("--dim", cmp_dim, "Dimension");
  cmp->add_option("--iterations", cmp_iterations, "Training iterations per method");
  cmp->add_option("--seeds", cmp_seeds, "Seeds")->delimiter(',');
  cmp->add_option("--output", cmp_output, "Output directory");
  cmp->add_flag("--consistency-only", cmp_consistency_only,
                "Only compare gradients at initialization for N in {10, 20, 40}");

  std::string plot_run;
  std::uint64_t plot_seed = 0;
  auto* plots = app.add_subcommand("export-plots", "Plot-ready files for a finished solve run");
  plots->add_option("--run", plot_run, "Run directory written by solve")->required();
  plots->add_option("--seed", plot_seed, "Seed to export");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*solve) return run_solve(solve_opts);

    if (*benchmark) {
      bench.sinkhorn = !bench_no_sinkhorn;
      bench.output = bench_output;
      const auto rows = dynot::run_benchmark(bench, &std::cerr);
      dynot::write_benchmark_csv(std::cout, rows);
      return 0;
    }

    if (*sk) {
      const dynot::ExperimentConfig config = dynot::make_preset(sk_preset, sk_dim);
      Json runs = Json::array();
      double sum = 0.0;
      bool all_converged = true;
      for (const auto seed : sk_seeds) {
        const auto r = dynot::sinkhorn_for_problem(config.problem, sk_samples, seed, sk_opts);
        runs.push_back(Json{{"seed", seed},
                            {"cost", r.cost},
                            {"violation", r.violation},
                            {"iterations", r.iterations},
                            {"converged", r.converged},
                            {"epsilon", r.epsilon}});
        sum += r.cost;
        all_converged = all_converged && r.converged;
      }
      const auto truth = dynot::ground_truth(config.problem);
      Json out{{"preset", sk_preset},
               {"d", sk_dim},
               {"samples", sk_samples},
               {"cost_mean", sum / static_cast<double>(sk_seeds.size())},
               {"ground_truth", truth ? Json(*truth) : Json(nullptr)},
               {"converged", all_converged},
               {"runs", runs}};
      std::cout << out.dump(2) << '\n';
      return all_converged ? 0 : 3;
    }

    if (*cmp) {
      Json report{{"d", cmp_dim}};
      Json consistency = Json::array();
      for (const auto& preset : cmp_presets) {
        const dynot::ExperimentConfig config = dynot::make_preset(preset, cmp_dim);
        for (const auto& g : dynot::gradient_consistency(config, {10, 20, 40}, cmp_seeds.front())) {
          consistency.push_back(Json{{"preset", preset},
                                     {"N", g.steps},
                                     {"relative_l2", g.relative_l2},
                                     {"cosine", g.cosine}});
        }
      }
      report["consistency"] = consistency;
      if (!cmp_consistency_only) {
        dynot::BenchmarkOptions opts;
        opts.presets = cmp_presets;
        opts.dims = {cmp_dim};
        opts.iterations = cmp_iterations;
        opts.seeds = cmp_seeds;
        opts.adjoint = true;
        opts.sinkhorn = false;
        opts.output = cmp_output;
        const auto rows = dynot::run_benchmark(opts, &std::cerr);
        Json table = Json::array();
        for (const auto& r : rows) {
          table.push_back(Json{{"preset", r.preset},
                               {"backprop", r.ours_bp},
                               {"adjoint", r.ours_adjoint ? Json(*r.ours_adjoint) : Json(nullptr)},
                               {"ground_truth", r.ground_truth ? Json(*r.ground_truth) : Json(nullptr)}});
        }
        report["costs"] = table;
      }
      std::cout << report.dump(2) << '\n';
      return 0;
    }

    if (*plots) {
      for (const auto& path : dynot::export_plot_data(plot_run, plot_seed)) {
        std::cout << path.string() << '\n';
      }
      return 0;
    }
  } catch (const dynot::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 64;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
