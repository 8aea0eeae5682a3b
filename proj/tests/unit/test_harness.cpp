#include "doctest.h"

#include "dynot/config.hpp"
#include "dynot/errors.hpp"
#include "dynot/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dynot;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// metrics.jsonl with the wall-clock field removed from every record.
std::string metrics_without_wall_time(const fs::path& p) {
  std::ifstream in(p);
  std::string line, out;
  while (std::getline(in, line)) {
    Json j = Json::parse(line);
    j.erase("wall_ms");
    out += j.dump() + '\n';
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dynot_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig tiny(const std::string& preset, int dim, const fs::path& out) {
  ExperimentConfig c = make_preset(preset, dim);
  c.seeds = {0, 1};
  c.train.iterations = 3;
  c.train.eval_samples = 256;
  c.hyper.particles = 32;
  c.network.hidden = 4;
  c.trajectory_particles = 8;
  c.output = out;
  return c;
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("presets") {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = make_preset(name, name == "arch1d" ? 1 : 2);
    CHECK_NOTHROW(c.validate());
  }
  CHECK(*ground_truth(make_preset("test1", 2).problem) == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(*ground_truth(make_preset("test3", 2).problem) == doctest::Approx(128.0).epsilon(1e-12));
  CHECK(std::abs(*ground_truth(make_preset("test2", 10).problem) - 18.0455) <= 5e-5);
  CHECK_FALSE(ground_truth(make_preset("test4", 2).problem).has_value());

  const ExperimentConfig t4 = make_preset("test4", 2);
  CHECK(t4.hyper.kl_weight == 10.0);
  CHECK(t4.hyper.pref_weight == 500.0);
  CHECK(t4.hyper.reg_weight == 0.0);
  CHECK(preference(t4.problem.preference, Eigen::Vector2d::Zero()) ==
        doctest::Approx(0.2250790790).epsilon(1e-9));
  CHECK(make_preset("maze1", 2).reconstruction);
  CHECK(make_preset("test1", 2).train.learning_rate == 0.05);
  const ExperimentConfig arch = make_preset("arch1d", 1);
  CHECK(arch.network.hidden == 10);
  CHECK(arch.network.width == 2);
  CHECK(arch.network.intervals == 5);
  CHECK(arch.train.learning_rate == 0.01);
  CHECK(arch.train.iterations == 1000);

  // Higher dimensions pad the means with zeros.
  const ExperimentConfig t3 = make_preset("test3", 5);
  const auto& g = std::get<GaussianSpec>(t3.problem.initial.spec());
  CHECK(g.mean.size() == 5);
  CHECK(g.mean[1] == -4.0);
  CHECK(g.mean[2] == 0.0);

  try {
    make_preset("test9", 2);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& name : preset_names()) CHECK(msg.find(name) != std::string::npos);
  }
  CHECK_THROWS_AS(make_preset("test4", 1), ConfigError);
}

TEST_CASE("config documents round trip and reject mistakes") {
  for (const auto& [name, dim] : std::vector<std::pair<std::string, int>>{{"arch1d", 1}, {"test2", 10}}) {
    const Json doc = config_to_json(make_preset(name, dim));
    CHECK(config_to_json(config_from_json(doc)).dump() == doc.dump());
  }
  ExperimentConfig c = make_preset("test5", 3);
  c.hyper.reg_weight = 0.5;
  c.train.iterations = 17;
  c.network.architecture = Architecture::TimeWeights;
  const Json j = config_to_json(c);
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back).dump() == j.dump());

  Json explicit_problem = j;
  explicit_problem.erase("preset");
  CHECK(config_to_json(config_from_json(explicit_problem))["problem"].dump() == j["problem"].dump());

  Json typo = j;
  typo["hyper"]["lamda"] = 3.0;
  CHECK_THROWS_AS(config_from_json(typo), ConfigError);
  Json bad_dim = Json{{"preset", "test1"}, {"dim", 0}};
  CHECK_THROWS_AS(config_from_json(bad_dim), ConfigError);
  Json bad_steps = Json{{"preset", "test1"}, {"hyper", {{"steps", 7}}}};
  CHECK_THROWS_AS(config_from_json(bad_steps), ConfigError);
  Json bad_weight = Json{{"preset", "test1"}, {"hyper", {{"kl_weight", -1.0}}}};
  CHECK_THROWS_AS(config_from_json(bad_weight), ConfigError);
  Json wrong_len = Json{{"dim", 2},
                        {"problem",
                         {{"initial", {{"type", "gaussian"}, {"mean", {0.0}}, {"variance", {1.0, 1.0}}}},
                          {"target", {{"type", "gaussian"}, {"mean", {1.0, 0.0}}, {"variance", {1.0, 1.0}}}}}}};
  CHECK_THROWS_AS(config_from_json(wrong_len), ConfigError);
  Json adjoint_is = Json{{"preset", "test1"},
                         {"problem", {{"sampling", {{"type", "gaussian"}, {"mean", {0.0, 0.0}}, {"variance", {2.0, 2.0}}}}}},
                         {"train", {{"gradient", "adjoint"}}}};
  CHECK_THROWS_AS(config_from_json(adjoint_is), ConfigError);
}

TEST_CASE("solve writes reproducible artifacts") {
  const fs::path a = scratch("solve_a"), b = scratch("solve_b");
  const SolveSummary sa = run_solve(tiny("test1", 2, a));
  const SolveSummary sb = run_solve(tiny("test1", 2, b));
  CHECK_FALSE(sa.failed());
  REQUIRE(sa.seeds.size() == 2u);
  CHECK(*sa.ground_truth == 16.0);

  const Json summary = Json::parse(slurp(a / "summary.json"));
  CHECK(summary["ground_truth"] == 16.0);
  CHECK(summary["seeds"] == Json::array({0, 1}));
  CHECK(summary.contains("cost_mean"));
  CHECK(summary.contains("cost_std"));

  // config.json records its own output directory, which is the only difference.
  Json config_a = Json::parse(slurp(a / "config.json"));
  Json config_b = Json::parse(slurp(b / "config.json"));
  CHECK(config_a["output"] != config_b["output"]);
  config_a.erase("output");
  config_b.erase("output");
  CHECK(config_a == config_b);
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  for (const char* s : {"seed_0", "seed_1"}) {
    for (const char* f : {"checkpoint.txt", "trajectory.csv"}) {
      INFO(s << "/" << f);
      CHECK(slurp(a / s / f) == slurp(b / s / f));
    }
    CHECK(metrics_without_wall_time(a / s / "metrics.jsonl") ==
          metrics_without_wall_time(b / s / "metrics.jsonl"));
    CHECK(line_count(a / s / "metrics.jsonl") == 3u);
    // 2N+1 points for each of the 8 visualization particles plus a header.
    CHECK(line_count(a / s / "trajectory.csv") == 1u + 8u * 21u);
  }
  CHECK(fs::exists(a / "timing.json"));
  CHECK(sb.cost_mean == sa.cost_mean);
}

TEST_CASE("plot export") {
  const fs::path crowd = scratch("plots_crowd");
  run_solve(tiny("test4", 2, crowd));
  const auto files = export_plot_data(crowd, 1);
  for (const char* name : {"slice_t0.00.csv", "slice_t0.20.csv", "slice_t0.50.csv",
                           "slice_t0.80.csv", "slice_t1.00.csv", "characteristics.csv",
                           "obstacle_grid.csv"}) {
    INFO(name);
    CHECK(fs::exists(crowd / "plots" / "seed_1" / name));
  }
  CHECK(line_count(crowd / "plots" / "seed_1" / "obstacle_grid.csv") == 1u + 200u * 200u);
  CHECK(slurp(crowd / "plots" / "seed_1" / "slice_t0.50.csv").rfind("x1,x2", 0) == 0);

  const fs::path high = scratch("plots_high");
  run_solve(tiny("test2", 10, high));
  export_plot_data(high, 0);
  std::ifstream slice(high / "plots" / "seed_0" / "slice_t1.00.csv");
  std::string header, row;
  std::getline(slice, header);
  std::getline(slice, row);
  CHECK(std::count(header.begin(), header.end(), ',') == 1);
  CHECK(std::count(row.begin(), row.end(), ',') == 1);
  CHECK_FALSE(fs::exists(high / "plots" / "seed_0" / "obstacle_grid.csv"));

  const fs::path line = scratch("plots_1d");
  run_solve(tiny("arch1d", 1, line));
  export_plot_data(line, 0);
  CHECK(fs::exists(line / "plots" / "seed_0" / "velocity_profile.csv"));
}

TEST_CASE("benchmark table shape") {
  BenchmarkOptions opts;
  opts.presets = {"test1"};
  opts.dims = {2};
  opts.iterations = 2;
  opts.seeds = {0};
  opts.sinkhorn_samples = 64;
  opts.output = scratch("bench");
  const auto rows = run_benchmark(opts);
  REQUIRE(rows.size() == 1u);
  std::ostringstream csv;
  write_benchmark_csv(csv, rows);
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "preset,d,ours_bp,ours_adjoint,sinkhorn,ground_truth,ms_per_iteration");
  // d, ours_bp, sinkhorn, ground truth and timing are numbers; the adjoint column is empty.
  std::vector<std::string> cells;
  std::stringstream rs(row);
  for (std::string cell; std::getline(rs, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 7u);
  CHECK(cells[3].empty());
  int numeric = 0;
  for (std::size_t k = 1; k < cells.size(); ++k) {
    if (!cells[k].empty()) {
      CHECK_NOTHROW(std::stod(cells[k]));
      ++numeric;
    }
  }
  CHECK(numeric == 5);
  CHECK(fs::exists(opts.output / "benchmark.json"));
}

TEST_CASE("gradient consistency report") {
  ExperimentConfig c = make_preset("test1", 2);
  c.hyper.particles = 16;
  c.network.hidden = 4;
  const auto rows = gradient_consistency(c, {10, 20}, 0);
  REQUIRE(rows.size() == 2u);
  CHECK(rows[1].relative_l2 < rows[0].relative_l2);
  CHECK(rows[1].cosine > 0.99);
}
