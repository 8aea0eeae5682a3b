#include "doctest.h"
#include "fixtures.hpp"

#include "dynot/errors.hpp"
#include "dynot/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

using namespace dynot;

TEST_CASE("adam first step moves every coordinate by the learning rate") {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd g(4);
  g << 3.0, -0.02, 150.0, -7.0;
  AdamState s;
  adam_step(x, g, s, 0.01);
  for (int k = 0; k < 4; ++k) CHECK(std::abs(std::abs(x[k]) - 0.01) <= 1e-8);
  CHECK(x[0] < 0.0);
  CHECK(x[1] > 0.0);
}

TEST_CASE("adam with zero gradient leaves parameters and decays moments") {
  Eigen::VectorXd y = Eigen::VectorXd::Constant(3, 2.0);
  AdamState fresh;
  adam_step(y, Eigen::VectorXd::Zero(3), fresh, 0.1);
  CHECK(y == Eigen::VectorXd::Constant(3, 2.0));

  Eigen::VectorXd x = Eigen::VectorXd::Constant(3, 2.0);
  AdamState s;
  adam_step(x, Eigen::VectorXd::Constant(3, 1.0), s, 0.1);
  const Eigen::VectorXd m = s.m, v = s.v;
  adam_step(x, Eigen::VectorXd::Zero(3), s, 0.1);
  CHECK(s.m.isApprox(0.9 * m));
  CHECK(s.v.isApprox(0.999 * v));
}

TEST_CASE("adam matches the hand recursion over two steps") {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.4;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 1.0);
  AdamState s;
  adam_step(x, Eigen::VectorXd::Constant(1, g), s, lr, b1, b2, eps);
  adam_step(x, Eigen::VectorXd::Constant(1, g), s, lr, b1, b2, eps);
  double p = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
  CHECK(x[0] == doctest::Approx(p).epsilon(1e-15));
  CHECK(s.step == 2);
}

TEST_CASE("learning-rate schedule and config validation") {
  TrainConfig c;
  CHECK(c.learning_rate_at(0) == 0.01);
  CHECK(c.learning_rate_at(9) == 0.01);
  CHECK(c.learning_rate_at(10) == doctest::Approx(0.0098));
  CHECK(c.learning_rate_at(25) == doctest::Approx(0.01 * 0.98 * 0.98));
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.learning_rate = 0.01;
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(gradient_path_from_string("adjoint") == GradientPath::Adjoint);
  CHECK(to_string(GradientPath::Backprop) == "backprop");
  CHECK_THROWS_AS(gradient_path_from_string("bfgs"), ConfigError);
}

TEST_CASE("metrics line") {
  IterationRecord r;
  r.iter = 3;
  r.loss = {1.0, 2.0, 3.0, 4.0, 10.0};
  r.lr = 0.01;
  r.wall_ms = 5.5;
  const std::string line = metrics_line(r);
  CHECK(line.find('\n') == std::string::npos);
  const auto j = nlohmann::ordered_json::parse(line);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"iter", "E", "P", "R", "Q", "total", "lr", "wall_ms"});
  CHECK(j["total"] == 10.0);
}

TEST_CASE("zero iterations return the initial parameters") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const ParameterVector init = initialize_parameters(shape, 1);
  Hyperparameters hyper;
  hyper.particles = 16;
  TrainConfig cfg;
  cfg.iterations = 0;
  cfg.eval_samples = 64;
  const TrainReport r = train(testing::gaussian_pair(2, -4.0), init, hyper, cfg);
  CHECK(r.history.empty());
  CHECK(r.params.values() == init.values());
}

TEST_CASE("training is reproducible given the seed") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const ParameterVector init = initialize_parameters(shape, 2);
  Hyperparameters hyper;
  hyper.particles = 32;
  hyper.reg_weight = 0.1;
  hyper.reg_samples = 16;
  TrainConfig cfg;
  cfg.iterations = 15;
  cfg.seed = 9;
  cfg.eval_samples = 256;
  const Problem problem = testing::gaussian_pair(2, -4.0);
  const TrainReport a = train(problem, init, hyper, cfg);
  const TrainReport b = train(problem, init, hyper, cfg);
  CHECK(a.params.values() == b.params.values());
  CHECK(a.final_cost == b.final_cost);
  REQUIRE(a.history.size() == 15u);
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    CHECK(a.history[k].loss.total == b.history[k].loss.total);
  }
  cfg.seed = 10;
  CHECK(train(problem, init, hyper, cfg).params.values() != a.params.values());
}

TEST_CASE("loss trends down over a full training run") {
  const NetworkShape shape{2, 5, 2, 20, Architecture::Nodal};
  Hyperparameters hyper;
  hyper.particles = 256;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.eval_samples = 1024;
  const TrainReport r =
      train(testing::gaussian_pair(2, -4.0), initialize_parameters(shape, 0), hyper, cfg);
  REQUIRE(r.history.size() == 1000u);
  std::vector<double> tail;
  for (std::size_t k = 900; k < 1000; ++k) tail.push_back(r.history[k].loss.total);
  std::nth_element(tail.begin(), tail.begin() + 50, tail.end());
  MESSAGE("loss at 10: " << r.history[10].loss.total << ", median 900-1000: " << tail[50]);
  CHECK(tail[50] < r.history[10].loss.total);
}

TEST_CASE("repeated divergence aborts training") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  Problem problem;
  problem.initial = Density(GaussianSpec::isotropic(Eigen::Vector2d::Zero(), 1.0));
  problem.target = Density(UniformBoxSpec{Eigen::Vector2d(10.0, 10.0), Eigen::Vector2d(11.0, 11.0)});
  problem.regularizer_box = default_regularizer_box(problem.initial, problem.target);
  Hyperparameters hyper;
  hyper.particles = 8;
  TrainConfig cfg;
  cfg.iterations = 20;
  const TrainReport r = train(problem, initialize_parameters(shape, 0), hyper, cfg);
  CHECK(r.aborted);
  CHECK(r.diverged_iterations == 5);
  CHECK(r.history.empty());
  CHECK(r.abort_reason.find("5 consecutive") != std::string::npos);
}

TEST_CASE("adjoint path refuses importance sampling") {
  const NetworkShape shape{2, 5, 1, 3, Architecture::Nodal};
  Problem problem = testing::gaussian_pair(2, -1.0);
  problem.sampling = Density(GaussianSpec::isotropic(Eigen::Vector2d::Zero(), 2.0));
  TrainConfig cfg;
  cfg.path = GradientPath::Adjoint;
  CHECK_THROWS_AS(train(problem, initialize_parameters(shape, 0), Hyperparameters{}, cfg),
                  ConfigError);
}

TEST_CASE("evaluated transport cost") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const Problem problem = testing::gaussian_pair(2, -4.0);
  CHECK(evaluate_cost(ParameterVector(shape), problem, 512, 1, 10) == 0.0);
  // Optimal map of Test 1 is the constant shift by -4 e_1.
  ParameterVector p(shape);
  for (int i = 0; i <= 5; ++i) p.b2(i, 0) = Eigen::Vector2d(-4.0, 0.0);
  CHECK(std::abs(evaluate_cost(p, problem, 4096, 1, 10) - 16.0) <= 0.01 * 16.0);
}

TEST_CASE("derived seeds are distinct per stream") {
  CHECK(derive_seed(0, 1) != derive_seed(0, 2));
  CHECK(derive_seed(1, 1) != derive_seed(0, 1));
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
}
