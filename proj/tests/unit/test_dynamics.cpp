#include "doctest.h"
#include "fixtures.hpp"

#include "dynot/dynamics.hpp"
#include "dynot/errors.hpp"
#include "dynot/velocity_field.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

using namespace dynot;

namespace {

struct Scalar {
  double v;
};
Scalar operator+(Scalar a, Scalar b) { return {a.v + b.v}; }
Scalar operator*(double s, Scalar a) { return {s * a.v}; }

double decay_error(int steps) {
  const auto rhs = [](Scalar y, double) { return Scalar{-y.v}; };
  Scalar y{1.0};
  const double h = 1.0 / steps;
  for (int n = 0; n < steps; ++n) y = rk4_step(rhs, y, n * h, h);
  return std::abs(y.v - std::exp(-1.0));
}

ParameterVector constant_field(const NetworkShape& shape, const Eigen::VectorXd& c) {
  ParameterVector p(shape);
  for (int i = 0; i < shape.basis_count(); ++i) p.b2(i, 0) = c;
  return p;
}

}  // namespace

TEST_CASE("RK4 on exponential decay") {
  // One classical RK4 step multiplies by the degree-4 Taylor polynomial of
  // exp(-h), so ten steps land exactly on that polynomial to the tenth power.
  const double h = 0.1;
  const double amplification = 1.0 - h + h * h / 2.0 - h * h * h / 6.0 + h * h * h * h / 24.0;
  const double predicted = std::abs(std::pow(amplification, 10) - std::exp(-1.0));
  MESSAGE("RK4 error at h = 0.1: " << decay_error(10) << ", predicted " << predicted);
  CHECK(std::abs(decay_error(10) - predicted) <= 1e-15);
  CHECK(decay_error(10) <= 4e-7);
  CHECK(decay_error(20) <= 1e-7);
  std::vector<double> logh, loge;
  for (int n : {10, 20, 40, 80, 160}) {
    logh.push_back(std::log(1.0 / n));
    loge.push_back(std::log(decay_error(n)));
  }
  const double mh = std::accumulate(logh.begin(), logh.end(), 0.0) / 5.0;
  const double me = std::accumulate(loge.begin(), loge.end(), 0.0) / 5.0;
  double sxy = 0.0, sxx = 0.0;
  for (int k = 0; k < 5; ++k) {
    sxy += (logh[k] - mh) * (loge[k] - me);
    sxx += (logh[k] - mh) * (logh[k] - mh);
  }
  const double slope = sxy / sxx;
  MESSAGE("RK4 slope " << slope);
  CHECK(slope >= 3.8);

  const auto constant = [](Scalar, double) { return Scalar{2.5}; };
  CHECK(rk4_step(constant, Scalar{1.0}, 0.0, 0.1).v == doctest::Approx(1.25).epsilon(1e-15));
}

TEST_CASE("characteristic right-hand side") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const Eigen::Vector2d c(0.5, -1.0);
  ParticleState s{Eigen::Vector2d(0.1, 0.2), -1.0, -2.0};
  const ParticleState dc = characteristic_rhs(constant_field(shape, c), s, 0.3);
  CHECK(dc.z.isApprox(c));
  CHECK(dc.log_rho == 0.0);
  CHECK(*dc.log_mu == 0.0);
  const ParticleState d0 = characteristic_rhs(ParameterVector(shape), s, 0.3);
  CHECK(d0.z.isZero());
  const ParameterVector p = testing::random_params(shape, 2);
  const ParticleState dr = characteristic_rhs(p, s, 0.3);
  CHECK(std::abs(dr.log_rho + jacobian_x(p, s.z, 0.3).trace()) <= 1e-12);
  CHECK(*dr.log_mu == dr.log_rho);
}

TEST_CASE("forward integration of simple fields") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(6, 2);
  const Eigen::VectorXd lr0 = Eigen::VectorXd::LinSpaced(6, -3.0, -1.0);
  const Eigen::Vector2d c(1.5, -0.5);
  const TrajectoryBatch b = integrate_forward(constant_field(shape, c), x0, lr0, std::nullopt, 10);
  CHECK(b.points() == 21);
  CHECK(b.positions.front() == x0);
  CHECK(b.times[1] == doctest::Approx(0.05));
  const Eigen::MatrixXd expected = x0.rowwise() + c.transpose();
  CHECK((b.positions.back() - expected).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((b.log_rho.back() - lr0).cwiseAbs().maxCoeff() <= 1e-15);

  const TrajectoryBatch z = integrate_forward(ParameterVector(shape), x0, lr0, lr0, 10);
  for (int p = 0; p < z.points(); ++p) {
    CHECK(z.positions[static_cast<std::size_t>(p)] == x0);
    CHECK(importance_weights(z, p).isApprox(Eigen::VectorXd::Constant(6, 1.0 / 6.0)));
  }
  CHECK(importance_weights(b, 3).isApprox(Eigen::VectorXd::Constant(6, 1.0 / 6.0)));
  CHECK_THROWS_AS(integrate_forward(ParameterVector(shape), x0, lr0, std::nullopt, 7), ConfigError);
}

TEST_CASE("stored velocities are the field at the stored states") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 4);
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(4, 2);
  const TrajectoryBatch b =
      integrate_forward(p, x0, Eigen::VectorXd::Zero(4), std::nullopt, 10);
  for (int k : {0, 7, 20}) {
    const auto idx = static_cast<std::size_t>(k);
    const BatchField f = evaluate_batch(p, b.positions[idx], b.times[idx]);
    CHECK((f.velocity - b.velocities[idx]).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("forward then backward returns to the start") {
  const NetworkShape shape{2, 5, 2, 6, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 12);
  const int steps = 20;
  const double h = 1.0 / (2 * steps);
  const auto rhs = [&](const ParticleState& s, double t) { return characteristic_rhs(p, s, t); };
  ParticleState s{Eigen::Vector2d(0.4, -0.3), 0.0, std::nullopt};
  const ParticleState start = s;
  for (int n = 0; n < 2 * steps; ++n) s = rk4_step(rhs, s, n * h, h);
  for (int n = 2 * steps; n > 0; --n) s = rk4_step(rhs, s, n * h, -h);
  CHECK((s.z - start.z).cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(std::abs(s.log_rho - start.log_rho) <= 1e-8);
}

TEST_CASE("log density equals minus the integrated divergence along the same stages") {
  const NetworkShape shape{2, 5, 2, 6, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 13);
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(3, 2);
  const int steps = 10;
  const TrajectoryBatch b = integrate_forward(p, x0, Eigen::VectorXd::Zero(3), std::nullopt, steps);
  const double h = 1.0 / (2 * steps);
  for (int i = 0; i < 3; ++i) {
    // Replay the RK4 stages of the position and accumulate the divergence with the same weights.
    Eigen::VectorXd z = x0.row(i).transpose();
    double integral = 0.0;
    for (int n = 0; n < 2 * steps; ++n) {
      const double t = n * h;
      const Eigen::VectorXd k1 = eval_velocity(p, z, t);
      const double d1 = divergence(p, z, t);
      const Eigen::VectorXd z2 = z + 0.5 * h * k1;
      const Eigen::VectorXd k2 = eval_velocity(p, z2, t + 0.5 * h);
      const double d2 = divergence(p, z2, t + 0.5 * h);
      const Eigen::VectorXd z3 = z + 0.5 * h * k2;
      const Eigen::VectorXd k3 = eval_velocity(p, z3, t + 0.5 * h);
      const double d3 = divergence(p, z3, t + 0.5 * h);
      const Eigen::VectorXd z4 = z + h * k3;
      const Eigen::VectorXd k4 = eval_velocity(p, z4, t + h);
      const double d4 = divergence(p, z4, t + h);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      integral += (h / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    }
    CHECK(std::abs(b.log_rho.back()[i] + integral) <= 1e-10);
    CHECK((b.positions.back().row(i).transpose() - z).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("particle order does not matter") {
  const NetworkShape shape{3, 5, 2, 4, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 14);
  const Eigen::MatrixXd x0 = Eigen::MatrixXd::Random(5, 3);
  const Eigen::VectorXd lr0 = Eigen::VectorXd::Random(5);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const TrajectoryBatch a = integrate_forward(p, x0, lr0, std::nullopt, 10);
  const TrajectoryBatch b = integrate_forward(p, perm * x0, perm * lr0, std::nullopt, 10);
  CHECK(((perm * a.positions.back()) - b.positions.back()).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(((perm * a.log_rho.back()) - b.log_rho.back()).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("mass is conserved along characteristics in 1-d") {
  const NetworkShape shape{1, 5, 2, 8, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 15, 0.4);
  const Density rho0(GaussianSpec::isotropic(Eigen::VectorXd::Zero(1), 0.5));
  const int n = 401;
  const double dx = 1e-3;
  Eigen::MatrixXd x0(n, 1);
  for (int i = 0; i < n; ++i) x0(i, 0) = -2.0 + i * (4.0 / (n - 1));
  Eigen::MatrixXd plus = x0.array() + dx, minus = x0.array() - dx;
  const TrajectoryBatch b = integrate_forward(p, x0, rho0, nullptr, 10);
  const TrajectoryBatch bp = integrate_forward(p, plus, rho0, nullptr, 10);
  const TrajectoryBatch bm = integrate_forward(p, minus, rho0, nullptr, 10);
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dzdx = (bp.positions.back()(i, 0) - bm.positions.back()(i, 0)) / (2.0 * dx);
    const double lhs = std::exp(b.log_rho.back()[i]) * dzdx;
    const double rhs = rho0.pdf(x0.row(i).transpose());
    worst = std::max(worst, std::abs(lhs - rhs) / rhs);
  }
  MESSAGE("mass conservation rel err " << worst);
  CHECK(worst <= 1e-3);
}

TEST_CASE("importance weights") {
  const NetworkShape shape{2, 5, 2, 4, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 16);
  const Density rho0(GaussianSpec::isotropic(Eigen::Vector2d::Zero(), 1.0));
  const Density mu0(GaussianSpec::isotropic(Eigen::Vector2d(0.3, 0.0), 1.5));
  const int r = 4096;
  const Eigen::MatrixXd x0 = mu0.sample(r, 21);
  const TrajectoryBatch b = integrate_forward(p, x0, rho0, &mu0, 10);
  const Eigen::VectorXd w0 = importance_weights(b, 0);
  // w_i(0) mu_0 / rho_0 = 1/r per particle.
  double exact = 0.0;
  for (int i = 0; i < r; ++i) {
    const Eigen::VectorXd x = x0.row(i).transpose();
    exact += w0[i] * std::exp(mu0.log_pdf(x) - rho0.log_pdf(x));
  }
  CHECK(exact == doctest::Approx(1.0).epsilon(1e-12));
  // The weights themselves estimate E_mu[rho/mu] = 1.
  const Eigen::ArrayXd ratio = w0.array() * r;
  const double se = std::sqrt((ratio - ratio.mean()).square().sum() / (r - 1) / r);
  CHECK(std::abs(w0.sum() - 1.0) <= 3.0 * se);
  // Transported unchanged along characteristics.
  CHECK((importance_weights(b, 20) - w0).cwiseAbs().maxCoeff() <= 1e-12 * w0.maxCoeff());
}

TEST_CASE("non-finite states name the particle") {
  const NetworkShape shape{1, 1, 1, 1, Architecture::Nodal};
  ParameterVector p(shape);
  p.b2(0, 0)[0] = 1e308;
  p.b2(1, 0)[0] = 1e308;
  Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(2, 1);
  x0(1, 0) = 1e308;
  try {
    integrate_forward(p, x0, Eigen::VectorXd::Zero(2), std::nullopt, 2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("particle") != std::string::npos);
  }
}

TEST_CASE("trajectory csv layout") {
  const NetworkShape shape{2, 1, 1, 2, Architecture::Nodal};
  const TrajectoryBatch b = integrate_forward(ParameterVector(shape), Eigen::MatrixXd::Zero(3, 2),
                                              Eigen::VectorXd::Zero(3), std::nullopt, 2);
  std::ostringstream out;
  write_trajectory_csv(out, b, 2);
  const std::string s = out.str();
  CHECK(s.rfind("particle_id,t,z_1,z_2,log_rho\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 2 * 5);
}
