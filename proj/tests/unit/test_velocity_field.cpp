#include "doctest.h"
#include "fixtures.hpp"

#include "dynot/errors.hpp"
#include "dynot/velocity_field.hpp"

#include <sstream>

using namespace dynot;

namespace {

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-12);
}

Eigen::MatrixXd fd_jacobian(const ParameterVector& p, const Eigen::VectorXd& x, double t,
                            double h = 1e-5) {
  const int d = static_cast<int>(x.size());
  Eigen::MatrixXd J(d, d);
  for (int m = 0; m < d; ++m) {
    Eigen::VectorXd up = x, down = x;
    up[m] += h;
    down[m] -= h;
    J.col(m) = (eval_velocity(p, up, t) - eval_velocity(p, down, t)) / (2.0 * h);
  }
  return J;
}

Eigen::VectorXd fd_grad_div(const ParameterVector& p, const Eigen::VectorXd& x, double t,
                            double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index m = 0; m < x.size(); ++m) {
    Eigen::VectorXd up = x, down = x;
    up[m] += h;
    down[m] -= h;
    g[m] = (divergence(p, up, t) - divergence(p, down, t)) / (2.0 * h);
  }
  return g;
}

// Central difference in theta of a scalar function of the parameters.
template <class F>
Eigen::VectorXd fd_theta(const ParameterVector& p, F f, double h = 1e-5) {
  ParameterVector probe = p;
  Eigen::VectorXd g(p.values().size());
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    const double v = p.values()[k];
    probe.values()[k] = v + h;
    const double up = f(probe);
    probe.values()[k] = v - h;
    const double down = f(probe);
    probe.values()[k] = v;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

ParameterVector constant_field(const NetworkShape& shape, const Eigen::VectorXd& c) {
  ParameterVector p(shape);
  for (int i = 0; i < shape.basis_count(); ++i) p.b2(i, 0) = c;
  return p;
}

}  // namespace

TEST_CASE("parameter layout") {
  const NetworkShape shape{3, 4, 2, 5, Architecture::Nodal};
  CHECK(shape.size() == 2u * 5u * (2u * 3u * 5u + 5u + 3u));
  ParameterVector p = testing::random_params(shape, 1);
  CHECK(p.offset(0, 0, Role::W1) == 0u);
  CHECK(p.offset(0, 0, Role::B1) == 15u);
  CHECK(p.offset(0, 0, Role::W2) == 20u);
  CHECK(p.offset(0, 0, Role::B2) == 35u);
  CHECK(p.offset(0, 1, Role::W1) == shape.block_size());
  CHECK(p.offset(1, 0, Role::W1) == 2u * shape.block_size());
  CHECK(p.offset(2, 1, Role::W2, 1, 3) == p.block_offset(2, 1) + 20u + 1u * 5u + 3u);
  CHECK(p.w2(2, 1)(1, 3) == p.values()[static_cast<Eigen::Index>(p.offset(2, 1, Role::W2, 1, 3))]);
}

TEST_CASE("checkpoint round trip is exact") {
  const NetworkShape shape{2, 3, 2, 4, Architecture::TimeWeights};
  const ParameterVector p = testing::random_params(shape, 8);
  std::stringstream buf;
  write_checkpoint(buf, p);
  const ParameterVector q = read_checkpoint(buf);
  CHECK(q.shape() == shape);
  CHECK(q.values() == p.values());
  std::stringstream truncated(buf.str().substr(0, buf.str().size() / 2));
  CHECK_THROWS_AS(read_checkpoint(truncated), ConfigError);
}

TEST_CASE("initialization is scaled uniform with zero biases") {
  const NetworkShape shape{4, 2, 2, 9, Architecture::Nodal};
  const ParameterVector p = initialize_parameters(shape, 3);
  CHECK(p.w1(1, 1).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0));
  CHECK(p.w2(1, 1).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(9.0));
  CHECK(p.b1(2, 0).isZero());
  CHECK(p.b2(0, 1).isZero());
  CHECK(initialize_parameters(shape, 3).values() == p.values());
}

TEST_CASE("hat basis") {
  const TimeGrid grid{5};
  for (int i = 0; i <= 5; ++i) CHECK(basis_weight(i, grid.node(i), grid) == 1.0);
  for (int i = 1; i <= 5; ++i) CHECK(basis_weight(i, grid.node(i - 1), grid) == 0.0);
  CHECK(basis_weight(1, 0.1, grid) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(basis_weight(0, 1.5, grid), DomainError);
  CHECK_THROWS_AS(basis_weight(0, -0.01, grid), DomainError);
  for (int k = 0; k <= 1000; ++k) {
    const double t = k / 1000.0;
    double total = 0.0;
    for (int i = 0; i <= 5; ++i) {
      const double w = basis_weight(i, t, grid);
      total += w;
      if (std::abs(t - grid.node(i)) >= 0.2) CHECK(w == 0.0);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    CHECK(active_basis(t, grid).size() <= 2u);
  }
}

TEST_CASE("velocity of special parameter sets") {
  const NetworkShape shape{3, 5, 2, 4, Architecture::Nodal};
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(3, -1.0, 2.0);
  CHECK(eval_velocity(ParameterVector(shape), x, 0.37).isZero());

  const Eigen::Vector3d c(1.5, -2.0, 0.25);
  ParameterVector single(shape);
  single.b2(3, 0) = c;
  CHECK(eval_velocity(single, x, 0.6).isApprox(c, 1e-15));
  CHECK(eval_velocity(single, x, 0.2).isZero());

  const ParameterVector constant = constant_field(shape, c);
  for (double t : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    CHECK((eval_velocity(constant, x, t) - c).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("jacobian, divergence and grad divergence against finite differences") {
  for (const auto arch : {Architecture::Nodal, Architecture::TimeWeights}) {
    INFO("architecture " << to_string(arch));
    const NetworkShape shape3{3, 4, 2, 6, arch};
    const ParameterVector p = testing::random_params(shape3, 21);
    const Eigen::Vector3d x(0.3, -0.8, 1.1);
    for (double t : {0.0, 0.3, 0.55, 1.0}) {
      const Eigen::MatrixXd J = jacobian_x(p, x, t);
      CHECK(rel_err(J, fd_jacobian(p, x, t)) <= 1e-6);
      CHECK(std::abs(divergence(p, x, t) - J.trace()) <= 1e-12);
    }
    const NetworkShape shape2{2, 4, 2, 6, arch};
    const ParameterVector q = testing::random_params(shape2, 22);
    const Eigen::Vector2d y(-0.4, 0.9);
    for (double t : {0.1, 0.5, 0.95}) {
      CHECK(rel_err(grad_divergence(q, y, t), fd_grad_div(q, y, t)) <= 1e-5);
      const PointDerivatives pd = point_derivatives(q, y, t);
      CHECK(rel_err(pd.velocity, eval_velocity(q, y, t)) <= 1e-14);
      CHECK(rel_err(pd.jacobian, jacobian_x(q, y, t)) <= 1e-14);
    }
  }
  const NetworkShape shape{2, 2, 1, 3, Architecture::Nodal};
  const Eigen::Vector2d x(0.5, 0.5);
  CHECK(jacobian_x(ParameterVector(shape), x, 0.4).isZero());
  CHECK(divergence(ParameterVector(shape), x, 0.4) == 0.0);
  CHECK(grad_divergence(ParameterVector(shape), x, 0.4).isZero());
  const ParameterVector constant = constant_field(shape, Eigen::Vector2d(1.0, 2.0));
  CHECK(jacobian_x(constant, x, 0.4).isZero());
  CHECK(grad_divergence(constant, x, 0.4).isZero());
}

TEST_CASE("adjoint contractions") {
  for (const auto arch : {Architecture::Nodal, Architecture::TimeWeights}) {
    INFO("architecture " << to_string(arch));
    const NetworkShape shape{2, 3, 2, 4, arch};
    const ParameterVector p = testing::random_params(shape, 5);
    const Eigen::Vector2d x(0.7, -0.2);
    const Eigen::Vector2d a(1.3, -0.6);
    Eigen::Matrix2d G;
    G << 0.4, -1.1, 0.8, 0.25;
    const double t = 0.45;
    const AdjointContractions c = adjoint_contractions(p, x, t, a, G);
    const auto fa = fd_theta(p, [&](const ParameterVector& q) { return a.dot(eval_velocity(q, x, t)); });
    const auto fdiv = fd_theta(p, [&](const ParameterVector& q) { return divergence(q, x, t); });
    const auto fG = fd_theta(p, [&](const ParameterVector& q) {
      return (jacobian_x(q, x, t).array() * G.array()).sum();
    });
    CHECK(rel_err(c.velocity.values(), fa) <= 1e-5);
    CHECK(rel_err(c.divergence.values(), fdiv) <= 1e-5);
    CHECK(rel_err(c.jacobian.values(), fG) <= 1e-5);
  }

  const NetworkShape shape{2, 5, 2, 3, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 6);
  const Eigen::Vector2d x(0.1, 0.2);
  const AdjointContractions zero =
      adjoint_contractions(p, x, 0.3, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero());
  CHECK(zero.velocity.values().isZero());
  CHECK(zero.jacobian.values().isZero());

  const Eigen::Vector2d a(2.0, -3.0);
  const double t = 0.3;  // phi_1 = 0.5, phi_2 = 0.5
  const AdjointContractions c = adjoint_contractions(p, x, t, a, Eigen::Matrix2d::Zero());
  for (int i = 0; i <= 5; ++i) {
    const double phi = basis_weight(i, t, TimeGrid{5});
    for (int l = 0; l < 2; ++l) {
      const ConstVectorMap b2 = c.velocity.b2(i, l);
      CHECK((b2 - phi * a).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("nodal field is piecewise linear in time, the blended-weight field is not") {
  const Eigen::Vector2d x(0.8, -0.5);
  const NetworkShape nodal{2, 5, 2, 6, Architecture::Nodal};
  const ParameterVector p = testing::random_params(nodal, 14, 1.0);
  const double t1 = 0.42, t2 = 0.58;  // one interval of the M = 5 grid
  const Eigen::VectorXd mid = eval_velocity(p, x, 0.5 * (t1 + t2));
  const Eigen::VectorXd lin = 0.5 * (eval_velocity(p, x, t1) + eval_velocity(p, x, t2));
  CHECK((mid - lin).cwiseAbs().maxCoeff() <= 1e-12);

  NetworkShape blended = nodal;
  blended.architecture = Architecture::TimeWeights;
  const ParameterVector q(blended, p.values());
  const Eigen::VectorXd qmid = eval_velocity(q, x, 0.5 * (t1 + t2));
  const Eigen::VectorXd qlin = 0.5 * (eval_velocity(q, x, t1) + eval_velocity(q, x, t2));
  CHECK((qmid - qlin).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("batch evaluation agrees with pointwise evaluation") {
  const NetworkShape shape{3, 5, 2, 5, Architecture::Nodal};
  const ParameterVector p = testing::random_params(shape, 30);
  Eigen::MatrixXd xs = Eigen::MatrixXd::Random(7, 3);
  const double t = 0.61;
  const BatchField b = evaluate_batch(p, xs, t);
  double jac = 0.0;
  for (int i = 0; i < 7; ++i) {
    const Eigen::VectorXd xi = xs.row(i).transpose();
    CHECK((b.velocity.row(i).transpose() - eval_velocity(p, xi, t)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(std::abs(b.divergence[i] - divergence(p, xi, t)) <= 1e-13);
    jac += jacobian_x(p, xi, t).squaredNorm();
  }
  CHECK(jacobian_norm_sq_sum(p, xs, t) == doctest::Approx(jac).epsilon(1e-12));
}
