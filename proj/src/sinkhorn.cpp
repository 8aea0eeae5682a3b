#include "dynot/sinkhorn.hpp"

#include "dynot/errors.hpp"

#include <cmath>

namespace dynot {

PointCloud PointCloud::uniform(Eigen::MatrixXd points) {
  const Eigen::Index n = points.rows();
  return {std::move(points), Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n))};
}

void PointCloud::validate() const {
  if (points.rows() < 1 || weights.size() != points.rows()) {
    throw DomainError("point cloud: need one weight per point");
  }
  if ((weights.array() < 0.0).any()) throw DomainError("point cloud: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw DomainError("point cloud: weights must sum to 1");
}

Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw DomainError("squared_distance_matrix: dimension mismatch");
  Eigen::MatrixXd c = -2.0 * a * b.transpose();
  c.colwise() += a.rowwise().squaredNorm();
  c.rowwise() += b.rowwise().squaredNorm().transpose();
  return c.cwiseMax(0.0);
}

namespace {

// log sum_j exp(m(i, j)) for every row i.
Eigen::ArrayXd row_lse(const Eigen::ArrayXXd& m) {
  const Eigen::ArrayXd mx = m.rowwise().maxCoeff();
  return mx + (m.colwise() - mx).exp().rowwise().sum().log();
}

Eigen::ArrayXd col_lse(const Eigen::ArrayXXd& m) {
  const Eigen::RowVectorXd mx = m.colwise().maxCoeff().matrix();
  return (mx.array() + (m.rowwise() - mx.array()).exp().colwise().sum().log()).transpose();
}

Eigen::MatrixXd coupling_of(const Eigen::ArrayXXd& c, const Eigen::ArrayXd& f,
                            const Eigen::ArrayXd& g, double eps) {
  Eigen::ArrayXXd k = (-c).colwise() + f;
  k.rowwise() += g.transpose();
  return (k / eps).exp().matrix();
}

}  // namespace

SinkhornResult sinkhorn(const PointCloud& source, const PointCloud& target,
                        const SinkhornOptions& options) {
  source.validate();
  target.validate();
  if (options.max_iterations < 1 || !(options.tolerance > 0.0)) {
    throw DomainError("sinkhorn: need max_iterations >= 1 and tolerance > 0");
  }
  const Eigen::ArrayXXd c = squared_distance_matrix(source.points, target.points).array();
  const double eps = options.epsilon > 0.0 ? options.epsilon : 1e-2 * c.mean();
  if (!(eps > 0.0)) throw DomainError("sinkhorn: epsilon must be > 0");

  const Eigen::ArrayXd log_a = source.weights.array().log();
  const Eigen::ArrayXd log_b = target.weights.array().log();
  const Eigen::ArrayXXd scaled = -c / eps;
  Eigen::ArrayXd f = Eigen::ArrayXd::Zero(c.rows());
  Eigen::ArrayXd g = Eigen::ArrayXd::Zero(c.cols());

  SinkhornResult out;
  out.epsilon = eps;
  // Each sweep updates g (exact column marginal), then measures the row
  // marginal through the row log-sum-exp needed for the next f update.
  Eigen::ArrayXd lse_rows = row_lse(scaled.rowwise() + (g / eps).transpose());
  for (int it = 1; it <= options.max_iterations; ++it) {
    f = eps * (log_a - lse_rows);
    g = eps * (log_b - col_lse(scaled.colwise() + f / eps));
    lse_rows = row_lse(scaled.rowwise() + (g / eps).transpose());
    const Eigen::ArrayXd row_mass = (f / eps + lse_rows).exp();
    out.violation = (row_mass - source.weights.array()).abs().sum();
    out.iterations = it;
    if (options.record_history) {
      out.cost_history.push_back((coupling_of(c, f, g, eps).array() * c).sum());
      out.dual_history.push_back((source.weights.array() * f).sum() +
                                 (target.weights.array() * g).sum());
    }
    if (out.violation <= options.tolerance) {
      out.converged = true;
      break;
    }
  }
  out.coupling = coupling_of(c, f, g, eps);
  out.cost = (out.coupling.array() * c).sum();
  return out;
}

}  // namespace dynot
