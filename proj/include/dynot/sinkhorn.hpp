#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dynot {

/// Weighted point cloud; rows of `points` are locations.
struct PointCloud {
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;

  static PointCloud uniform(Eigen::MatrixXd points);
  void validate() const;
};

/// C(i, j) = |a_i - b_j|^2.
Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct SinkhornOptions {
  double epsilon = 0.0;  // <= 0 selects 1e-2 * mean(C)
  int max_iterations = 10000;
  double tolerance = 1e-8;  // L1 violation of the row marginal
  bool record_history = false;
};

struct SinkhornResult {
  double cost = 0.0;  // sum_ij gamma_ij C_ij, entropy excluded
  double violation = 0.0;
  int iterations = 0;
  bool converged = false;
  double epsilon = 0.0;
  std::vector<double> cost_history;  // cost after each sweep when requested
  std::vector<double> dual_history;  // <a, f> + <b, g> after each sweep when requested
  Eigen::MatrixXd coupling;
};

/// Entropic optimal transport with squared Euclidean cost by log-domain
/// Sinkhorn sweeps. Non-convergence is reported through `converged` and the
/// achieved `violation`.
SinkhornResult sinkhorn(const PointCloud& source, const PointCloud& target,
                        const SinkhornOptions& options = {});

}  // namespace dynot
