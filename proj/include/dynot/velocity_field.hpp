#pragma once

#include "dynot/params.hpp"
#include "dynot/tape.hpp"

#include <Eigen/Dense>

#include <map>
#include <utility>
#include <vector>

namespace dynot {

/// Uniform time grid t_i = i / M on [0, 1].
struct TimeGrid {
  int intervals = 5;
  double node(int i) const { return static_cast<double>(i) / intervals; }
};

/// Piecewise-linear hat function of node i evaluated at t in [0, 1].
double basis_weight(int index, double t, const TimeGrid& grid);

struct BasisTerm {
  int index;
  double weight;
};

/// Basis functions with nonzero weight at t (one or two entries).
std::vector<BasisTerm> active_basis(double t, const TimeGrid& grid);

/// A two-layer tanh net W2 tanh(W1 x + b1) + b2 contributing
/// `output_weight * net(x)` to the field at one time instant. `sources` lists
/// the parameter blocks (basis index, blend coefficient) its weights came from.
struct EffectiveNet {
  int net = 0;
  double output_weight = 1.0;
  std::vector<BasisTerm> sources;
  RowMajorMatrix w1;
  Eigen::VectorXd b1;
  RowMajorMatrix w2;
  Eigen::VectorXd b2;
};

std::vector<EffectiveNet> effective_nets(const ParameterVector& params, double t);

Eigen::VectorXd eval_velocity(const ParameterVector& params, const Eigen::VectorXd& x, double t);
Eigen::MatrixXd jacobian_x(const ParameterVector& params, const Eigen::VectorXd& x, double t);
double divergence(const ParameterVector& params, const Eigen::VectorXd& x, double t);
Eigen::VectorXd grad_divergence(const ParameterVector& params, const Eigen::VectorXd& x, double t);

/// Everything the adjoint equation needs at one point.
struct PointDerivatives {
  Eigen::VectorXd velocity;
  Eigen::MatrixXd jacobian;  // J(k, m) = d v_k / d x_m
  double divergence = 0.0;
  Eigen::VectorXd grad_divergence;
};

PointDerivatives point_derivatives(const ParameterVector& params, const Eigen::VectorXd& x,
                                   double t);

struct AdjointContractions {
  ParameterVector velocity;    // a^T dv/dtheta
  ParameterVector divergence;  // d(div v)/dtheta
  ParameterVector jacobian;    // <d(grad v)/dtheta, G>
};

AdjointContractions adjoint_contractions(const ParameterVector& params, const Eigen::VectorXd& x,
                                         double t, const Eigen::VectorXd& a,
                                         const Eigen::MatrixXd& G);

/// out += velocity_coeff * a^T v_theta + divergence_coeff * (div v)_theta
///        + jacobian_coeff * <(grad v)_theta, G>, touching only active blocks.
/// A zero coefficient skips that term (G may then be empty).
void accumulate_contractions(const ParameterVector& params, const Eigen::VectorXd& x, double t,
                             const Eigen::VectorXd& a, double velocity_coeff,
                             double divergence_coeff, const Eigen::MatrixXd& G,
                             double jacobian_coeff, Eigen::VectorXd& out);

/// Velocity (n x d) and divergence (n) at a batch of points (rows of x).
struct BatchField {
  Eigen::MatrixXd velocity;
  Eigen::VectorXd divergence;
};

BatchField evaluate_batch(const ParameterVector& params, const Eigen::MatrixXd& x, double t);

/// sum_j |grad v(y_j, t)|_F^2 over the rows of y.
double jacobian_norm_sq_sum(const ParameterVector& params, const Eigen::MatrixXd& y, double t);

/// The velocity field recorded on a tape. Parameters become tape leaves;
/// after `Tape::backward`, `gather_gradient` returns dLoss/dtheta in
/// canonical layout.
class TracedField {
 public:
  TracedField(ad::Tape& tape, const ParameterVector& params);

  struct Output {
    ad::Var velocity;    // n x d
    ad::Var divergence;  // n x 1
  };

  Output evaluate(ad::Var x, double t);

  /// 1x1 node holding sum_j |grad v(y_j, t)|_F^2 for the rows of y.
  ad::Var jacobian_norm_sq_sum(ad::Var y, double t);

  ParameterVector gather_gradient() const;

 private:
  struct NetVars {
    ad::Var w1, b1, w2, b2;  // H x d, 1 x H, d x H, 1 x d
    ad::Var trace_coeff;     // H x 1, c_h = sum_k W1(h,k) W2(k,h)
  };
  struct TracedNet {
    NetVars vars;
    double output_weight;
    int key;  // block id for nodal caching, -1 for blended nets
  };

  std::vector<TracedNet> nets_at(double t);
  ad::Var trace_coeff(const NetVars& v);
  NetVars& block(int basis, int net) {
    return blocks_[static_cast<std::size_t>(basis * shape_.width + net)];
  }

  ad::Tape& tape_;
  NetworkShape shape_;
  std::vector<NetVars> blocks_;

  // Per regularizer-sample set caches for the nodal architecture.
  int cached_y_ = -1;
  std::map<int, ad::Var> slope_cache_;                  // block -> 1 - tanh^2 (s x H)
  std::map<std::pair<int, int>, ad::Var> pair_cache_;   // blocks -> sum_j s_a^T G_ab s_b
};

}  // namespace dynot
