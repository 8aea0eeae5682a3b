#include "dynot/velocity_field.hpp"

#include "dynot/errors.hpp"
#include "dynot/fast_math.hpp"

#include <cmath>
#include <string>

namespace dynot {

namespace {

struct Cell {
  int left;
  double frac;
};

Cell locate(double t, const TimeGrid& grid) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("time " + std::to_string(t) + " outside [0, 1]");
  }
  const double u = t * grid.intervals;
  int k = static_cast<int>(std::floor(u));
  if (k >= grid.intervals) k = grid.intervals - 1;
  return {k, u - k};
}

// Per-net quantities shared by the point-wise routines.
struct NetPoint {
  Eigen::VectorXd act;    // tanh(W1 x + b1)
  Eigen::VectorXd slope;  // 1 - act^2
  Eigen::VectorXd curv;   // d slope / d pre = -2 act slope
  Eigen::VectorXd trace;  // c_h = sum_k W1(h,k) W2(k,h)
};

NetPoint net_point(const EffectiveNet& net, const Eigen::VectorXd& x) {
  NetPoint p;
  Eigen::VectorXd pre = net.w1 * x + net.b1;
  p.act = pre.unaryExpr([](double v) { return scalar_tanh(v); });
  p.slope = (1.0 - p.act.array().square()).matrix();
  p.curv = (-2.0 * p.act.array() * p.slope.array()).matrix();
  p.trace = net.w1.cwiseProduct(net.w2.transpose()).rowwise().sum();
  return p;
}

}  // namespace

double basis_weight(int index, double t, const TimeGrid& grid) {
  if (index < 0 || index > grid.intervals) {
    throw DomainError("basis index " + std::to_string(index) + " outside 0.." +
                      std::to_string(grid.intervals));
  }
  const Cell c = locate(t, grid);
  if (index == c.left) return 1.0 - c.frac;
  if (index == c.left + 1) return c.frac;
  return 0.0;
}

std::vector<BasisTerm> active_basis(double t, const TimeGrid& grid) {
  const Cell c = locate(t, grid);
  std::vector<BasisTerm> terms;
  terms.reserve(2);
  if (1.0 - c.frac != 0.0) terms.push_back({c.left, 1.0 - c.frac});
  if (c.frac != 0.0) terms.push_back({c.left + 1, c.frac});
  return terms;
}

std::vector<EffectiveNet> effective_nets(const ParameterVector& params, double t) {
  const auto& shape = params.shape();
  const auto basis = active_basis(t, TimeGrid{shape.intervals});
  std::vector<EffectiveNet> nets;
  if (shape.architecture == Architecture::Nodal) {
    nets.reserve(basis.size() * static_cast<std::size_t>(shape.width));
    for (const auto& b : basis) {
      for (int l = 0; l < shape.width; ++l) {
        EffectiveNet n;
        n.net = l;
        n.output_weight = b.weight;
        n.sources = {{b.index, 1.0}};
        n.w1 = params.w1(b.index, l);
        n.b1 = params.b1(b.index, l);
        n.w2 = params.w2(b.index, l);
        n.b2 = params.b2(b.index, l);
        nets.push_back(std::move(n));
      }
    }
  } else {
    nets.reserve(static_cast<std::size_t>(shape.width));
    for (int l = 0; l < shape.width; ++l) {
      EffectiveNet n;
      n.net = l;
      n.output_weight = 1.0;
      n.sources = basis;
      n.w1 = RowMajorMatrix::Zero(shape.hidden, shape.dim);
      n.b1 = Eigen::VectorXd::Zero(shape.hidden);
      n.w2 = RowMajorMatrix::Zero(shape.dim, shape.hidden);
      n.b2 = Eigen::VectorXd::Zero(shape.dim);
      for (const auto& b : basis) {
        n.w1 += b.weight * params.w1(b.index, l);
        n.b1 += b.weight * params.b1(b.index, l);
        n.w2 += b.weight * params.w2(b.index, l);
        n.b2 += b.weight * params.b2(b.index, l);
      }
      nets.push_back(std::move(n));
    }
  }
  return nets;
}

Eigen::VectorXd eval_velocity(const ParameterVector& params, const Eigen::VectorXd& x, double t) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(params.shape().dim);
  for (const auto& net : effective_nets(params, t)) {
    Eigen::VectorXd pre = net.w1 * x + net.b1;
    Eigen::VectorXd act = pre.unaryExpr([](double u) { return scalar_tanh(u); });
    v += net.output_weight * (net.w2 * act + net.b2);
  }
  return v;
}

Eigen::MatrixXd jacobian_x(const ParameterVector& params, const Eigen::VectorXd& x, double t) {
  return point_derivatives(params, x, t).jacobian;
}

double divergence(const ParameterVector& params, const Eigen::VectorXd& x, double t) {
  return point_derivatives(params, x, t).divergence;
}

Eigen::VectorXd grad_divergence(const ParameterVector& params, const Eigen::VectorXd& x,
                                double t) {
  return point_derivatives(params, x, t).grad_divergence;
}

PointDerivatives point_derivatives(const ParameterVector& params, const Eigen::VectorXd& x,
                                   double t) {
  const int d = params.shape().dim;
  PointDerivatives out;
  out.velocity = Eigen::VectorXd::Zero(d);
  out.jacobian = Eigen::MatrixXd::Zero(d, d);
  out.grad_divergence = Eigen::VectorXd::Zero(d);
  for (const auto& net : effective_nets(params, t)) {
    const NetPoint p = net_point(net, x);
    const double w = net.output_weight;
    out.velocity += w * (net.w2 * p.act + net.b2);
    out.jacobian += w * (net.w2 * p.slope.asDiagonal() * net.w1);
    out.grad_divergence += w * (net.w1.transpose() * p.trace.cwiseProduct(p.curv));
  }
  out.divergence = out.jacobian.trace();
  return out;
}

void accumulate_contractions(const ParameterVector& params, const Eigen::VectorXd& x, double t,
                             const Eigen::VectorXd& a, double velocity_coeff,
                             double divergence_coeff, const Eigen::MatrixXd& G,
                             double jacobian_coeff, Eigen::VectorXd& out) {
  const auto& shape = params.shape();
  const int d = shape.dim;
  const int h = shape.hidden;
  RowMajorMatrix gw1(h, d);
  Eigen::VectorXd gb1(h);
  RowMajorMatrix gw2(d, h);
  Eigen::VectorXd gb2(d);

  for (const auto& net : effective_nets(params, t)) {
    const NetPoint p = net_point(net, x);
    gw1.setZero();
    gb1.setZero();
    gw2.setZero();
    gb2.setZero();

    if (velocity_coeff != 0.0) {
      const Eigen::VectorXd g = (net.w2.transpose() * a).cwiseProduct(p.slope);
      gb2 += velocity_coeff * a;
      gw2 += velocity_coeff * (a * p.act.transpose());
      gb1 += velocity_coeff * g;
      gw1 += velocity_coeff * (g * x.transpose());
    }
    if (divergence_coeff != 0.0) {
      const Eigen::VectorXd cs = p.trace.cwiseProduct(p.curv);
      gw2 += divergence_coeff * (net.w1.transpose() * p.slope.asDiagonal());
      gw1 += divergence_coeff * (p.slope.asDiagonal() * net.w2.transpose() + cs * x.transpose());
      gb1 += divergence_coeff * cs;
    }
    if (jacobian_coeff != 0.0) {
      const RowMajorMatrix w2tg = net.w2.transpose() * G;  // H x d
      const Eigen::VectorXd e = w2tg.cwiseProduct(net.w1).rowwise().sum();
      const Eigen::VectorXd es = e.cwiseProduct(p.curv);
      gw2 += jacobian_coeff * ((G * net.w1.transpose()) * p.slope.asDiagonal());
      gw1 += jacobian_coeff * (p.slope.asDiagonal() * w2tg + es * x.transpose());
      gb1 += jacobian_coeff * es;
    }

    for (const auto& src : net.sources) {
      const double c = net.output_weight * src.weight;
      const auto base = static_cast<Eigen::Index>(
          (static_cast<std::size_t>(src.index) * static_cast<std::size_t>(shape.width) +
           static_cast<std::size_t>(net.net)) *
          shape.block_size());
      const Eigen::Index n1 = static_cast<Eigen::Index>(h) * d;
      Eigen::Map<RowMajorMatrix>(out.data() + base, h, d) += c * gw1;
      out.segment(base + n1, h) += c * gb1;
      Eigen::Map<RowMajorMatrix>(out.data() + base + n1 + h, d, h) += c * gw2;
      out.segment(base + 2 * n1 + h, d) += c * gb2;
    }
  }
}

AdjointContractions adjoint_contractions(const ParameterVector& params, const Eigen::VectorXd& x,
                                         double t, const Eigen::VectorXd& a,
                                         const Eigen::MatrixXd& G) {
  const auto& shape = params.shape();
  AdjointContractions out{ParameterVector(shape), ParameterVector(shape), ParameterVector(shape)};
  accumulate_contractions(params, x, t, a, 1.0, 0.0, G, 0.0, out.velocity.values());
  accumulate_contractions(params, x, t, a, 0.0, 1.0, G, 0.0, out.divergence.values());
  accumulate_contractions(params, x, t, a, 0.0, 0.0, G, 1.0, out.jacobian.values());
  return out;
}

BatchField evaluate_batch(const ParameterVector& params, const Eigen::MatrixXd& x, double t) {
  const int d = params.shape().dim;
  BatchField out{Eigen::MatrixXd::Zero(x.rows(), d), Eigen::VectorXd::Zero(x.rows())};
  for (const auto& net : effective_nets(params, t)) {
    Eigen::MatrixXd pre = x * net.w1.transpose();
    pre.rowwise() += net.b1.transpose();
    const Eigen::MatrixXd act = batch_tanh(pre);
    Eigen::MatrixXd v = act * net.w2.transpose();
    v.rowwise() += net.b2.transpose();
    out.velocity += net.output_weight * v;
    const Eigen::VectorXd trace = net.w1.cwiseProduct(net.w2.transpose()).rowwise().sum();
    out.divergence += net.output_weight * ((1.0 - act.array().square()).matrix() * trace);
  }
  return out;
}

double jacobian_norm_sq_sum(const ParameterVector& params, const Eigen::MatrixXd& y, double t) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < y.rows(); ++j) {
    total += jacobian_x(params, y.row(j).transpose(), t).squaredNorm();
  }
  return total;
}

// ---------------------------------------------------------------------------

TracedField::TracedField(ad::Tape& tape, const ParameterVector& params)
    : tape_(tape), shape_(params.shape()) {
  blocks_.reserve(static_cast<std::size_t>(shape_.basis_count() * shape_.width));
  for (int i = 0; i < shape_.basis_count(); ++i) {
    for (int l = 0; l < shape_.width; ++l) {
      NetVars v;
      v.w1 = tape_.parameter(Eigen::MatrixXd(params.w1(i, l)));
      v.b1 = tape_.parameter(Eigen::MatrixXd(params.b1(i, l).transpose()));
      v.w2 = tape_.parameter(Eigen::MatrixXd(params.w2(i, l)));
      v.b2 = tape_.parameter(Eigen::MatrixXd(params.b2(i, l).transpose()));
      blocks_.push_back(v);
    }
  }
}

ad::Var TracedField::trace_coeff(const NetVars& v) {
  return tape_.row_sum(tape_.mul(v.w1, tape_.transpose(v.w2)));
}

std::vector<TracedField::TracedNet> TracedField::nets_at(double t) {
  const auto basis = active_basis(t, TimeGrid{shape_.intervals});
  std::vector<TracedNet> nets;
  if (shape_.architecture == Architecture::Nodal) {
    for (const auto& b : basis) {
      for (int l = 0; l < shape_.width; ++l) {
        auto& vars = block(b.index, l);
        if (!vars.trace_coeff.valid()) vars.trace_coeff = trace_coeff(vars);
        nets.push_back({vars, b.weight, b.index * shape_.width + l});
      }
    }
    return nets;
  }
  std::vector<double> coeffs;
  for (const auto& b : basis) coeffs.push_back(b.weight);
  for (int l = 0; l < shape_.width; ++l) {
    std::vector<ad::Var> w1, b1, w2, b2;
    for (const auto& b : basis) {
      const auto& vars = block(b.index, l);
      w1.push_back(vars.w1);
      b1.push_back(vars.b1);
      w2.push_back(vars.w2);
      b2.push_back(vars.b2);
    }
    NetVars blended;
    blended.w1 = tape_.lincomb(w1, coeffs);
    blended.b1 = tape_.lincomb(b1, coeffs);
    blended.w2 = tape_.lincomb(w2, coeffs);
    blended.b2 = tape_.lincomb(b2, coeffs);
    blended.trace_coeff = trace_coeff(blended);
    nets.push_back({blended, 1.0, -1});
  }
  return nets;
}

TracedField::Output TracedField::evaluate(ad::Var x, double t) {
  const auto nets = nets_at(t);
  std::vector<ad::Var> outs, divs;
  std::vector<double> weights;
  for (const auto& n : nets) {
    const ad::Var act = tape_.tanh(tape_.affine(x, n.vars.w1, n.vars.b1));
    outs.push_back(tape_.affine(act, n.vars.w2, n.vars.b2));
    const ad::Var slope = tape_.add_scalar(tape_.scale(tape_.square(act), -1.0), 1.0);
    divs.push_back(tape_.matmul(slope, n.vars.trace_coeff));
    weights.push_back(n.output_weight);
  }
  return {tape_.lincomb(outs, weights), tape_.lincomb(divs, weights)};
}

ad::Var TracedField::jacobian_norm_sq_sum(ad::Var y, double t) {
  if (cached_y_ != y.id) {
    cached_y_ = y.id;
    slope_cache_.clear();
    pair_cache_.clear();
  }
  const auto nets = nets_at(t);
  auto slope_of = [&](const TracedNet& n) {
    if (n.key >= 0) {
      auto it = slope_cache_.find(n.key);
      if (it != slope_cache_.end()) return it->second;
    }
    const ad::Var act = tape_.tanh(tape_.affine(y, n.vars.w1, n.vars.b1));
    const ad::Var s = tape_.add_scalar(tape_.scale(tape_.square(act), -1.0), 1.0);
    if (n.key >= 0) slope_cache_[n.key] = s;
    return s;
  };
  auto pair_of = [&](const TracedNet& a, const TracedNet& b) {
    const bool cacheable = a.key >= 0 && b.key >= 0;
    if (cacheable) {
      auto it = pair_cache_.find({a.key, b.key});
      if (it != pair_cache_.end()) return it->second;
    }
    const ad::Var gram = tape_.mul(tape_.matmul(a.vars.w2, b.vars.w2, true, false),
                                   tape_.matmul(a.vars.w1, b.vars.w1, false, true));
    const ad::Var q = tape_.sum(tape_.mul(tape_.matmul(slope_of(a), gram), slope_of(b)));
    if (cacheable) pair_cache_[{a.key, b.key}] = q;
    return q;
  };

  std::vector<ad::Var> terms;
  std::vector<double> coeffs;
  for (std::size_t p = 0; p < nets.size(); ++p) {
    for (std::size_t q = p; q < nets.size(); ++q) {
      const auto& a = nets[p].key <= nets[q].key ? nets[p] : nets[q];
      const auto& b = nets[p].key <= nets[q].key ? nets[q] : nets[p];
      terms.push_back(pair_of(a, b));
      coeffs.push_back((p == q ? 1.0 : 2.0) * nets[p].output_weight * nets[q].output_weight);
    }
  }
  return tape_.lincomb(terms, coeffs);
}

ParameterVector TracedField::gather_gradient() const {
  ParameterVector grad(shape_);
  for (int i = 0; i < shape_.basis_count(); ++i) {
    for (int l = 0; l < shape_.width; ++l) {
      const auto& v = blocks_[static_cast<std::size_t>(i * shape_.width + l)];
      grad.w1(i, l) = tape_.grad(v.w1);
      grad.b1(i, l) = tape_.grad(v.b1).transpose();
      grad.w2(i, l) = tape_.grad(v.w2);
      grad.b2(i, l) = tape_.grad(v.b2).transpose();
    }
  }
  return grad;
}

}  // namespace dynot
