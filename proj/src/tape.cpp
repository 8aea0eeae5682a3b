#include "dynot/tape.hpp"

#include "dynot/errors.hpp"
#include "dynot/fast_math.hpp"

#include <sstream>
#include <stdexcept>

namespace dynot::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Tanh: return "tanh";
    case Op::Mul: return "mul";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::RowSum: return "row_sum";
    case Op::Log: return "log";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::LinComb: return "lincomb";
    case Op::RowFunction: return "row_function";
  }
  return "?";
}

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string("tape: ") + op_name(op) + ": " + detail);
}

}  // namespace

Var Tape::push(Node n) {
  if (!n.value.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite value produced by tape node #" << nodes_.size() << " (" << op_name(n.op);
    if (n.fn) msg << " '" << n.fn->name << "'";
    msg << ")";
    throw NumericError(msg.str());
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("tape: invalid variable handle");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const auto& m = node(v).value;
  if (m.size() != 1) throw std::invalid_argument("tape: scalar() on " + shape_str(m) + " value");
  return m(0, 0);
}

Op Tape::op(Var v) const { return node(v).op; }

Matrix Tape::grad(Var v) const {
  const auto& n = node(v);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::parameter(Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.needs_grad = true;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::affine(Var x, Var w, Var b) {
  const auto& X = value(x);
  const auto& W = value(w);
  const auto& B = value(b);
  if (X.cols() != W.cols() || B.rows() != 1 || B.cols() != W.rows()) {
    shape_error(Op::Affine, "x " + shape_str(X) + ", w " + shape_str(W) + ", b " + shape_str(B));
  }
  Node n;
  n.op = Op::Affine;
  n.inputs = {x.id, w.id, b.id};
  n.needs_grad = node(x).needs_grad || node(w).needs_grad || node(b).needs_grad;
  n.value.noalias() = X * W.transpose();
  n.value.rowwise() += B.row(0);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
  const auto& A = value(a);
  const auto& B = value(b);
  const auto inner_a = transpose_a ? A.rows() : A.cols();
  const auto inner_b = transpose_b ? B.cols() : B.rows();
  if (inner_a != inner_b) shape_error(Op::MatMul, shape_str(A) + " by " + shape_str(B));
  Node n;
  n.op = Op::MatMul;
  n.ta = transpose_a;
  n.tb = transpose_b;
  n.inputs = {a.id, b.id};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  if (!transpose_a && !transpose_b) n.value.noalias() = A * B;
  else if (transpose_a && !transpose_b) n.value.noalias() = A.transpose() * B;
  else if (!transpose_a && transpose_b) n.value.noalias() = A * B.transpose();
  else n.value.noalias() = A.transpose() * B.transpose();
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n;
  n.op = Op::Transpose;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).transpose();
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n;
  n.op = Op::Tanh;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = batch_tanh(value(a));
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  Node n;
  n.op = Op::Mul;
  n.inputs = {a.id, b.id};
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  if (A.rows() == B.rows() && A.cols() == B.cols()) {
    n.value = A.cwiseProduct(B);
  } else if (B.cols() == 1 && B.rows() == A.rows()) {
    n.value = A.array().colwise() * B.col(0).array();
  } else {
    shape_error(Op::Mul, shape_str(A) + " with " + shape_str(B));
  }
  return push(std::move(n));
}

Var Tape::square(Var a) {
  Node n;
  n.op = Op::Square;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().square().matrix();
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n;
  n.op = Op::Sum;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = Matrix::Constant(1, 1, value(a).sum());
  return push(std::move(n));
}

Var Tape::row_sum(Var a) {
  Node n;
  n.op = Op::RowSum;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).rowwise().sum();
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n;
  n.op = Op::Log;
  n.inputs = {a.id};
  n.needs_grad = node(a).needs_grad;
  n.value = value(a).array().log().matrix();
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::Scale;
  n.inputs = {a.id};
  n.scalar = s;
  n.needs_grad = node(a).needs_grad;
  n.value = s * value(a);
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
  Node n;
  n.op = Op::AddScalar;
  n.inputs = {a.id};
  n.scalar = s;
  n.needs_grad = node(a).needs_grad;
  n.value = (value(a).array() + s).matrix();
  return push(std::move(n));
}

Var Tape::lincomb(std::span<const Var> terms, std::span<const double> coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    shape_error(Op::LinComb, "need matching non-empty term and coefficient lists");
  }
  const auto& first = value(terms[0]);
  Node n;
  n.op = Op::LinComb;
  n.value = coeffs[0] * first;
  n.inputs.reserve(terms.size());
  n.inputs.push_back(terms[0].id);
  n.needs_grad = node(terms[0]).needs_grad;
  for (std::size_t k = 1; k < terms.size(); ++k) {
    const auto& v = value(terms[k]);
    if (v.rows() != first.rows() || v.cols() != first.cols()) {
      shape_error(Op::LinComb, "term " + std::to_string(k) + " is " + shape_str(v) +
                                   ", expected " + shape_str(first));
    }
    n.value += coeffs[k] * v;
    n.inputs.push_back(terms[k].id);
    n.needs_grad = n.needs_grad || node(terms[k]).needs_grad;
  }
  n.coeffs.assign(coeffs.begin(), coeffs.end());
  return push(std::move(n));
}

Var Tape::lincomb(std::initializer_list<Var> terms, std::initializer_list<double> coeffs) {
  return lincomb(std::span<const Var>(terms.begin(), terms.size()),
                 std::span<const double>(coeffs.begin(), coeffs.size()));
}

Var Tape::row_function(Var x, std::shared_ptr<const RowFunction> fn) {
  if (!fn || !fn->eval) shape_error(Op::RowFunction, "missing function");
  const auto& X = value(x);
  Node n;
  n.op = Op::RowFunction;
  n.inputs = {x.id};
  n.needs_grad = node(x).needs_grad;
  n.value.resize(X.rows(), 1);
  n.aux.resize(X.rows(), X.cols());
  Eigen::RowVectorXd row(X.cols());
  Eigen::RowVectorXd g(X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    row = X.row(i);
    g.setZero();
    n.value(i, 0) = fn->eval(row, g);
    n.aux.row(i) = g;
  }
  n.fn = std::move(fn);
  return push(std::move(n));
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

template <class Expr>
void Tape::accumulate_expr(int id, const Expr& g) {
  auto& target = nodes_[static_cast<std::size_t>(id)];
  if (!target.needs_grad) return;
  if (target.grad.size() == 0) {
    target.grad = g;
  } else {
    target.grad += g;
  }
}

void Tape::backward(Var output) {
  const auto& out = node(output);
  if (out.value.size() != 1) {
    throw std::invalid_argument("tape: backward needs a 1x1 output, got " + shape_str(out.value));
  }
  for (auto& n : nodes_) {
    if (n.op == Op::Leaf) n.grad.resize(0, 0);
  }
  nodes_[static_cast<std::size_t>(output.id)].grad = Matrix::Ones(1, 1);

  for (int id = output.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op == Op::Leaf || !n.needs_grad || n.grad.size() == 0) continue;
    const Matrix& G = n.grad;
    auto in = [&](std::size_t k) -> const Node& {
      return nodes_[static_cast<std::size_t>(n.inputs[k])];
    };
    auto wants = [&](std::size_t k) { return in(k).needs_grad; };

    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Affine: {
        const Matrix& X = in(0).value;
        const Matrix& W = in(1).value;
        if (wants(0)) accumulate_expr(n.inputs[0], G * W);
        if (wants(1)) accumulate_expr(n.inputs[1], G.transpose() * X);
        if (wants(2)) accumulate_expr(n.inputs[2], G.colwise().sum());
        break;
      }
      case Op::MatMul: {
        const Matrix& A = in(0).value;
        const Matrix& B = in(1).value;
        if (!n.ta && !n.tb) {
          if (wants(0)) accumulate_expr(n.inputs[0], G * B.transpose());
          if (wants(1)) accumulate_expr(n.inputs[1], A.transpose() * G);
        } else if (n.ta && !n.tb) {
          if (wants(0)) accumulate_expr(n.inputs[0], B * G.transpose());
          if (wants(1)) accumulate_expr(n.inputs[1], A * G);
        } else if (!n.ta && n.tb) {
          if (wants(0)) accumulate_expr(n.inputs[0], G * B);
          if (wants(1)) accumulate_expr(n.inputs[1], G.transpose() * A);
        } else {
          if (wants(0)) accumulate_expr(n.inputs[0], B.transpose() * G.transpose());
          if (wants(1)) accumulate_expr(n.inputs[1], G.transpose() * A.transpose());
        }
        break;
      }
      case Op::Transpose:
        accumulate_expr(n.inputs[0], G.transpose());
        break;
      case Op::Tanh:
        accumulate_expr(n.inputs[0],
                        (G.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::Mul: {
        const Matrix& A = in(0).value;
        const Matrix& B = in(1).value;
        if (A.cols() == B.cols()) {
          if (wants(0)) accumulate_expr(n.inputs[0], G.cwiseProduct(B));
          if (wants(1)) accumulate_expr(n.inputs[1], G.cwiseProduct(A));
        } else {
          if (wants(0)) {
            accumulate_expr(n.inputs[0], (G.array().colwise() * B.col(0).array()).matrix());
          }
          if (wants(1)) accumulate_expr(n.inputs[1], G.cwiseProduct(A).rowwise().sum());
        }
        break;
      }
      case Op::Square:
        accumulate_expr(n.inputs[0], 2.0 * G.cwiseProduct(in(0).value));
        break;
      case Op::Sum: {
        const Matrix& A = in(0).value;
        accumulate_expr(n.inputs[0], Matrix::Constant(A.rows(), A.cols(), G(0, 0)));
        break;
      }
      case Op::RowSum: {
        const Matrix& A = in(0).value;
        accumulate_expr(n.inputs[0], G.col(0).replicate(1, A.cols()));
        break;
      }
      case Op::Log:
        accumulate_expr(n.inputs[0], G.cwiseQuotient(in(0).value));
        break;
      case Op::Scale:
        accumulate_expr(n.inputs[0], n.scalar * G);
        break;
      case Op::AddScalar:
        accumulate_expr(n.inputs[0], G);
        break;
      case Op::LinComb:
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          if (wants(k)) accumulate_expr(n.inputs[k], n.coeffs[k] * G);
        }
        break;
      case Op::RowFunction:
        accumulate_expr(n.inputs[0], (n.aux.array().colwise() * G.col(0).array()).matrix());
        break;
    }
    n.grad.resize(0, 0);
  }
}

ValueAndGradient evaluate_with_gradient(const Program& program, const Eigen::VectorXd& x) {
  Tape tape;
  const Var input = tape.parameter(x);
  const Var out = program(tape, input);
  tape.backward(out);
  return {tape.scalar(out), tape.grad(input).col(0)};
}

}  // namespace dynot::ad
