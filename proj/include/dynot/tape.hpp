#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dynot::ad {

using Matrix = Eigen::MatrixXd;

/// Primitive operations recorded on a tape. Every value is a dense matrix;
/// scalars are 1x1.
enum class Op : std::uint8_t {
  Leaf,
  Affine,       // x w^T + 1 b   (x: n x k, w: m x k, b: 1 x m)
  MatMul,       // op(a) op(b), op = identity or transpose
  Transpose,
  Tanh,
  Mul,          // elementwise, b may be an n x 1 column broadcast over columns
  Square,
  Sum,          // -> 1 x 1
  RowSum,       // n x m -> n x 1
  Log,
  Scale,        // s a
  AddScalar,    // a + s
  LinComb,      // sum_k c_k a_k
  RowFunction,  // n x k -> n x 1, user scalar field with analytic gradient
};

const char* op_name(Op op);

/// Scalar field f: R^k -> R evaluated row by row. `eval` returns f(x) and
/// writes grad f(x) into `grad`.
struct RowFunction {
  std::string name;
  std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                       Eigen::Ref<Eigen::RowVectorXd> grad)>
      eval;
};

/// Handle to a node on one tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only record of primitive operations with a reverse sweep.
///
/// A tape is rebuilt for every evaluation and owned by a single worker.
/// Shape errors are rejected when an operation is recorded; a non-finite
/// result throws NumericError naming the offending node.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var parameter(Matrix value);
  Var constant(Matrix value);

  Var affine(Var x, Var w, Var b);
  Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
  Var transpose(Var a);
  Var tanh(Var a);
  Var mul(Var a, Var b);
  Var square(Var a);
  Var sum(Var a);
  Var row_sum(Var a);
  Var log(Var a);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var add(Var a, Var b) { return lincomb({a, b}, {1.0, 1.0}); }
  Var sub(Var a, Var b) { return lincomb({a, b}, {1.0, -1.0}); }
  Var lincomb(std::span<const Var> terms, std::span<const double> coeffs);
  Var lincomb(std::initializer_list<Var> terms, std::initializer_list<double> coeffs);
  Var row_function(Var x, std::shared_ptr<const RowFunction> fn);

  /// Reverse sweep from a 1x1 output. Gradients of leaves created with
  /// `parameter` are available afterwards through `grad`.
  void backward(Var output);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  /// Gradient of the last backward output w.r.t. `v`; zeros if `v` is not
  /// on a path to the output.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const;

 private:
  struct Node {
    Op op = Op::Leaf;
    bool needs_grad = false;
    bool ta = false;
    bool tb = false;
    double scalar = 0.0;
    std::vector<int> inputs;
    std::vector<double> coeffs;
    std::shared_ptr<const RowFunction> fn;
    Matrix value;
    Matrix aux;
    Matrix grad;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void accumulate(int id, const Matrix& g);
  template <class Expr>
  void accumulate_expr(int id, const Expr& g);

  std::vector<Node> nodes_;
};

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd gradient;
};

/// Builds a scalar program of one column-vector input on a fresh tape and
/// returns its value and gradient.
using Program = std::function<Var(Tape&, Var)>;
ValueAndGradient evaluate_with_gradient(const Program& program, const Eigen::VectorXd& x);

}  // namespace dynot::ad
