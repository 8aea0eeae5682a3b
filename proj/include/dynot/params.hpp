#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>

namespace dynot {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMajorMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMajorMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

/// How the time basis enters the velocity field.
///
/// `Nodal`: v(x,t) = sum_i phi_i(t) sum_l net_il(x).
/// `TimeWeights`: v(x,t) = sum_l net_l(x; theta_l(t)) with theta_l(t) = sum_i phi_i(t) theta_il.
enum class Architecture { Nodal, TimeWeights };

std::string_view to_string(Architecture arch);
Architecture architecture_from_string(std::string_view name);

enum class Role { W1 = 0, B1 = 1, W2 = 2, B2 = 3 };

struct NetworkShape {
  int dim = 2;        // d
  int intervals = 5;  // M, so M+1 basis functions
  int width = 2;      // L, summed two-layer nets per basis function
  int hidden = 20;    // H
  Architecture architecture = Architecture::Nodal;

  int basis_count() const { return intervals + 1; }
  std::size_t block_size() const;  // 2dH + H + d
  std::size_t size() const;        // L (M+1) (2dH + H + d)
  void validate() const;

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

/// Flat trainable parameters in canonical order: basis index i outermost,
/// then net l, then W1 (H x d), b1 (H), W2 (d x H), b2 (d), matrices row-major.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(const NetworkShape& shape);
  ParameterVector(const NetworkShape& shape, Eigen::VectorXd values);

  const NetworkShape& shape() const { return shape_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  std::size_t offset(int basis, int net, Role role, int row = 0, int col = 0) const;
  std::size_t block_offset(int basis, int net) const;

  MatrixMap w1(int basis, int net);
  ConstMatrixMap w1(int basis, int net) const;
  VectorMap b1(int basis, int net);
  ConstVectorMap b1(int basis, int net) const;
  MatrixMap w2(int basis, int net);
  ConstMatrixMap w2(int basis, int net) const;
  VectorMap b2(int basis, int net);
  ConstVectorMap b2(int basis, int net) const;

  bool all_finite() const { return values_.allFinite(); }

 private:
  NetworkShape shape_;
  Eigen::VectorXd values_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
ParameterVector initialize_parameters(const NetworkShape& shape, std::uint64_t seed);

void write_checkpoint(std::ostream& out, const ParameterVector& params);
ParameterVector read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const ParameterVector& params);
ParameterVector load_checkpoint(const std::filesystem::path& path);

}  // namespace dynot
