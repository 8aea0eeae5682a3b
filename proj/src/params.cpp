#include "dynot/params.hpp"

#include "dynot/errors.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace dynot {

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Nodal:
      return "nodal";
    case Architecture::TimeWeights:
      return "time-weights";
  }
  return "unknown";
}

Architecture architecture_from_string(std::string_view name) {
  if (name == "nodal") return Architecture::Nodal;
  if (name == "time-weights") return Architecture::TimeWeights;
  throw ConfigError("unknown architecture '" + std::string(name) +
                    "' (expected 'nodal' or 'time-weights')");
}

std::size_t NetworkShape::block_size() const {
  const auto d = static_cast<std::size_t>(dim);
  const auto h = static_cast<std::size_t>(hidden);
  return 2 * d * h + h + d;
}

std::size_t NetworkShape::size() const {
  return static_cast<std::size_t>(width) * static_cast<std::size_t>(basis_count()) * block_size();
}

void NetworkShape::validate() const {
  if (dim < 1 || intervals < 1 || width < 1 || hidden < 1) {
    std::ostringstream msg;
    msg << "invalid network shape: d=" << dim << " M=" << intervals << " L=" << width
        << " H=" << hidden << " (all must be >= 1)";
    throw ConfigError(msg.str());
  }
}

ParameterVector::ParameterVector(const NetworkShape& shape)
    : shape_(shape), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.size()))) {
  shape_.validate();
}

ParameterVector::ParameterVector(const NetworkShape& shape, Eigen::VectorXd values)
    : shape_(shape), values_(std::move(values)) {
  shape_.validate();
  if (static_cast<std::size_t>(values_.size()) != shape_.size()) {
    throw ConfigError("parameter count " + std::to_string(values_.size()) +
                      " does not match shape (expected " + std::to_string(shape_.size()) + ")");
  }
}

std::size_t ParameterVector::block_offset(int basis, int net) const {
  return (static_cast<std::size_t>(basis) * static_cast<std::size_t>(shape_.width) +
          static_cast<std::size_t>(net)) *
         shape_.block_size();
}

std::size_t ParameterVector::offset(int basis, int net, Role role, int row, int col) const {
  const auto d = static_cast<std::size_t>(shape_.dim);
  const auto h = static_cast<std::size_t>(shape_.hidden);
  std::size_t base = block_offset(basis, net);
  switch (role) {
    case Role::W1:
      return base + static_cast<std::size_t>(row) * d + static_cast<std::size_t>(col);
    case Role::B1:
      return base + h * d + static_cast<std::size_t>(row);
    case Role::W2:
      return base + h * d + h + static_cast<std::size_t>(row) * h + static_cast<std::size_t>(col);
    case Role::B2:
      return base + 2 * h * d + h + static_cast<std::size_t>(row);
  }
  return base;
}

MatrixMap ParameterVector::w1(int basis, int net) {
  return {values_.data() + offset(basis, net, Role::W1), shape_.hidden, shape_.dim};
}
ConstMatrixMap ParameterVector::w1(int basis, int net) const {
  return {values_.data() + offset(basis, net, Role::W1), shape_.hidden, shape_.dim};
}
VectorMap ParameterVector::b1(int basis, int net) {
  return {values_.data() + offset(basis, net, Role::B1), shape_.hidden};
}
ConstVectorMap ParameterVector::b1(int basis, int net) const {
  return {values_.data() + offset(basis, net, Role::B1), shape_.hidden};
}
MatrixMap ParameterVector::w2(int basis, int net) {
  return {values_.data() + offset(basis, net, Role::W2), shape_.dim, shape_.hidden};
}
ConstMatrixMap ParameterVector::w2(int basis, int net) const {
  return {values_.data() + offset(basis, net, Role::W2), shape_.dim, shape_.hidden};
}
VectorMap ParameterVector::b2(int basis, int net) {
  return {values_.data() + offset(basis, net, Role::B2), shape_.dim};
}
ConstVectorMap ParameterVector::b2(int basis, int net) const {
  return {values_.data() + offset(basis, net, Role::B2), shape_.dim};
}

ParameterVector initialize_parameters(const NetworkShape& shape, std::uint64_t seed) {
  ParameterVector params(shape);
  std::mt19937_64 rng(seed);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(shape.dim));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  std::uniform_real_distribution<double> u1(-a1, a1);
  std::uniform_real_distribution<double> u2(-a2, a2);
  for (int i = 0; i < shape.basis_count(); ++i) {
    for (int l = 0; l < shape.width; ++l) {
      auto w1 = params.w1(i, l);
      for (Eigen::Index k = 0; k < w1.size(); ++k) w1.data()[k] = u1(rng);
      auto w2 = params.w2(i, l);
      for (Eigen::Index k = 0; k < w2.size(); ++k) w2.data()[k] = u2(rng);
    }
  }
  return params;
}

namespace {
constexpr std::string_view kMagic = "dynot-checkpoint";
constexpr int kFormatVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& out, const ParameterVector& params) {
  const auto& s = params.shape();
  out << kMagic << ' ' << kFormatVersion << '\n'
      << "architecture " << to_string(s.architecture) << '\n'
      << "d " << s.dim << '\n'
      << "M " << s.intervals << '\n'
      << "L " << s.width << '\n'
      << "H " << s.hidden << '\n'
      << "count " << params.size() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index k = 0; k < params.values().size(); ++k) out << params.values()[k] << '\n';
}

ParameterVector read_checkpoint(std::istream& in) {
  auto expect_key = [&](std::string_view key) {
    std::string word;
    if (!(in >> word) || word != key) {
      throw ConfigError("checkpoint: expected key '" + std::string(key) + "', got '" + word + "'");
    }
  };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kMagic || version != kFormatVersion) {
    throw ConfigError("checkpoint: bad header");
  }
  NetworkShape shape;
  std::string arch;
  std::size_t count = 0;
  expect_key("architecture");
  in >> arch;
  shape.architecture = architecture_from_string(arch);
  expect_key("d");
  in >> shape.dim;
  expect_key("M");
  in >> shape.intervals;
  expect_key("L");
  in >> shape.width;
  expect_key("H");
  in >> shape.hidden;
  expect_key("count");
  in >> count;
  shape.validate();
  if (count != shape.size()) throw ConfigError("checkpoint: count does not match (d, M, L, H)");
  Eigen::VectorXd values(static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) {
    if (!(in >> values[static_cast<Eigen::Index>(k)])) {
      throw ConfigError("checkpoint: truncated parameter list at index " + std::to_string(k));
    }
  }
  return ParameterVector(shape, std::move(values));
}

void save_checkpoint(const std::filesystem::path& path, const ParameterVector& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(out, params);
}

ParameterVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace dynot
