#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace dynot {

/// Gaussian with diagonal covariance.
struct GaussianSpec {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;

  /// N(mean, variance * I) in dimension d.
  static GaussianSpec isotropic(Eigen::VectorXd mean, double variance);
};

struct MixtureSpec {
  std::vector<double> weights;
  std::vector<GaussianSpec> components;

  int dim() const;
  void validate() const;
};

struct UniformBoxSpec {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  double volume() const;
  double density() const { return 1.0 / volume(); }  // P0
  bool contains(const Eigen::VectorXd& x) const;
  void validate() const;
};

/// A probability density on R^d.
class Density {
 public:
  using Spec = std::variant<GaussianSpec, MixtureSpec, UniformBoxSpec>;

  Density() = default;
  Density(GaussianSpec g);
  Density(MixtureSpec m);
  Density(UniformBoxSpec u);

  const Spec& spec() const { return spec_; }
  int dim() const;

  double log_pdf(const Eigen::VectorXd& x) const;
  double pdf(const Eigen::VectorXd& x) const;
  Eigen::VectorXd grad_log_pdf(const Eigen::VectorXd& x) const;

  /// `count` i.i.d. samples as rows.
  Eigen::MatrixXd sample(int count, std::mt19937_64& rng) const;
  Eigen::MatrixXd sample(int count, std::uint64_t seed) const;

  /// Axis-aligned box containing the bulk of the mass (mean +- 4 sigma for
  /// Gaussians, the box itself for uniform densities).
  UniformBoxSpec bounding_box() const;

 private:
  Spec spec_;
};

double log_pdf(const GaussianSpec& g, const Eigen::VectorXd& x);
Eigen::VectorXd grad_log_pdf(const GaussianSpec& g, const Eigen::VectorXd& x);
double log_pdf(const MixtureSpec& m, const Eigen::VectorXd& x);
Eigen::VectorXd grad_log_pdf(const MixtureSpec& m, const Eigen::VectorXd& x);
/// Throws DomainError outside the box.
double log_pdf(const UniformBoxSpec& u, const Eigen::VectorXd& x);

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// |m_a - m_b|^2 + sum_k (sigma_a,k - sigma_b,k)^2.
double w2_squared_diag_gaussians(const GaussianSpec& a, const GaussianSpec& b);

/// Smallest box containing the bounding boxes of both densities.
UniformBoxSpec union_box(const UniformBoxSpec& a, const UniformBoxSpec& b);

// -- crowd-motion preference functions -------------------------------------
// All preference functions look only at the first two coordinates of x.

struct NoPreference {};

/// Weighted sum of 2-d Gaussian densities.
struct GaussianBumps {
  MixtureSpec bumps;  // components are 2-dimensional
};

struct Rectangle {
  Eigen::Vector2d lower;
  Eigen::Vector2d upper;
};

/// Sum of rectangle indicators convolved with an isotropic Gaussian kernel
/// of standard deviation `bandwidth`.
struct BlurredRectangles {
  std::vector<Rectangle> rectangles;
  double bandwidth = 0.3;
};

using PreferenceSpec = std::variant<NoPreference, GaussianBumps, BlurredRectangles>;

bool has_preference(const PreferenceSpec& spec);
double preference(const PreferenceSpec& spec, const Eigen::VectorXd& x);
/// Gradient in R^d (zero beyond the first two coordinates).
Eigen::VectorXd preference_gradient(const PreferenceSpec& spec, const Eigen::VectorXd& x);

}  // namespace dynot
