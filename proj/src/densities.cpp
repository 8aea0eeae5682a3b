#include "dynot/densities.hpp"

#include "dynot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

namespace dynot {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require_dim(const Eigen::VectorXd& x, int d, const char* what) {
  if (x.size() != d) {
    std::ostringstream msg;
    msg << what << ": point has dimension " << x.size() << ", density has " << d;
    throw DomainError(msg.str());
  }
}

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

// -- Gaussian ----------------------------------------------------------------

GaussianSpec GaussianSpec::isotropic(Eigen::VectorXd mean, double variance) {
  GaussianSpec g;
  g.variance = Eigen::VectorXd::Constant(mean.size(), variance);
  g.mean = std::move(mean);
  g.validate();
  return g;
}

void GaussianSpec::validate() const {
  if (mean.size() == 0 || mean.size() != variance.size()) {
    throw ConfigError("gaussian: mean and variance must have the same nonzero length");
  }
  if (!mean.allFinite() || !variance.allFinite() || (variance.array() <= 0.0).any()) {
    throw ConfigError("gaussian: variances must be finite and strictly positive");
  }
}

double log_pdf(const GaussianSpec& g, const Eigen::VectorXd& x) {
  require_dim(x, g.dim(), "gaussian log_pdf");
  const double quad = ((x - g.mean).array().square() / g.variance.array()).sum();
  return -0.5 * (quad + g.variance.array().log().sum() + g.dim() * kLog2Pi);
}

Eigen::VectorXd grad_log_pdf(const GaussianSpec& g, const Eigen::VectorXd& x) {
  require_dim(x, g.dim(), "gaussian grad_log_pdf");
  return (-(x - g.mean).array() / g.variance.array()).matrix();
}

// -- mixture -----------------------------------------------------------------

int MixtureSpec::dim() const { return components.empty() ? 0 : components.front().dim(); }

void MixtureSpec::validate() const {
  if (components.empty() || weights.size() != components.size()) {
    throw ConfigError("mixture: need one weight per component and at least one component");
  }
  for (const auto& c : components) {
    c.validate();
    if (c.dim() != dim()) throw ConfigError("mixture: components differ in dimension");
  }
  if (std::any_of(weights.begin(), weights.end(), [](double w) { return !(w > 0.0); })) {
    throw ConfigError("mixture: weights must be positive");
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture: weights must sum to 1");
}

namespace {

// log(w_k) + log p_k(x) per component, and their log-sum-exp.
std::pair<Eigen::VectorXd, double> component_logs(const MixtureSpec& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd logs(static_cast<Eigen::Index>(m.components.size()));
  for (std::size_t k = 0; k < m.components.size(); ++k) {
    logs[static_cast<Eigen::Index>(k)] = std::log(m.weights[k]) + log_pdf(m.components[k], x);
  }
  const double top = logs.maxCoeff();
  return {logs, top + std::log((logs.array() - top).exp().sum())};
}

}  // namespace

double log_pdf(const MixtureSpec& m, const Eigen::VectorXd& x) {
  return component_logs(m, x).second;
}

Eigen::VectorXd grad_log_pdf(const MixtureSpec& m, const Eigen::VectorXd& x) {
  const auto [logs, total] = component_logs(m, x);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  for (std::size_t k = 0; k < m.components.size(); ++k) {
    const double resp = std::exp(logs[static_cast<Eigen::Index>(k)] - total);
    g += resp * grad_log_pdf(m.components[k], x);
  }
  return g;
}

// -- uniform box -------------------------------------------------------------

double UniformBoxSpec::volume() const { return (upper - lower).prod(); }

bool UniformBoxSpec::contains(const Eigen::VectorXd& x) const {
  return x.size() == lower.size() && (x.array() >= lower.array()).all() &&
         (x.array() <= upper.array()).all();
}

void UniformBoxSpec::validate() const {
  if (lower.size() == 0 || lower.size() != upper.size()) {
    throw ConfigError("uniform box: corners must have the same nonzero length");
  }
  if (!lower.allFinite() || !upper.allFinite() || !(lower.array() < upper.array()).all()) {
    throw ConfigError("uniform box: need finite lower < upper in every coordinate");
  }
}

double log_pdf(const UniformBoxSpec& u, const Eigen::VectorXd& x) {
  require_dim(x, u.dim(), "uniform log_pdf");
  if (!u.contains(x)) throw DomainError("uniform log_pdf: point outside the support box");
  return -std::log(u.volume());
}

UniformBoxSpec union_box(const UniformBoxSpec& a, const UniformBoxSpec& b) {
  if (a.dim() != b.dim()) throw DomainError("union_box: dimension mismatch");
  return {a.lower.cwiseMin(b.lower), a.upper.cwiseMax(b.upper)};
}

// -- Density -----------------------------------------------------------------

Density::Density(GaussianSpec g) : spec_(std::move(g)) { std::get<GaussianSpec>(spec_).validate(); }
Density::Density(MixtureSpec m) : spec_(std::move(m)) { std::get<MixtureSpec>(spec_).validate(); }
Density::Density(UniformBoxSpec u) : spec_(std::move(u)) {
  std::get<UniformBoxSpec>(spec_).validate();
}

int Density::dim() const {
  return std::visit([](const auto& s) { return s.dim(); }, spec_);
}

double Density::log_pdf(const Eigen::VectorXd& x) const {
  return std::visit([&](const auto& s) { return dynot::log_pdf(s, x); }, spec_);
}

double Density::pdf(const Eigen::VectorXd& x) const {
  if (const auto* u = std::get_if<UniformBoxSpec>(&spec_)) {
    return u->contains(x) ? u->density() : 0.0;
  }
  return std::exp(log_pdf(x));
}

Eigen::VectorXd Density::grad_log_pdf(const Eigen::VectorXd& x) const {
  return std::visit(Overloaded{
                        [&](const GaussianSpec& g) { return dynot::grad_log_pdf(g, x); },
                        [&](const MixtureSpec& m) { return dynot::grad_log_pdf(m, x); },
                        [&](const UniformBoxSpec& u) -> Eigen::VectorXd {
                          require_dim(x, u.dim(), "uniform grad_log_pdf");
                          return Eigen::VectorXd::Zero(x.size());
                        },
                    },
                    spec_);
}

namespace {

void fill_gaussian(const GaussianSpec& g, Eigen::MatrixXd& out, int row, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    out(row, k) = g.mean[k] + std::sqrt(g.variance[k]) * normal(rng);
  }
}

}  // namespace

Eigen::MatrixXd Density::sample(int count, std::mt19937_64& rng) const {
  if (count < 0) throw DomainError("sample: negative count");
  Eigen::MatrixXd out(count, dim());
  std::visit(Overloaded{
                 [&](const GaussianSpec& g) {
                   for (int i = 0; i < count; ++i) fill_gaussian(g, out, i, rng);
                 },
                 [&](const MixtureSpec& m) {
                   std::discrete_distribution<std::size_t> pick(m.weights.begin(),
                                                                m.weights.end());
                   for (int i = 0; i < count; ++i) fill_gaussian(m.components[pick(rng)], out, i, rng);
                 },
                 [&](const UniformBoxSpec& u) {
                   std::uniform_real_distribution<double> unit(0.0, 1.0);
                   for (int i = 0; i < count; ++i) {
                     for (Eigen::Index k = 0; k < out.cols(); ++k) {
                       out(i, k) = u.lower[k] + (u.upper[k] - u.lower[k]) * unit(rng);
                     }
                   }
                 },
             },
             spec_);
  return out;
}

Eigen::MatrixXd Density::sample(int count, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  return sample(count, rng);
}

UniformBoxSpec Density::bounding_box() const {
  auto gaussian_box = [](const GaussianSpec& g) {
    const double reach = 4.0 * std::sqrt(g.variance.maxCoeff());
    return UniformBoxSpec{(g.mean.array() - reach).matrix(), (g.mean.array() + reach).matrix()};
  };
  return std::visit(Overloaded{
                        [&](const GaussianSpec& g) { return gaussian_box(g); },
                        [&](const MixtureSpec& m) {
                          UniformBoxSpec box = gaussian_box(m.components.front());
                          for (const auto& c : m.components) box = union_box(box, gaussian_box(c));
                          return box;
                        },
                        [](const UniformBoxSpec& u) { return u; },
                    },
                    spec_);
}

double w2_squared_diag_gaussians(const GaussianSpec& a, const GaussianSpec& b) {
  if (a.dim() != b.dim()) {
    throw DomainError("w2_squared: dimension mismatch (" + std::to_string(a.dim()) + " vs " +
                      std::to_string(b.dim()) + ")");
  }
  const double shift = (a.mean - b.mean).squaredNorm();
  const double spread = (a.variance.array().sqrt() - b.variance.array().sqrt()).square().sum();
  return shift + spread;
}

// -- preference --------------------------------------------------------------

namespace {

Eigen::VectorXd leading_two(const Eigen::VectorXd& x) {
  if (x.size() < 2) throw DomainError("preference: needs at least two coordinates");
  return x.head(2);
}

// Blurred 1-d indicator of [lo, hi]: Phi((hi - x)/b) - Phi((lo - x)/b) and
// its derivative in x.
std::pair<double, double> blurred_interval(double x, double lo, double hi, double b) {
  const double s = 1.0 / (std::numbers::sqrt2 * b);
  const double u = (hi - x) * s;
  const double l = (lo - x) * s;
  const double value = 0.5 * (std::erf(u) - std::erf(l));
  const double dvalue = -s / std::sqrt(std::numbers::pi) * (std::exp(-u * u) - std::exp(-l * l));
  return {value, dvalue};
}

}  // namespace

bool has_preference(const PreferenceSpec& spec) {
  return !std::holds_alternative<NoPreference>(spec);
}

double preference(const PreferenceSpec& spec, const Eigen::VectorXd& x) {
  return std::visit(
      Overloaded{
          [](const NoPreference&) { return 0.0; },
          [&](const GaussianBumps& g) { return std::exp(log_pdf(g.bumps, leading_two(x))); },
          [&](const BlurredRectangles& r) {
            const Eigen::VectorXd p = leading_two(x);
            double total = 0.0;
            for (const auto& rect : r.rectangles) {
              total += blurred_interval(p[0], rect.lower[0], rect.upper[0], r.bandwidth).first *
                       blurred_interval(p[1], rect.lower[1], rect.upper[1], r.bandwidth).first;
            }
            return total;
          },
      },
      spec);
}

Eigen::VectorXd preference_gradient(const PreferenceSpec& spec, const Eigen::VectorXd& x) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
  std::visit(Overloaded{
                 [](const NoPreference&) {},
                 [&](const GaussianBumps& b) {
                   const Eigen::VectorXd p = leading_two(x);
                   g.head(2) = std::exp(log_pdf(b.bumps, p)) * grad_log_pdf(b.bumps, p);
                 },
                 [&](const BlurredRectangles& r) {
                   const Eigen::VectorXd p = leading_two(x);
                   for (const auto& rect : r.rectangles) {
                     const auto [fx, dfx] =
                         blurred_interval(p[0], rect.lower[0], rect.upper[0], r.bandwidth);
                     const auto [fy, dfy] =
                         blurred_interval(p[1], rect.lower[1], rect.upper[1], r.bandwidth);
                     g[0] += dfx * fy;
                     g[1] += fx * dfy;
                   }
                 },
             },
             spec);
  return g;
}

}  // namespace dynot
