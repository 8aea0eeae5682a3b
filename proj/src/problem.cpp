#include "dynot/problem.hpp"

#include "dynot/errors.hpp"

namespace dynot {

void Problem::validate() const {
  const int d = initial.dim();
  if (d < 1) throw ConfigError("problem: dimension must be >= 1");
  if (target.dim() != d) throw ConfigError("problem: initial and target dimensions differ");
  if (sampling && sampling->dim() != d) throw ConfigError("problem: sampling density dimension");
  if (has_preference(preference) && d < 2) {
    throw ConfigError("problem: preference functions need d >= 2");
  }
  regularizer_box.validate();
  if (regularizer_box.dim() != d) throw ConfigError("problem: regularizer box dimension");
}

UniformBoxSpec default_regularizer_box(const Density& initial, const Density& target) {
  return union_box(initial.bounding_box(), target.bounding_box());
}

void Hyperparameters::validate() const {
  if (!(kl_weight >= 0.0) || !(reg_weight >= 0.0) || !(pref_weight >= 0.0)) {
    throw ConfigError("hyperparameters: lambda, alpha and lambda_P must be >= 0");
  }
  if (particles < 1 || steps < 1 || chunk < 1 || workers < 1) {
    throw ConfigError("hyperparameters: particles, steps, chunk and workers must be >= 1");
  }
  if (reg_weight > 0.0 && reg_samples < 1) {
    throw ConfigError("hyperparameters: regularizer needs reg_samples >= 1");
  }
}

}  // namespace dynot
