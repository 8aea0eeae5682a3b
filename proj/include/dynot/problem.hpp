#pragma once

#include "dynot/densities.hpp"

#include <optional>

namespace dynot {

/// Transport or crowd-motion problem: move `initial` towards `target` while
/// paying `preference` along the way.
struct Problem {
  Density initial;                  // rho_0
  Density target;                   // rho_1
  std::optional<Density> sampling;  // mu_0 when importance sampling, else samples come from rho_0
  PreferenceSpec preference = NoPreference{};
  UniformBoxSpec regularizer_box;   // support of the Jacobian-penalty samples

  int dim() const { return initial.dim(); }
  bool importance_sampling() const { return sampling.has_value(); }
  void validate() const;
};

/// Box around the bulk of rho_0 and rho_1 (means +- 4 max sigma).
UniformBoxSpec default_regularizer_box(const Density& initial, const Density& target);

struct Hyperparameters {
  double kl_weight = 1000.0;  // lambda
  double reg_weight = 0.0;    // alpha
  double pref_weight = 0.0;   // lambda_P
  int particles = 1024;       // r
  int reg_samples = 256;      // s
  int steps = 10;             // N, time intervals of the Simpson grid
  int chunk = 256;            // particles per tape
  int workers = 1;            // concurrent tapes

  void validate() const;
};

}  // namespace dynot
