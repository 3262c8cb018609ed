#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dil/param_vector.hpp"

namespace dil {

/// Scalar objective of a parameter vector. Receives one tensor per segment
/// (leaves of the active graph when differentiating) and returns a scalar.
using Objective = std::function<Tensor(const std::vector<Tensor>& params)>;

struct ValueGrad {
  double value = 0.0;
  ParamVector grad;
};

/// Evaluates `f` at `theta` and its exact reverse-mode gradient.
ValueGrad value_and_grad(const Objective& f, const ParamVector& theta);
/// Forward evaluation only, nothing recorded.
double evaluate(const Objective& f, const ParamVector& theta);

enum class HvpMethod { kFiniteDiff, kBruteForce };

struct HvpOptions {
  HvpMethod method = HvpMethod::kFiniteDiff;
  /// Overrides the radius rule r = 1e-4 / (|v|_2 + 1e-12) of the finite-difference method.
  std::optional<double> radius;
  /// Coordinate step of the brute-force Hessian columns.
  double column_step = 1e-5;
};

double default_hvp_radius(const ParamVector& v);

/// Hessian of `f` at `theta` applied to `v`.
///
/// kFiniteDiff takes a central difference of the exact gradient along v:
/// (grad f(theta + r v) - grad f(theta - r v)) / 2r, two gradient evaluations.
/// kBruteForce assembles the full Hessian one column at a time from central
/// differences of the gradient, costing 2P gradient evaluations; it exists as
/// an independent oracle for small problems.
ParamVector hvp(const Objective& f, const ParamVector& theta, const ParamVector& v, const HvpOptions& options = {});

/// Dense symmetric Hessian (row-major, P x P) by gradient differences.
std::vector<double> brute_force_hessian(const Objective& f, const ParamVector& theta, double step = 1e-5);

}  // namespace dil
