#pragma once

#include <functional>

#include "promptaug/tensor.hpp"

namespace promptaug {

// Central-difference gradient oracle. f must be pure and deterministic; it is
// evaluated at x +/- eps*e_i, never at x itself. Used by the gradient-check
// tests to validate everything the tape computes.
using ScalarFn = std::function<float(const Tensor&)>;

// One coordinate: (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps).
float finite_diff_coord(const ScalarFn& f, const Tensor& x, size_t index, float eps);

// Full gradient, one central difference per coordinate.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, float eps);

}  // namespace promptaug
