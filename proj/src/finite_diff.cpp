#include "promptaug/finite_diff.hpp"

#include <cmath>

#include "promptaug/errors.hpp"

namespace promptaug {

float finite_diff_coord(const ScalarFn& f, const Tensor& x, size_t index, float eps) {
    if (!(eps > 0.0f)) throw ContractError("finite_diff: eps must be positive");
    if (index >= x.numel()) {
        throw IndexError("finite_diff: coordinate " + std::to_string(index) + " outside " +
                         x.shape_string());
    }
    Tensor probe = x.clone();
    const float original = probe.data()[index];
    probe.data()[index] = original + eps;
    const float up = f(probe);
    probe.data()[index] = original - eps;
    const float down = f(probe);
    probe.data()[index] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff: non-finite function value at coordinate " +
                           std::to_string(index));
    }
    return (up - down) / (2.0f * eps);
}

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, float eps) {
    Tensor grad(x.shape());
    for (size_t i = 0; i < x.numel(); ++i) {
        grad.data()[i] = finite_diff_coord(f, x, i, eps);
    }
    return grad;
}

}  // namespace promptaug
