#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "promptaug/kernels.hpp"

namespace promptaug::kernels {

namespace {

std::atomic<bool> g_force_scalar{false};

bool scalar_forced_by_env() {
    static const bool forced = [] {
        const char* v = std::getenv("PROMPTAUG_KERNELS");
        return v != nullptr && std::strcmp(v, "scalar") == 0;
    }();
    return forced;
}

}  // namespace

void set_force_scalar(bool force) { g_force_scalar.store(force, std::memory_order_relaxed); }

const Ops& active() {
    if (g_force_scalar.load(std::memory_order_relaxed) || scalar_forced_by_env()) {
        return scalar_ops();
    }
    const Ops* simd = simd_ops();
    return simd != nullptr ? *simd : scalar_ops();
}

void softmax_inplace(float* x, size_t n) {
    const Ops& k = active();
    const float max = k.reduce_max(x, n);
    for (size_t i = 0; i < n; ++i) x[i] = std::exp(x[i] - max);
    const float sum = k.reduce_sum(x, n);
    k.scale(1.0f / sum, x, n);
}

}  // namespace promptaug::kernels
