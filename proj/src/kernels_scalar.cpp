#include <cmath>
#include <cstddef>

#include "promptaug/kernels.hpp"

namespace promptaug::kernels {

namespace {

float dot_scalar(const float* a, const float* b, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double dot_double_scalar(const float* a, const float* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

float reduce_sum_scalar(const float* x, size_t n) {
    float acc = 0.0f;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

float reduce_max_scalar(const float* x, size_t n) {
    float best = x[0];
    for (size_t i = 1; i < n; ++i) best = x[i] > best ? x[i] : best;
    return best;
}

void axpy_scalar(float a, const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(float a, float* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

void vadd_scalar(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_scalar(const float* a, const float* b, float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void adamw_update_scalar(float* w, const float* g, float* m, float* v, size_t n, float lr,
                         float beta1, float beta2, float eps, float weight_decay, float bc1,
                         float bc2) {
    for (size_t i = 0; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        const float mhat = m[i] / bc1;
        const float vhat = v[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
}

}  // namespace

const Ops& scalar_ops() {
    static const Ops table{
        "scalar",    dot_scalar,  dot_double_scalar, reduce_sum_scalar,  reduce_max_scalar,
        axpy_scalar, scale_scalar, vadd_scalar,      vmul_scalar,        adamw_update_scalar,
    };
    return table;
}

}  // namespace promptaug::kernels
