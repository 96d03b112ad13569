#pragma once

#include <cstddef>

// Data-parallel inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation and may have SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime from CPU capabilities. The SIMD variants
// are equivalence-tested against the scalar references: elementwise kernels to
// a tight relative tolerance, reductions to a length-scaled tolerance since
// lane-wise accumulation reorders the sums.
namespace promptaug::kernels {

struct Ops {
    const char* name;

    // Reductions.
    float (*dot)(const float* a, const float* b, size_t n);
    // Dot with double accumulation; used where downstream consumers compare
    // scores for exact ordering (retrieval) so that summation-order noise is
    // below any realistic score gap.
    double (*dot_double)(const float* a, const float* b, size_t n);
    float (*reduce_sum)(const float* x, size_t n);
    float (*reduce_max)(const float* x, size_t n);

    // Elementwise.
    void (*axpy)(float a, const float* x, float* y, size_t n);  // y += a*x
    void (*scale)(float a, float* x, size_t n);                 // x *= a
    void (*vadd)(const float* a, const float* b, float* out, size_t n);
    void (*vmul)(const float* a, const float* b, float* out, size_t n);

    // Fused AdamW update for one parameter buffer. bc1/bc2 are the bias
    // corrections 1-beta1^t and 1-beta2^t.
    void (*adamw_update)(float* w, const float* g, float* m, float* v, size_t n, float lr,
                         float beta1, float beta2, float eps, float weight_decay, float bc1,
                         float bc2);
};

// The scalar reference kernels; always available.
const Ops& scalar_ops();

// Best SIMD variant compiled in and supported by this CPU, or nullptr.
const Ops* simd_ops();

// Active table: simd_ops() when available unless forced to scalar via
// set_force_scalar(true) or the PROMPTAUG_KERNELS=scalar environment variable.
const Ops& active();

void set_force_scalar(bool force);

// Numerically stable in-place softmax built on the active kernels; exp() stays
// scalar in every variant so the dispatch choice only affects reduction order.
void softmax_inplace(float* x, size_t n);

}  // namespace promptaug::kernels
