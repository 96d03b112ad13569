#include <cmath>
#include <cstddef>

#include "promptaug/kernels.hpp"

// SIMD kernel variants. Each function handles the aligned body with vector
// intrinsics and the tail with the scalar recurrence. Tail handling must match
// the scalar kernels exactly for elementwise ops; reductions may reassociate.

#if defined(__x86_64__) || defined(_M_X64)
#define PROMPTAUG_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#elif defined(__aarch64__) || defined(__ARM_NEON)
#define PROMPTAUG_HAVE_NEON_BUILD 1
#include <arm_neon.h>
#endif

namespace promptaug::kernels {

#if defined(PROMPTAUG_HAVE_AVX2_BUILD)

namespace {

__attribute__((target("avx2,fma"))) float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

__attribute__((target("avx2,fma"))) float dot_avx2(const float* a, const float* b, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    }
    float total = hsum256(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

__attribute__((target("avx2,fma"))) double dot_double_avx2(const float* a, const float* b,
                                                           size_t n) {
    __m256d acc = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d av = _mm256_cvtps_pd(_mm_loadu_ps(a + i));
        const __m256d bv = _mm256_cvtps_pd(_mm_loadu_ps(b + i));
        acc = _mm256_fmadd_pd(av, bv, acc);
    }
    __m128d lo = _mm256_castpd256_pd128(acc);
    __m128d hi = _mm256_extractf128_pd(acc, 1);
    lo = _mm_add_pd(lo, hi);
    double total = _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
    for (; i < n; ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return total;
}

__attribute__((target("avx2,fma"))) float reduce_sum_avx2(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float total = hsum256(acc);
    for (; i < n; ++i) total += x[i];
    return total;
}

__attribute__((target("avx2,fma"))) float reduce_max_avx2(const float* x, size_t n) {
    if (n < 8) {
        float best = x[0];
        for (size_t i = 1; i < n; ++i) best = x[i] > best ? x[i] : best;
        return best;
    }
    __m256 acc = _mm256_loadu_ps(x);
    size_t i = 8;
    for (; i + 8 <= n; i += 8) acc = _mm256_max_ps(acc, _mm256_loadu_ps(x + i));
    __m128 m = _mm_max_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
    m = _mm_max_ps(m, _mm_movehl_ps(m, m));
    m = _mm_max_ss(m, _mm_movehdup_ps(m));
    float best = _mm_cvtss_f32(m);
    for (; i < n; ++i) best = x[i] > best ? x[i] : best;
    return best;
}

__attribute__((target("avx2,fma"))) void axpy_avx2(float a, const float* x, float* y, size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
        _mm256_storeu_ps(y + i, yv);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) void scale_avx2(float a, float* x, size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

__attribute__((target("avx2,fma"))) void vadd_avx2(const float* a, const float* b, float* out,
                                                   size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

__attribute__((target("avx2,fma"))) void vmul_avx2(const float* a, const float* b, float* out,
                                                   size_t n) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

__attribute__((target("avx2,fma"))) void adamw_update_avx2(float* w, const float* g, float* m,
                                                           float* v, size_t n, float lr,
                                                           float beta1, float beta2, float eps,
                                                           float weight_decay, float bc1,
                                                           float bc2) {
    const __m256 b1 = _mm256_set1_ps(beta1);
    const __m256 b1c = _mm256_set1_ps(1.0f - beta1);
    const __m256 b2 = _mm256_set1_ps(beta2);
    const __m256 b2c = _mm256_set1_ps(1.0f - beta2);
    const __m256 inv_bc1 = _mm256_set1_ps(1.0f / bc1);
    const __m256 inv_bc2 = _mm256_set1_ps(1.0f / bc2);
    const __m256 lrv = _mm256_set1_ps(lr);
    const __m256 epsv = _mm256_set1_ps(eps);
    const __m256 wdv = _mm256_set1_ps(weight_decay);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_loadu_ps(m + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        mv = _mm256_add_ps(_mm256_mul_ps(b1, mv), _mm256_mul_ps(b1c, gv));
        vv = _mm256_add_ps(_mm256_mul_ps(b2, vv), _mm256_mul_ps(b2c, _mm256_mul_ps(gv, gv)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_mul_ps(mv, inv_bc1);
        const __m256 vhat = _mm256_mul_ps(vv, inv_bc2);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
        __m256 wv = _mm256_loadu_ps(w + i);
        const __m256 update =
            _mm256_add_ps(_mm256_div_ps(mhat, denom), _mm256_mul_ps(wdv, wv));
        wv = _mm256_sub_ps(wv, _mm256_mul_ps(lrv, update));
        _mm256_storeu_ps(w + i, wv);
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        const float mhat = m[i] * (1.0f / bc1);
        const float vhat = v[i] * (1.0f / bc2);
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
}

}  // namespace

const Ops* simd_ops() {
    static const Ops table{
        "avx2",    dot_avx2,  dot_double_avx2, reduce_sum_avx2,  reduce_max_avx2,
        axpy_avx2, scale_avx2, vadd_avx2,      vmul_avx2,        adamw_update_avx2,
    };
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &table : nullptr;
}

#elif defined(PROMPTAUG_HAVE_NEON_BUILD)

namespace {

float dot_neon(const float* a, const float* b, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vfmaq_f32(acc, vld1q_f32(a + i), vld1q_f32(b + i));
    float total = vaddvq_f32(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

double dot_double_neon(const float* a, const float* b, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t av = vcvt_f64_f32(vld1_f32(a + i));
        const float64x2_t bv = vcvt_f64_f32(vld1_f32(b + i));
        acc = vfmaq_f64(acc, av, bv);
    }
    double total = vaddvq_f64(acc);
    for (; i < n; ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return total;
}

float reduce_sum_neon(const float* x, size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
    float total = vaddvq_f32(acc);
    for (; i < n; ++i) total += x[i];
    return total;
}

float reduce_max_neon(const float* x, size_t n) {
    if (n < 4) {
        float best = x[0];
        for (size_t i = 1; i < n; ++i) best = x[i] > best ? x[i] : best;
        return best;
    }
    float32x4_t acc = vld1q_f32(x);
    size_t i = 4;
    for (; i + 4 <= n; i += 4) acc = vmaxq_f32(acc, vld1q_f32(x + i));
    float best = vmaxvq_f32(acc);
    for (; i < n; ++i) best = x[i] > best ? x[i] : best;
    return best;
}

void axpy_neon(float a, const float* x, float* y, size_t n) {
    const float32x4_t av = vdupq_n_f32(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void scale_neon(float a, float* x, size_t n) {
    const float32x4_t av = vdupq_n_f32(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(x + i, vmulq_f32(av, vld1q_f32(x + i)));
    for (; i < n; ++i) x[i] *= a;
}

void vadd_neon(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void vmul_neon(const float* a, const float* b, float* out, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4) vst1q_f32(out + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void adamw_update_neon(float* w, const float* g, float* m, float* v, size_t n, float lr,
                       float beta1, float beta2, float eps, float weight_decay, float bc1,
                       float bc2) {
    const float32x4_t b1 = vdupq_n_f32(beta1);
    const float32x4_t b1c = vdupq_n_f32(1.0f - beta1);
    const float32x4_t b2 = vdupq_n_f32(beta2);
    const float32x4_t b2c = vdupq_n_f32(1.0f - beta2);
    const float32x4_t inv_bc1 = vdupq_n_f32(1.0f / bc1);
    const float32x4_t inv_bc2 = vdupq_n_f32(1.0f / bc2);
    const float32x4_t lrv = vdupq_n_f32(lr);
    const float32x4_t epsv = vdupq_n_f32(eps);
    const float32x4_t wdv = vdupq_n_f32(weight_decay);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t gv = vld1q_f32(g + i);
        float32x4_t mv = vld1q_f32(m + i);
        float32x4_t vv = vld1q_f32(v + i);
        mv = vaddq_f32(vmulq_f32(b1, mv), vmulq_f32(b1c, gv));
        vv = vaddq_f32(vmulq_f32(b2, vv), vmulq_f32(b2c, vmulq_f32(gv, gv)));
        vst1q_f32(m + i, mv);
        vst1q_f32(v + i, vv);
        const float32x4_t mhat = vmulq_f32(mv, inv_bc1);
        const float32x4_t vhat = vmulq_f32(vv, inv_bc2);
        const float32x4_t denom = vaddq_f32(vsqrtq_f32(vhat), epsv);
        float32x4_t wv = vld1q_f32(w + i);
        const float32x4_t update = vaddq_f32(vdivq_f32(mhat, denom), vmulq_f32(wdv, wv));
        wv = vsubq_f32(wv, vmulq_f32(lrv, update));
        vst1q_f32(w + i, wv);
    }
    for (; i < n; ++i) {
        const float gi = g[i];
        m[i] = beta1 * m[i] + (1.0f - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0f - beta2) * gi * gi;
        const float mhat = m[i] * (1.0f / bc1);
        const float vhat = v[i] * (1.0f / bc2);
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[i]);
    }
}

}  // namespace

const Ops* simd_ops() {
    static const Ops table{
        "neon",    dot_neon,  dot_double_neon, reduce_sum_neon,  reduce_max_neon,
        axpy_neon, scale_neon, vadd_neon,      vmul_neon,        adamw_update_neon,
    };
    return &table;
}

#else

const Ops* simd_ops() { return nullptr; }

#endif

}  // namespace promptaug::kernels
