// AVX2 variants of the primitive kernels. Lane layout mirrors the scalar
// reference's 8-accumulator canonical order exactly (f64 uses two __m256d,
// f32 one __m256), folds are sequential in lane order, and FMA is never used,
// so every result is bitwise-identical to the scalar backend.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstddef>

#include "kernel_table.hpp"

namespace taper::kern {
namespace {

// ----------------------------- double ------------------------------------

double sum_f64(const double* x, std::size_t n) {
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        a0 = _mm256_add_pd(a0, _mm256_loadu_pd(x + i));
        a1 = _mm256_add_pd(a1, _mm256_loadu_pd(x + i + 4));
    }
    double lanes[kLanes];
    _mm256_storeu_pd(lanes, a0);
    _mm256_storeu_pd(lanes + 4, a1);
    double total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) total += x[i];
    return total;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        a0 = _mm256_add_pd(a0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        a1 = _mm256_add_pd(a1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    double lanes[kLanes];
    _mm256_storeu_pd(lanes, a0);
    _mm256_storeu_pd(lanes + 4, a1);
    double total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

double sumsq_centered_f64(const double* x, double mean, std::size_t n) {
    const __m256d mv = _mm256_set1_pd(mean);
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), mv);
        const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), mv);
        a0 = _mm256_add_pd(a0, _mm256_mul_pd(d0, d0));
        a1 = _mm256_add_pd(a1, _mm256_mul_pd(d1, d1));
    }
    double lanes[kLanes];
    _mm256_storeu_pd(lanes, a0);
    _mm256_storeu_pd(lanes + 4, a1);
    double total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) {
        const double d = x[i] - mean;
        total += d * d;
    }
    return total;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d yv = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(yv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f64(const double* x, double alpha, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
    }
    for (; i < n; ++i) y[i] = alpha * x[i];
}

void affine_f64(const double* x, double a, double b, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    const __m256d bv = _mm256_set1_pd(b);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(av, _mm256_loadu_pd(x + i)), bv));
    }
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

void add_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void relu_f64(const double* x, double* y, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_grad_f64(const double* x, const double* gy, double* gx, std::size_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gxv = _mm256_loadu_pd(gx + i);
        const __m256d s = _mm256_add_pd(gxv, _mm256_loadu_pd(gy + i));
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_pd(gx + i, _mm256_blendv_pd(gxv, s, mask));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0) gx[i] += gy[i];
    }
}

// ----------------------------- float --------------------------------------

float sum_f32(const float* x, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    }
    float lanes[kLanes];
    _mm256_storeu_ps(lanes, acc);
    float total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) total += x[i];
    return total;
}

float dot_f32(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    float lanes[kLanes];
    _mm256_storeu_ps(lanes, acc);
    float total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

float sumsq_centered_f32(const float* x, float mean, std::size_t n) {
    const __m256 mv = _mm256_set1_ps(mean);
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), mv);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(d, d));
    }
    float lanes[kLanes];
    _mm256_storeu_ps(lanes, acc);
    float total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
    for (; i < n; ++i) {
        const float d = x[i] - mean;
        total += d * d;
    }
    return total;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 yv = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_add_ps(yv, _mm256_mul_ps(av, _mm256_loadu_ps(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(const float* x, float alpha, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    }
    for (; i < n; ++i) y[i] = alpha * x[i];
}

void affine_f32(const float* x, float a, float b, float* y, std::size_t n) {
    const __m256 av = _mm256_set1_ps(a);
    const __m256 bv = _mm256_set1_ps(b);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_mul_ps(av, _mm256_loadu_ps(x + i)), bv));
    }
    for (; i < n; ++i) y[i] = a * x[i] + b;
}

void add_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void relu_f32(const float* x, float* y, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_grad_f32(const float* x, const float* gy, float* gx, std::size_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gxv = _mm256_loadu_ps(gx + i);
        const __m256 s = _mm256_add_ps(gxv, _mm256_loadu_ps(gy + i));
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(gx + i, _mm256_blendv_ps(gxv, s, mask));
    }
    for (; i < n; ++i) {
        if (x[i] > 0.0f) gx[i] += gy[i];
    }
}

}  // namespace

const KernelTable<float>& avx2_table_f32() {
    static const KernelTable<float> t = {
        sum_f32,  dot_f32,   sumsq_centered_f32,
        axpy_f32, scale_f32, affine_f32,
        add_f32,  sub_f32,   mul_f32,
        relu_f32, relu_grad_f32,
    };
    return t;
}

const KernelTable<double>& avx2_table_f64() {
    static const KernelTable<double> t = {
        sum_f64,  dot_f64,   sumsq_centered_f64,
        axpy_f64, scale_f64, affine_f64,
        add_f64,  sub_f64,   mul_f64,
        relu_f64, relu_grad_f64,
    };
    return t;
}

}  // namespace taper::kern

#endif  // x86_64
