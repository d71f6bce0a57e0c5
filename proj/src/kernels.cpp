#include "taper/kernels.hpp"

#include <atomic>
#include <cstddef>

#include "kernel_table.hpp"
#include "taper/error.hpp"

// Canonical arithmetic order
// --------------------------
// Reductions run 8 independent accumulators over the blocked region
// (acc[l] += x[i + l], i advancing by 8), fold acc[0..7] sequentially, then
// add the tail sequentially. The AVX2 backend maps the 8 accumulators onto
// vector lanes and performs the identical operations, and no kernel uses FMA
// (the build also sets -ffp-contract=off), so scalar and SIMD results are
// bitwise-equal. GEMM variants either accumulate sequentially over k per
// output element (nn, tn) or reduce with dot (nt); there is no other
// reordering freedom anywhere.

namespace taper::kern {

// ---------------------------------------------------------------------------
// Scalar reference kernels
// ---------------------------------------------------------------------------

namespace {
namespace scalar {

template <class T>
T sum(const T* x, std::size_t n) {
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l];
    }
    T total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    for (; i < n; ++i) total += x[i];
    return total;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    }
    T total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

template <class T>
T sumsq_centered(const T* x, T mean, std::size_t n) {
    T acc[kLanes] = {};
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) {
            const T d = x[i + l] - mean;
            acc[l] += d * d;
        }
    }
    T total = 0;
    for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
    for (; i < n; ++i) {
        const T d = x[i] - mean;
        total += d * d;
    }
    return total;
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(const T* x, T alpha, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <class T>
void affine(const T* x, T a, T b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

template <class T>
void add(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class T>
void sub(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <class T>
void mul(const T* a, const T* b, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class T>
void relu(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_grad(const T* x, const T* gy, T* gx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > T(0)) gx[i] += gy[i];
    }
}

}  // namespace scalar

template <class T>
constexpr KernelTable<T> kScalarTable = {
    scalar::sum<T>,  scalar::dot<T>,   scalar::sumsq_centered<T>,
    scalar::axpy<T>, scalar::scale<T>, scalar::affine<T>,
    scalar::add<T>,  scalar::sub<T>,   scalar::mul<T>,
    scalar::relu<T>, scalar::relu_grad<T>,
};

std::atomic<const KernelTable<float>*> g_table_f32{&kScalarTable<float>};
std::atomic<const KernelTable<double>*> g_table_f64{&kScalarTable<double>};
std::atomic<Backend> g_backend{Backend::scalar};

template <class T>
const KernelTable<T>& table();

template <>
const KernelTable<float>& table<float>() {
    return *g_table_f32.load(std::memory_order_relaxed);
}

template <>
const KernelTable<double>& table<double>() {
    return *g_table_f64.load(std::memory_order_relaxed);
}

}  // namespace

// ---------------------------------------------------------------------------
// Backend selection
// ---------------------------------------------------------------------------

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "unknown";
}

std::vector<Backend> available_backends() {
    std::vector<Backend> out{Backend::scalar};
#if TAPER_HAVE_AVX2_BACKEND
    if (__builtin_cpu_supports("avx2")) out.push_back(Backend::avx2);
#endif
    return out;
}

Backend preferred_backend() {
#if TAPER_HAVE_AVX2_BACKEND
    if (__builtin_cpu_supports("avx2")) return Backend::avx2;
#endif
    return Backend::scalar;
}

Backend active_backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) {
    switch (b) {
        case Backend::scalar:
            g_table_f32.store(&kScalarTable<float>, std::memory_order_relaxed);
            g_table_f64.store(&kScalarTable<double>, std::memory_order_relaxed);
            break;
        case Backend::avx2:
#if TAPER_HAVE_AVX2_BACKEND
            if (!__builtin_cpu_supports("avx2"))
                throw ContractError("avx2 backend requested but CPU lacks AVX2");
            g_table_f32.store(&avx2_table_f32(), std::memory_order_relaxed);
            g_table_f64.store(&avx2_table_f64(), std::memory_order_relaxed);
            break;
#else
            throw ContractError("avx2 backend not built for this architecture");
#endif
    }
    g_backend.store(b, std::memory_order_relaxed);
}

namespace {
struct BackendInit {
    BackendInit() { set_backend(preferred_backend()); }
};
const BackendInit g_backend_init{};
}  // namespace

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

template <class T> T sum(const T* x, std::size_t n) { return table<T>().sum(x, n); }
template <class T> T dot(const T* a, const T* b, std::size_t n) { return table<T>().dot(a, b, n); }
template <class T> T sumsq_centered(const T* x, T mean, std::size_t n) {
    return table<T>().sumsq_centered(x, mean, n);
}
template <class T> void axpy(T alpha, const T* x, T* y, std::size_t n) {
    table<T>().axpy(alpha, x, y, n);
}
template <class T> void scale(const T* x, T alpha, T* y, std::size_t n) {
    table<T>().scale(x, alpha, y, n);
}
template <class T> void affine(const T* x, T a, T b, T* y, std::size_t n) {
    table<T>().affine(x, a, b, y, n);
}
template <class T> void add(const T* a, const T* b, T* y, std::size_t n) {
    table<T>().add(a, b, y, n);
}
template <class T> void sub(const T* a, const T* b, T* y, std::size_t n) {
    table<T>().sub(a, b, y, n);
}
template <class T> void mul(const T* a, const T* b, T* y, std::size_t n) {
    table<T>().mul(a, b, y, n);
}
template <class T> void relu(const T* x, T* y, std::size_t n) { table<T>().relu(x, y, n); }
template <class T> void relu_grad(const T* x, const T* gy, T* gx, std::size_t n) {
    table<T>().relu_grad(x, gy, gx, n);
}

template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            axpy(a[i * k + kk], b + kk * n, c + i * n, n);
        }
    }
}

template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        for (std::size_t i = 0; i < m; ++i) {
            axpy(a[kk * m + i], b + kk * n, c + i * n, n);
        }
    }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            c[i * n + j] += dot(a + i * k, b + j * k, k);
        }
    }
}

#define TAPER_INSTANTIATE_KERNELS(T)                                              \
    template T sum<T>(const T*, std::size_t);                                     \
    template T dot<T>(const T*, const T*, std::size_t);                           \
    template T sumsq_centered<T>(const T*, T, std::size_t);                       \
    template void axpy<T>(T, const T*, T*, std::size_t);                          \
    template void scale<T>(const T*, T, T*, std::size_t);                         \
    template void affine<T>(const T*, T, T, T*, std::size_t);                     \
    template void add<T>(const T*, const T*, T*, std::size_t);                    \
    template void sub<T>(const T*, const T*, T*, std::size_t);                    \
    template void mul<T>(const T*, const T*, T*, std::size_t);                    \
    template void relu<T>(const T*, T*, std::size_t);                             \
    template void relu_grad<T>(const T*, const T*, T*, std::size_t);              \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*); \
    template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*); \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);

TAPER_INSTANTIATE_KERNELS(float)
TAPER_INSTANTIATE_KERNELS(double)

#undef TAPER_INSTANTIATE_KERNELS

}  // namespace taper::kern
