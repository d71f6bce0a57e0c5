#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace taper::kern {

// Runtime-selected SIMD backend. Every backend implements the same canonical
// arithmetic order (see kernels.cpp), so results are bitwise-identical across
// backends; selection is purely a speed choice.
enum class Backend {
    scalar,
    avx2,
};

const char* backend_name(Backend b);

// Backends usable on this machine (scalar always included).
std::vector<Backend> available_backends();

// Fastest available backend.
Backend preferred_backend();

Backend active_backend();

// Throws ContractError if the backend is not available on this CPU.
void set_backend(Backend b);

// ---------------------------------------------------------------------------
// Primitive kernels. Reductions (sum, dot, sumsq_centered) accumulate in the
// canonical 8-lane blocked order; elementwise kernels have no ordering freedom.
// ---------------------------------------------------------------------------

template <class T> T sum(const T* x, std::size_t n);
template <class T> T dot(const T* a, const T* b, std::size_t n);
// sum of (x[i] - mean)^2
template <class T> T sumsq_centered(const T* x, T mean, std::size_t n);

// y[i] += alpha * x[i]
template <class T> void axpy(T alpha, const T* x, T* y, std::size_t n);
// y[i] = alpha * x[i]
template <class T> void scale(const T* x, T alpha, T* y, std::size_t n);
// y[i] = a * x[i] + b
template <class T> void affine(const T* x, T a, T b, T* y, std::size_t n);
template <class T> void add(const T* a, const T* b, T* y, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* y, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* y, std::size_t n);
// y[i] = max(x[i], 0)
template <class T> void relu(const T* x, T* y, std::size_t n);
// gx[i] += gy[i] where x[i] > 0
template <class T> void relu_grad(const T* x, const T* gy, T* gx, std::size_t n);

// ---------------------------------------------------------------------------
// Row-major GEMM, always accumulating into c. Built on axpy/dot so every
// backend agrees bitwise: nn/tn accumulate over k sequentially per output
// element, nt reduces with the canonical dot.
// ---------------------------------------------------------------------------

// c[m x n] += a[m x k] * b[k x n]
template <class T> void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
                                const T* a, const T* b, T* c);
// c[m x n] += a^T * b with a stored [k x m], b [k x n]
template <class T> void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
                                const T* a, const T* b, T* c);
// c[m x n] += a * b^T with a [m x k], b stored [n x k]
template <class T> void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
                                const T* a, const T* b, T* c);

}  // namespace taper::kern
