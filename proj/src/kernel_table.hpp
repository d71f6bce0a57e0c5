#pragma once

#include <cstddef>

// Internal dispatch table shared by the backend translation units.
// Not part of the public API.

namespace taper::kern {

constexpr std::size_t kLanes = 8;  // canonical reduction block width

template <class T>
struct KernelTable {
    T (*sum)(const T*, std::size_t);
    T (*dot)(const T*, const T*, std::size_t);
    T (*sumsq_centered)(const T*, T, std::size_t);
    void (*axpy)(T, const T*, T*, std::size_t);
    void (*scale)(const T*, T, T*, std::size_t);
    void (*affine)(const T*, T, T, T*, std::size_t);
    void (*add)(const T*, const T*, T*, std::size_t);
    void (*sub)(const T*, const T*, T*, std::size_t);
    void (*mul)(const T*, const T*, T*, std::size_t);
    void (*relu)(const T*, T*, std::size_t);
    void (*relu_grad)(const T*, const T*, T*, std::size_t);
};

#if defined(__x86_64__) || defined(_M_X64)
#define TAPER_HAVE_AVX2_BACKEND 1
const KernelTable<float>& avx2_table_f32();
const KernelTable<double>& avx2_table_f64();
#else
#define TAPER_HAVE_AVX2_BACKEND 0
#endif

}  // namespace taper::kern
