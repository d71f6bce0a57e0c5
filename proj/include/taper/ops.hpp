#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>
#include <vector>

#include "taper/autograd.hpp"
#include "taper/kernels.hpp"
#include "taper/tensor.hpp"

namespace taper::ops {

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
inline bool any_requires_grad(std::initializer_list<const TensorPtr<T>*> ts) {
    for (const auto* t : ts) {
        if (*t && (*t)->requires_grad) return true;
    }
    return false;
}

// out-of-place elementwise multiply-accumulate: y += a .* b
template <class T>
inline void mul_acc(const T* a, const T* b, T* y, std::size_t n, std::vector<T>& scratch) {
    scratch.resize(n);
    kern::mul(a, b, scratch.data(), n);
    kern::axpy(T(1), scratch.data(), y, n);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dense linear algebra
// ---------------------------------------------------------------------------

// out[m x n] = a[m x k] * b[k x n]
template <class T>
TensorPtr<T> matmul(Graph<T>& g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2)
        throw ShapeError("matmul: expected rank-2 tensors, got " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
    if (b->dim(0) != k)
        throw ShapeError("matmul: inner extents differ: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    auto out = make_tensor<T>({m, n});
    kern::gemm_nn(m, k, n, a->data.data(), b->data.data(), out->data.data());
    out->requires_grad = a->requires_grad || b->requires_grad;
    g.record("matmul", {a, b}, out, [a, b, out, m, k, n]() {
        const T* gy = out->grad.data();
        if (a->requires_grad) {
            a->ensure_grad();
            kern::gemm_nt(m, n, k, gy, b->data.data(), a->grad.data());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kern::gemm_tn(k, m, n, a->data.data(), gy, b->grad.data());
        }
    });
    return out;
}

// y[n x out] = x[n x in] * w^T + bias; w stored [out x in]
template <class T>
TensorPtr<T> linear(Graph<T>& g, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const std::type_identity_t<TensorPtr<T>>& bias) {
    if (x->ndim() != 2 || w->ndim() != 2)
        throw ShapeError("linear: expected rank-2 input and weight");
    const std::size_t n = x->dim(0), in = x->dim(1), out_f = w->dim(0);
    if (w->dim(1) != in)
        throw ShapeError("linear: weight " + shape_str(w->shape) + " does not accept input " +
                         shape_str(x->shape));
    if (bias && bias->numel() != out_f) throw ShapeError("linear: bias length mismatch");
    auto y = make_tensor<T>({n, out_f});
    kern::gemm_nt(n, in, out_f, x->data.data(), w->data.data(), y->data.data());
    if (bias) {
        for (std::size_t i = 0; i < n; ++i)
            kern::axpy(T(1), bias->data.data(), y->data.data() + i * out_f, out_f);
    }
    y->requires_grad = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    std::vector<TensorPtr<T>> ins{x, w};
    if (bias) ins.push_back(bias);
    g.record("linear", std::move(ins), y, [x, w, bias, y, n, in, out_f]() {
        const T* gy = y->grad.data();
        if (x->requires_grad) {
            x->ensure_grad();
            kern::gemm_nn(n, out_f, in, gy, w->data.data(), x->grad.data());
        }
        if (w->requires_grad) {
            w->ensure_grad();
            kern::gemm_tn(out_f, n, in, gy, x->data.data(), w->grad.data());
        }
        if (bias && bias->requires_grad) {
            bias->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                kern::axpy(T(1), gy + i * out_f, bias->grad.data(), out_f);
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// convolution (cross-correlation, NCHW, im2col + gemm)
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow,
            T* cols) {
    // cols is [c*kh*kw x oh*ow]
    const std::size_t ohw = oh * ow;
    for (std::size_t cc = 0; cc < c; ++cc) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                T* row = cols + ((cc * kh + i) * kw + j) * ohw;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        for (std::size_t ox = 0; ox < ow; ++ox) row[oy * ow + ox] = T(0);
                        continue;
                    }
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        row[oy * ow + ox] =
                            (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                                ? T(0)
                                : x[(cc * h + static_cast<std::size_t>(iy)) * w +
                                    static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_acc(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow, T* dx) {
    const std::size_t ohw = oh * ow;
    for (std::size_t cc = 0; cc < c; ++cc) {
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j) {
                const T* row = cols + ((cc * kh + i) * kw + j) * ohw;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        dx[(cc * h + static_cast<std::size_t>(iy)) * w +
                           static_cast<std::size_t>(ix)] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
TensorPtr<T> conv2d(Graph<T>& g, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const std::type_identity_t<TensorPtr<T>>& bias, std::size_t stride,
                    std::size_t pad) {
    if (x->ndim() != 4 || w->ndim() != 4)
        throw ShapeError("conv2d: expected NCHW input and FCHW weight");
    const std::size_t n = x->dim(0), c = x->dim(1), h = x->dim(2), wd = x->dim(3);
    const std::size_t f = w->dim(0), kh = w->dim(2), kw = w->dim(3);
    if (w->dim(1) != c)
        throw ShapeError("conv2d: input has " + std::to_string(c) + " channels but weight expects " +
                         std::to_string(w->dim(1)));
    if (stride == 0) throw ContractError("conv2d: stride must be positive");
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw ShapeError("conv2d: kernel larger than padded input");
    if (bias && bias->numel() != f) throw ShapeError("conv2d: bias length mismatch");
    const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (wd + 2 * pad - kw) / stride + 1;
    const std::size_t ckk = c * kh * kw;
    const std::size_t ohw = oh * ow;

    auto y = make_tensor<T>({n, f, oh, ow});
    std::vector<T> cols(ckk * ohw);
    for (std::size_t s = 0; s < n; ++s) {
        detail::im2col(x->data.data() + s * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                       cols.data());
        T* ys = y->data.data() + s * f * ohw;
        kern::gemm_nn(f, ckk, ohw, w->data.data(), cols.data(), ys);
        if (bias) {
            for (std::size_t ff = 0; ff < f; ++ff)
                kern::affine(ys + ff * ohw, T(1), bias->data[ff], ys + ff * ohw, ohw);
        }
    }
    y->requires_grad = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    std::vector<TensorPtr<T>> ins{x, w};
    if (bias) ins.push_back(bias);
    g.record("conv2d", std::move(ins), y,
             [x, w, bias, y, n, c, h, wd, f, kh, kw, stride, pad, oh, ow, ckk, ohw]() {
                 std::vector<T> cols(ckk * ohw);
                 std::vector<T> dcols;
                 if (x->requires_grad) {
                     x->ensure_grad();
                     dcols.assign(ckk * ohw, T(0));
                 }
                 if (w->requires_grad) w->ensure_grad();
                 if (bias && bias->requires_grad) bias->ensure_grad();
                 for (std::size_t s = 0; s < n; ++s) {
                     const T* gys = y->grad.data() + s * f * ohw;
                     if (w->requires_grad || x->requires_grad) {
                         detail::im2col(x->data.data() + s * c * h * wd, c, h, wd, kh, kw, stride,
                                        pad, oh, ow, cols.data());
                     }
                     if (w->requires_grad) {
                         kern::gemm_nt(f, ohw, ckk, gys, cols.data(), w->grad.data());
                     }
                     if (x->requires_grad) {
                         std::fill(dcols.begin(), dcols.end(), T(0));
                         kern::gemm_tn(ckk, f, ohw, w->data.data(), gys, dcols.data());
                         detail::col2im_acc(dcols.data(), c, h, wd, kh, kw, stride, pad, oh, ow,
                                            x->grad.data() + s * c * h * wd);
                     }
                     if (bias && bias->requires_grad) {
                         for (std::size_t ff = 0; ff < f; ++ff)
                             bias->grad[ff] += kern::sum(gys + ff * ohw, ohw);
                     }
                 }
             });
    return y;
}

// ---------------------------------------------------------------------------
// activations / pooling / reshape
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> relu(Graph<T>& g, const TensorPtr<T>& x) {
    auto y = make_tensor<T>(x->shape);
    kern::relu(x->data.data(), y->data.data(), x->numel());
    y->requires_grad = x->requires_grad;
    g.record("relu", {x}, y, [x, y]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::relu_grad(x->data.data(), y->grad.data(), x->grad.data(), x->numel());
    });
    return y;
}

template <class T>
TensorPtr<T> maxpool2d(Graph<T>& g, const TensorPtr<T>& x, std::size_t k, std::size_t stride) {
    if (x->ndim() != 4) throw ShapeError("maxpool2d: expected NCHW input");
    if (k == 0 || stride == 0) throw ContractError("maxpool2d: window and stride must be positive");
    const std::size_t n = x->dim(0), c = x->dim(1), h = x->dim(2), w = x->dim(3);
    if (h < k || w < k) throw ShapeError("maxpool2d: window larger than input");
    const std::size_t oh = (h - k) / stride + 1;
    const std::size_t ow = (w - k) / stride + 1;
    auto y = make_tensor<T>({n, c, oh, ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(y->numel());
    std::size_t oi = 0;
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t cc = 0; cc < c; ++cc) {
            const T* plane = x->data.data() + (s * c + cc) * h * w;
            const std::size_t plane_off = (s * c + cc) * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox, ++oi) {
                    std::size_t best = oy * stride * w + ox * stride;
                    T bv = plane[best];
                    for (std::size_t i = 0; i < k; ++i) {
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
                            if (plane[idx] > bv) {  // first max wins ties
                                bv = plane[idx];
                                best = idx;
                            }
                        }
                    }
                    y->data[oi] = bv;
                    (*argmax)[oi] = plane_off + best;
                }
            }
        }
    }
    y->requires_grad = x->requires_grad;
    g.record("maxpool2d", {x}, y, [x, y, argmax]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (std::size_t i = 0; i < y->numel(); ++i) x->grad[(*argmax)[i]] += y->grad[i];
    });
    return y;
}

// [n, ...] -> [n, prod(rest)]
template <class T>
TensorPtr<T> flatten(Graph<T>& g, const TensorPtr<T>& x) {
    if (x->ndim() < 2) throw ShapeError("flatten: expected rank >= 2");
    const std::size_t n = x->dim(0);
    auto y = make_tensor<T>({n, x->numel() / n}, x->data);
    y->requires_grad = x->requires_grad;
    g.record("flatten", {x}, y, [x, y]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::axpy(T(1), y->grad.data(), x->grad.data(), x->numel());
    });
    return y;
}

// channelwise multiply: y[s, f, ...] = gamma[f] * x[s, f, ...]
template <class T>
TensorPtr<T> channel_scale(Graph<T>& g, const TensorPtr<T>& x, const TensorPtr<T>& gamma) {
    if (x->ndim() < 2) throw ShapeError("channel_scale: expected rank >= 2");
    const std::size_t n = x->dim(0), f = x->dim(1);
    const std::size_t spatial = x->numel() / (n * f);
    if (gamma->numel() != f)
        throw ShapeError("channel_scale: gamma length " + std::to_string(gamma->numel()) +
                         " != filter count " + std::to_string(f));
    auto y = make_tensor<T>(x->shape);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t ff = 0; ff < f; ++ff) {
            const std::size_t off = (s * f + ff) * spatial;
            kern::scale(x->data.data() + off, gamma->data[ff], y->data.data() + off, spatial);
        }
    }
    y->requires_grad = x->requires_grad || gamma->requires_grad;
    g.record("channel_scale", {x, gamma}, y, [x, gamma, y, n, f, spatial]() {
        if (gamma->requires_grad) gamma->ensure_grad();
        if (x->requires_grad) x->ensure_grad();
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t ff = 0; ff < f; ++ff) {
                const std::size_t off = (s * f + ff) * spatial;
                if (gamma->requires_grad)
                    gamma->grad[ff] +=
                        kern::dot(y->grad.data() + off, x->data.data() + off, spatial);
                if (x->requires_grad)
                    kern::axpy(gamma->data[ff], y->grad.data() + off, x->grad.data() + off,
                               spatial);
            }
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

// Train mode normalizes with per-filter batch statistics and updates the
// running exponential moving averages in place (biased variance throughout);
// eval mode applies the running statistics. Gradients flow to x, gamma, beta.
template <class T>
TensorPtr<T> batchnorm(Graph<T>& g, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                       const TensorPtr<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, T eps, T momentum, bool train) {
    if (x->ndim() != 4 && x->ndim() != 2)
        throw ShapeError("batchnorm: expected NCHW or NF input, got " + shape_str(x->shape));
    const std::size_t n = x->dim(0), f = x->dim(1);
    const std::size_t spatial = x->numel() / (n * f);
    if (gamma->numel() != f || beta->numel() != f || running_mean.size() != f ||
        running_var.size() != f)
        throw ShapeError("batchnorm: parameter length != filter count");
    if (!(eps > T(0))) throw ContractError("batchnorm: eps must be positive");
    const std::size_t m = n * spatial;
    if (train && m < 2)
        throw DegenerateError("batchnorm: train mode needs at least 2 values per filter");

    auto y = make_tensor<T>(x->shape);
    auto mean = std::make_shared<std::vector<T>>(f);
    auto inv_std = std::make_shared<std::vector<T>>(f);
    for (std::size_t ff = 0; ff < f; ++ff) {
        T mu, var;
        if (train) {
            T total = 0;
            for (std::size_t s = 0; s < n; ++s)
                total += kern::sum(x->data.data() + (s * f + ff) * spatial, spatial);
            mu = total / static_cast<T>(m);
            T ss = 0;
            for (std::size_t s = 0; s < n; ++s)
                ss += kern::sumsq_centered(x->data.data() + (s * f + ff) * spatial, mu, spatial);
            var = ss / static_cast<T>(m);
            running_mean[ff] = (T(1) - momentum) * running_mean[ff] + momentum * mu;
            running_var[ff] = (T(1) - momentum) * running_var[ff] + momentum * var;
        } else {
            mu = running_mean[ff];
            var = running_var[ff];
        }
        const T inv = T(1) / std::sqrt(var + eps);
        (*mean)[ff] = mu;
        (*inv_std)[ff] = inv;
        const T a = gamma->data[ff] * inv;
        const T b = beta->data[ff] - a * mu;
        for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * f + ff) * spatial;
            kern::affine(x->data.data() + off, a, b, y->data.data() + off, spatial);
        }
    }

    y->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    g.record("batchnorm", {x, gamma, beta}, y,
             [x, gamma, beta, y, mean, inv_std, n, f, spatial, m, train]() {
                 std::vector<T> xhat(spatial), tmp(spatial);
                 if (gamma->requires_grad) gamma->ensure_grad();
                 if (beta->requires_grad) beta->ensure_grad();
                 if (x->requires_grad) x->ensure_grad();
                 for (std::size_t ff = 0; ff < f; ++ff) {
                     const T inv = (*inv_std)[ff];
                     const T mu = (*mean)[ff];
                     // first pass: per-filter reductions
                     T gsum = 0, gdot = 0;
                     for (std::size_t s = 0; s < n; ++s) {
                         const std::size_t off = (s * f + ff) * spatial;
                         const T* gy = y->grad.data() + off;
                         gsum += kern::sum(gy, spatial);
                         kern::affine(x->data.data() + off, inv, -inv * mu, xhat.data(), spatial);
                         gdot += kern::dot(gy, xhat.data(), spatial);
                     }
                     if (gamma->requires_grad) gamma->grad[ff] += gdot;
                     if (beta->requires_grad) beta->grad[ff] += gsum;
                     if (!x->requires_grad) continue;
                     if (train) {
                         const T A = gamma->data[ff] * inv;
                         const T B = -A * gsum / static_cast<T>(m);
                         const T C = -A * gdot / static_cast<T>(m);
                         for (std::size_t s = 0; s < n; ++s) {
                             const std::size_t off = (s * f + ff) * spatial;
                             kern::axpy(A, y->grad.data() + off, x->grad.data() + off, spatial);
                             kern::affine(x->data.data() + off, inv, -inv * mu, xhat.data(),
                                          spatial);
                             kern::affine(xhat.data(), C, B, tmp.data(), spatial);
                             kern::axpy(T(1), tmp.data(), x->grad.data() + off, spatial);
                         }
                     } else {
                         const T A = gamma->data[ff] * inv;
                         for (std::size_t s = 0; s < n; ++s) {
                             const std::size_t off = (s * f + ff) * spatial;
                             kern::axpy(A, y->grad.data() + off, x->grad.data() + off, spatial);
                         }
                     }
                 }
             });
    return y;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> softmax_cross_entropy(Graph<T>& g, const TensorPtr<T>& logits,
                                   const std::vector<int>& labels) {
    if (logits->ndim() != 2) throw ShapeError("softmax_cross_entropy: expected [n x k] logits");
    const std::size_t n = logits->dim(0), k = logits->dim(1);
    if (labels.size() != n)
        throw ShapeError("softmax_cross_entropy: got " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range [0," + std::to_string(k) + ") at row " +
                             std::to_string(i));
    }
    auto probs = std::make_shared<std::vector<T>>(n * k);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits->data.data() + i * k;
        T mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T denom = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const T e = std::exp(row[j] - mx);
            (*probs)[i * k + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] /= denom;
        loss -= std::log((*probs)[i * k + static_cast<std::size_t>(labels[i])]);
    }
    auto out = make_tensor<T>({1}, std::vector<T>{loss / static_cast<T>(n)});
    out->requires_grad = logits->requires_grad;
    auto lab = std::make_shared<std::vector<int>>(labels);
    g.record("softmax_cross_entropy", {logits}, out, [logits, out, probs, lab, n, k]() {
        if (!logits->requires_grad) return;
        logits->ensure_grad();
        const T gy = out->grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                T p = (*probs)[i * k + j];
                if (j == static_cast<std::size_t>((*lab)[i])) p -= T(1);
                logits->grad[i * k + j] += gy * p;
            }
        }
    });
    return out;
}

template <class T>
TensorPtr<T> mse(Graph<T>& g, const TensorPtr<T>& pred, const TensorPtr<T>& target) {
    if (pred->shape != target->shape)
        throw ShapeError("mse: shape mismatch " + shape_str(pred->shape) + " vs " +
                         shape_str(target->shape));
    const std::size_t n = pred->numel();
    std::vector<T> diff(n);
    kern::sub(pred->data.data(), target->data.data(), diff.data(), n);
    const T loss = kern::dot(diff.data(), diff.data(), n) / static_cast<T>(n);
    auto out = make_tensor<T>({1}, std::vector<T>{loss});
    out->requires_grad = pred->requires_grad || target->requires_grad;
    g.record("mse", {pred, target}, out, [pred, target, out, n]() {
        const T c = out->grad[0] * T(2) / static_cast<T>(n);
        std::vector<T> diff(n);
        kern::sub(pred->data.data(), target->data.data(), diff.data(), n);
        if (pred->requires_grad) {
            pred->ensure_grad();
            kern::axpy(c, diff.data(), pred->grad.data(), n);
        }
        if (target->requires_grad) {
            target->ensure_grad();
            kern::axpy(-c, diff.data(), target->grad.data(), n);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions and scalar arithmetic (used to compose the training objective)
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> sum(Graph<T>& g, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1}, std::vector<T>{kern::sum(x->data.data(), x->numel())});
    out->requires_grad = x->requires_grad;
    g.record("sum", {x}, out, [x, out]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T gy = out->grad[0];
        for (auto& v : x->grad) v += gy;
    });
    return out;
}

template <class T>
TensorPtr<T> add(Graph<T>& g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) throw ShapeError("add: shape mismatch");
    auto out = make_tensor<T>(a->shape);
    kern::add(a->data.data(), b->data.data(), out->data.data(), a->numel());
    out->requires_grad = a->requires_grad || b->requires_grad;
    g.record("add", {a, b}, out, [a, b, out]() {
        if (a->requires_grad) {
            a->ensure_grad();
            kern::axpy(T(1), out->grad.data(), a->grad.data(), a->numel());
        }
        if (b->requires_grad) {
            b->ensure_grad();
            kern::axpy(T(1), out->grad.data(), b->grad.data(), b->numel());
        }
    });
    return out;
}

template <class T>
TensorPtr<T> mul(Graph<T>& g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape) throw ShapeError("mul: shape mismatch");
    auto out = make_tensor<T>(a->shape);
    kern::mul(a->data.data(), b->data.data(), out->data.data(), a->numel());
    out->requires_grad = a->requires_grad || b->requires_grad;
    g.record("mul", {a, b}, out, [a, b, out]() {
        std::vector<T> scratch;
        if (a->requires_grad) {
            a->ensure_grad();
            detail::mul_acc(out->grad.data(), b->data.data(), a->grad.data(), a->numel(), scratch);
        }
        if (b->requires_grad) {
            b->ensure_grad();
            detail::mul_acc(out->grad.data(), a->data.data(), b->grad.data(), b->numel(), scratch);
        }
    });
    return out;
}

template <class T>
TensorPtr<T> scale(Graph<T>& g, const TensorPtr<T>& x, T alpha) {
    auto out = make_tensor<T>(x->shape);
    kern::scale(x->data.data(), alpha, out->data.data(), x->numel());
    out->requires_grad = x->requires_grad;
    g.record("scale", {x}, out, [x, out, alpha]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        kern::axpy(alpha, out->grad.data(), x->grad.data(), x->numel());
    });
    return out;
}

// scalar / scalar division; the caller is responsible for rejecting a zero
// denominator before calling (see objective::pruning_ratio_terms)
template <class T>
TensorPtr<T> div_scalar(Graph<T>& g, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->numel() != 1 || b->numel() != 1) throw ShapeError("div_scalar: expected scalars");
    auto out = make_tensor<T>({1}, std::vector<T>{a->data[0] / b->data[0]});
    out->requires_grad = a->requires_grad || b->requires_grad;
    g.record("div_scalar", {a, b}, out, [a, b, out]() {
        const T gy = out->grad[0];
        const T bv = b->data[0];
        if (a->requires_grad) {
            a->ensure_grad();
            a->grad[0] += gy / bv;
        }
        if (b->requires_grad) {
            b->ensure_grad();
            b->grad[0] -= gy * a->data[0] / (bv * bv);
        }
    });
    return out;
}

template <class T>
TensorPtr<T> masked_sum(Graph<T>& g, const TensorPtr<T>& x, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != x->numel()) throw ShapeError("masked_sum: mask length mismatch");
    T total = 0;
    for (std::size_t i = 0; i < x->numel(); ++i) {
        if (mask[i]) total += x->data[i];
    }
    auto out = make_tensor<T>({1}, std::vector<T>{total});
    out->requires_grad = x->requires_grad;
    auto m = std::make_shared<std::vector<std::uint8_t>>(mask);
    g.record("masked_sum", {x}, out, [x, out, m]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T gy = out->grad[0];
        for (std::size_t i = 0; i < x->numel(); ++i) {
            if ((*m)[i]) x->grad[i] += gy;
        }
    });
    return out;
}

// sum of |x[i]| over unmasked entries; subgradient sign(x), 0 at 0
template <class T>
TensorPtr<T> masked_abs_sum(Graph<T>& g, const TensorPtr<T>& x,
                            const std::vector<std::uint8_t>& mask) {
    if (mask.size() != x->numel()) throw ShapeError("masked_abs_sum: mask length mismatch");
    T total = 0;
    for (std::size_t i = 0; i < x->numel(); ++i) {
        if (mask[i]) total += std::abs(x->data[i]);
    }
    auto out = make_tensor<T>({1}, std::vector<T>{total});
    out->requires_grad = x->requires_grad;
    auto m = std::make_shared<std::vector<std::uint8_t>>(mask);
    g.record("masked_abs_sum", {x}, out, [x, out, m]() {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T gy = out->grad[0];
        for (std::size_t i = 0; i < x->numel(); ++i) {
            if (!(*m)[i]) continue;
            const T v = x->data[i];
            if (v > T(0))
                x->grad[i] += gy;
            else if (v < T(0))
                x->grad[i] -= gy;
        }
    });
    return out;
}

}  // namespace taper::ops
