#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "taper/error.hpp"
#include "taper/rng.hpp"

namespace taper {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

inline void check_shape_valid(const Shape& s) {
    if (s.empty()) throw ShapeError("empty shape");
    for (std::size_t d : s) {
        if (d == 0) throw ShapeError("zero extent in shape " + shape_str(s));
    }
}

// Dense n-dimensional array with an optional gradient slot. The gradient
// vector stays empty until ensure_grad() and then always matches data in
// length.
template <class T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(Shape shape_, T fill = T(0)) : shape(std::move(shape_)) {
        check_shape_valid(shape);
        data.assign(shape_numel(shape), fill);
    }

    Tensor(Shape shape_, std::vector<T> data_) : shape(std::move(shape_)), data(std::move(data_)) {
        check_shape_valid(shape);
        if (data.size() != shape_numel(shape))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t ndim() const { return shape.size(); }

    bool has_grad() const { return !grad.empty(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (const T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    bool grad_finite() const {
        for (const T v : grad) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, T fill = T(0)) {
    return std::make_shared<Tensor<T>>(std::move(shape), fill);
}

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data) {
    return std::make_shared<Tensor<T>>(std::move(shape), std::move(data));
}

template <class T>
TensorPtr<T> make_param(Shape shape, std::vector<T> data) {
    auto t = make_tensor<T>(std::move(shape), std::move(data));
    t->requires_grad = true;
    return t;
}

// He initialization: i.i.d. zero-mean normal with stddev sqrt(2 / fan_in).
template <class T>
Tensor<T> he_init(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
    check_shape_valid(shape);
    if (fan_in < 1) throw ContractError("he_init: fan_in must be >= 1");
    Tensor<T> t(shape);
    Rng rng(seed);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

}  // namespace taper
