#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vtforge/error.hpp"

namespace vtforge {

// Dimension list. Rank 0 with one element is a scalar.
using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) fail(ErrKind::kShape, "tensor: non-positive dimension in shape " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Dense row-major tensor with an optional gradient slot of the same shape.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until a backward pass populates it

    Tensor() : data(1, T(0)) {}  // scalar zero
    explicit Tensor(Shape s) : shape(std::move(s)) { data.assign(shape_numel(shape), T(0)); }
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            fail(ErrKind::kShape, "tensor: shape " + shape_str(shape) + " does not match payload of " +
                                      std::to_string(data.size()) + " values");
    }

    static Tensor scalar(T v) {
        Tensor t;
        t.data[0] = v;
        return t;
    }
    static Tensor vec(std::vector<T> v) {
        Shape s{static_cast<int>(v.size())};
        return Tensor(std::move(s), std::move(v));
    }
    static Tensor mat(int r, int c, std::vector<T> v) { return Tensor(Shape{r, c}, std::move(v)); }

    size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    int rows() const {
        if (rank() != 2) fail(ErrKind::kShape, "tensor: rows() on shape " + shape_str(shape));
        return shape[0];
    }
    int cols() const {
        if (rank() != 2) fail(ErrKind::kShape, "tensor: cols() on shape " + shape_str(shape));
        return shape[1];
    }

    T& operator()(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
    const T& operator()(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    Tensor<To> out;
    out.shape = t.shape;
    out.data.assign(t.data.begin(), t.data.end());
    out.requires_grad = t.requires_grad;
    return out;
}

}  // namespace vtforge
