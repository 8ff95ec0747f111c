#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "t5lab/error.hpp"

namespace t5lab {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. grad, when allocated, always has the same length as data.
template <class Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
        for (int64_t dim : shape) {
            if (dim <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape s) { return full(std::move(s), Real(0)); }

    static Tensor full(Shape s, Real v) {
        int64_t n = shape_numel(s);
        return Tensor(std::move(s), std::vector<Real>(static_cast<size_t>(n), v));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }

    int64_t rows() const {
        if (rank() != 2) throw ShapeError("tensor: rows() on rank-" + std::to_string(rank()) + " tensor");
        return shape[0];
    }
    int64_t cols() const {
        if (rank() != 2) throw ShapeError("tensor: cols() on rank-" + std::to_string(rank()) + " tensor");
        return shape[1];
    }

    Real& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
    Real at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

    // size of the last dimension; rank-1 tensors are their own last dimension
    int64_t last_dim() const {
        if (shape.empty()) throw ShapeError("tensor: last_dim() on rank-0 tensor");
        return shape.back();
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }

    bool all_finite() const {
        for (Real v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

}  // namespace t5lab
