// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace djscc {

using shape_t = std::vector<std::size_t>;

inline std::size_t shape_numel(const shape_t& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const shape_t& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major n-dimensional array. All feature maps, signals (as paired
/// reals) and learnable parameters are carried as tensors. Adjoint buffers
/// live next to values inside a tape, not here.
template <typename Real>
struct tensor {
    shape_t shape;
    std::vector<Real> data;

    tensor() = default;

    explicit tensor(shape_t s) : shape(std::move(s)), data(shape_numel(shape), Real(0)) {
        check_extents();
    }

    tensor(shape_t s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
        check_extents();
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor: data size " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static tensor full(shape_t s, Real v) {
        tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static tensor scalar(Real v) { return tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t axis) const { return shape.at(axis); }

    Real& operator[](std::size_t i) { return data[i]; }
    Real operator[](std::size_t i) const { return data[i]; }

    Real& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    Real at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    Real& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    Real at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    Real& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    Real at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (Real v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

  private:
    void check_extents() const {
        for (std::size_t e : shape)
            if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
    }
};

template <typename Real>
void require_same_shape(const tensor<Real>& a, const tensor<Real>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

template <typename To, typename From>
tensor<To> tensor_cast(const tensor<From>& t) {
    tensor<To> out(t.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

}  // namespace djscc
