// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>

#include "djscc/rng.hpp"
#include "djscc/tensor.hpp"

namespace djscc::test {

inline tensor<double> random_tensor(shape_t shape, rng& r, double lo = -1.0, double hi = 1.0) {
    tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = r.uniform(lo, hi);
    return t;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

/// Central finite difference of eval() w.r.t. one element of a parameter
/// tensor that eval reads by reference.
template <typename F>
double central_diff(tensor<double>& param, std::size_t idx, F&& eval, double h = 1e-5) {
    const double orig = param.data[idx];
    param.data[idx] = orig + h;
    const double fp = eval();
    param.data[idx] = orig - h;
    const double fm = eval();
    param.data[idx] = orig;
    return (fp - fm) / (2.0 * h);
}

/// Worst relative error between tape adjoints and finite differences over
/// every element of `param` (or a strided subsample for large tensors).
template <typename F>
double max_grad_err(tensor<double>& param, const tensor<double>& adjoint, F&& eval,
                    std::size_t max_checks = 0, double h = 1e-5) {
    const std::size_t n = param.numel();
    const std::size_t step = (max_checks && n > max_checks) ? n / max_checks : 1;
    double worst = 0;
    for (std::size_t i = 0; i < n; i += step) {
        const double fd = central_diff(param, i, eval, h);
        worst = std::max(worst, rel_err(adjoint.data[i], fd));
    }
    return worst;
}

}  // namespace djscc::test
