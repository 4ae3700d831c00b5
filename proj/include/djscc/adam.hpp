// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "djscc/tensor.hpp"

namespace djscc {

template <typename Real>
struct adam_state {
    tensor<Real> m;  // first moment, zero-initialized
    tensor<Real> v;  // second moment, zero-initialized
    std::uint64_t step = 0;

    adam_state() = default;
    explicit adam_state(const shape_t& shape) : m(shape), v(shape) {}
};

struct adam_config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update. Increments the step counter by exactly 1.
template <typename Real>
void adam_step(tensor<Real>& param, const tensor<Real>& grad, adam_state<Real>& state,
               const adam_config& cfg) {
    require_same_shape(param, grad, "adam_step");
    require_same_shape(param, state.m, "adam_step(moment m)");
    require_same_shape(param, state.v, "adam_step(moment v)");
    state.step += 1;
    const Real b1 = static_cast<Real>(cfg.beta1);
    const Real b2 = static_cast<Real>(cfg.beta2);
    const Real corr1 = static_cast<Real>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
    const Real corr2 = static_cast<Real>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
    const Real lr = static_cast<Real>(cfg.lr);
    const Real eps = static_cast<Real>(cfg.eps);
    const std::size_t n = param.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        const Real g = grad.data[i];
        state.m.data[i] = b1 * state.m.data[i] + (Real(1) - b1) * g;
        state.v.data[i] = b2 * state.v.data[i] + (Real(1) - b2) * g * g;
        const Real mhat = state.m.data[i] / corr1;
        const Real vhat = state.v.data[i] / corr2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

}  // namespace djscc
