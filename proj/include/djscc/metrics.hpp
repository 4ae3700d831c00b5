// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "djscc/autodiff.hpp"
#include "djscc/ops.hpp"
#include "djscc/tensor.hpp"

namespace djscc {

struct metric_config {
    double peak = 1.0;
    std::size_t scales = 5;
    std::array<double, 5> weights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::size_t window = 11;
    double window_sigma = 1.5;

    double c1() const { return 0.01 * peak * 0.01 * peak; }
    double c2() const { return 0.03 * peak * 0.03 * peak; }

    /// Largest scale count the image supports: after scales-1 halvings the
    /// smallest spatial extent must still cover the window.
    std::size_t feasible_scales(std::size_t h, std::size_t w) const {
        const std::size_t dim = std::min(h, w);
        std::size_t s = 1;
        while (s < scales && dim >= window * (std::size_t(1) << s)) ++s;
        if (dim < window)
            throw std::invalid_argument("ms_ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                                        " smaller than the " + std::to_string(window) + "-tap window");
        return s;
    }
};

/// 10*log10(peak^2 / MSE) in dB; exact reconstruction reports the 100 dB cap.
template <typename Real>
double psnr(const tensor<Real>& x, const tensor<Real>& xhat, double peak = 1.0) {
    require_same_shape(x, xhat, "psnr");
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x.data[i]) - static_cast<double>(xhat.data[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(x.numel());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

namespace detail {

/// Diagonal (per-channel) gaussian filter bank as a conv kernel [C,C,K,K].
template <typename Real>
tensor<Real> gaussian_conv_kernel(std::size_t channels, std::size_t window, double sigma) {
    std::vector<double> g(window);
    const double mid = (static_cast<double>(window) - 1.0) / 2.0;
    double sum = 0;
    for (std::size_t i = 0; i < window; ++i) {
        const double d = static_cast<double>(i) - mid;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (auto& v : g) v /= sum;
    tensor<Real> k({channels, channels, window, window});
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < window; ++i)
            for (std::size_t j = 0; j < window; ++j)
                k.at4(c, c, i, j) = static_cast<Real>(g[i] * g[j]);
    return k;
}

}  // namespace detail

/// Differentiable MS-SSIM over a batch [N,3,H,W] -> scalar mean. Per-scale
/// contrast-structure means combine with the luminance term at the coarsest
/// scale, each raised to its (renormalized) weight. The scale count drops to
/// what the image supports, per metric_config::feasible_scales.
template <typename Real>
var ms_ssim(tape<Real>& t, var x, var y, const metric_config& cfg = {}) {
    const auto& xs = t.value(x).shape;
    const auto& ys = t.value(y).shape;
    if (xs != ys)
        throw std::invalid_argument("ms_ssim: shape mismatch " + shape_str(xs) + " vs " + shape_str(ys));
    if (xs.size() != 4) throw std::invalid_argument("ms_ssim: need [N,C,H,W], got " + shape_str(xs));

    const std::size_t scales = cfg.feasible_scales(xs[2], xs[3]);
    double wsum = 0;
    for (std::size_t s = 0; s < scales; ++s) wsum += cfg.weights[s];

    var kernel = t.leaf(detail::gaussian_conv_kernel<Real>(xs[1], cfg.window, cfg.window_sigma));
    const Real c1 = static_cast<Real>(cfg.c1());
    const Real c2 = static_cast<Real>(cfg.c2());

    auto blur = [&](var v) { return conv2d(t, v, kernel, 1, 0); };

    var result;
    for (std::size_t s = 0; s < scales; ++s) {
        var mu_x = blur(x);
        var mu_y = blur(y);
        var mu_xx = mul(t, mu_x, mu_x);
        var mu_yy = mul(t, mu_y, mu_y);
        var mu_xy = mul(t, mu_x, mu_y);
        var sig_xx = sub(t, blur(mul(t, x, x)), mu_xx);
        var sig_yy = sub(t, blur(mul(t, y, y)), mu_yy);
        var sig_xy = sub(t, blur(mul(t, x, y)), mu_xy);

        // cs = (2*sig_xy + C2) / (sig_xx + sig_yy + C2)
        var cs = div(t, add_const(t, scale(t, sig_xy, Real(2)), c2),
                     add_const(t, add(t, sig_xx, sig_yy), c2));
        const Real w = static_cast<Real>(cfg.weights[s] / wsum);

        var term;
        if (s + 1 == scales) {
            // luminance enters only at the coarsest scale, as the mean of
            // the full per-pixel l*cs map
            var l = div(t, add_const(t, scale(t, mu_xy, Real(2)), c1),
                        add_const(t, add(t, mu_xx, mu_yy), c1));
            term = pow_const(t, relu(t, mean_all(t, mul(t, l, cs))), w);
        } else {
            term = pow_const(t, relu(t, mean_all(t, cs)), w);
            x = avg_pool2(t, x);
            y = avg_pool2(t, y);
        }
        result = (s == 0) ? term : mul(t, result, term);
    }
    return result;
}

/// Convenience: MS-SSIM of a single [3,H,W] pair as a plain number.
template <typename Real>
double ms_ssim_value(const tensor<Real>& x, const tensor<Real>& y, const metric_config& cfg = {}) {
    tape<Real> t;
    var a = t.leaf(tensor<Real>({1, x.shape[0], x.shape[1], x.shape[2]}, x.data));
    var b = t.leaf(tensor<Real>({1, y.shape[0], y.shape[1], y.shape[2]}, y.data));
    return static_cast<double>(t.value(ms_ssim(t, a, b, cfg)).data[0]);
}

}  // namespace djscc
