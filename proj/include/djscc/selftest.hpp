// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <string>

#include "djscc/djscc.hpp"

// Quick oracle/invariant sweep for the CLI selftest subcommand: a compressed
// cut of the test suite that runs in seconds on a clean checkout. The full
// suites live under tests/.

namespace djscc {

namespace detail {

struct selftest_state {
    int failed = 0;
    int total = 0;

    void check(bool ok, const std::string& what) {
        ++total;
        if (!ok) {
            ++failed;
            std::printf("  FAIL  %s\n", what.c_str());
        }
    }
};

}  // namespace detail

inline int selftest() {
    detail::selftest_state s;
    const auto close = [](double a, double b, double tol) { return std::abs(a - b) <= tol; };

    // gradient spot checks in double precision
    {
        rng r(1);
        tensor<double> a({3, 3}), b({3, 3});
        for (auto& v : a.data) v = r.uniform(-1, 1);
        for (auto& v : b.data) v = r.uniform(-1, 1);
        auto eval = [&]() {
            tape<double> t;
            return t.value(sum_all(t, matmul(t, t.leaf(a), t.leaf(b)))).data[0];
        };
        tape<double> t;
        var va = t.leaf(a);
        t.backward(sum_all(t, matmul(t, va, t.leaf(b))));
        const double base = eval();
        const double h = 1e-5;
        double worst = 0;
        for (std::size_t i = 0; i < a.numel(); ++i) {
            const double orig = a.data[i];
            a.data[i] = orig + h;
            const double fp = eval();
            a.data[i] = orig - h;
            const double fm = eval();
            a.data[i] = orig;
            worst = std::max(worst, std::abs((fp - fm) / (2 * h) - t.adjoint(va).data[i]));
        }
        (void)base;
        s.check(worst < 1e-6, "matmul gradient vs finite differences");
    }

    // conv adjoint identity
    {
        rng r(2);
        tensor<double> x({1, 2, 4, 4}), k({3, 2, 3, 3}), y({1, 3, 2, 2});
        for (auto& v : x.data) v = r.uniform(-1, 1);
        for (auto& v : k.data) v = r.uniform(-1, 1);
        for (auto& v : y.data) v = r.uniform(-1, 1);
        tape<double> t;
        const auto& cx = t.value(conv2d(t, t.leaf(x), t.leaf(k), 2, 1));
        const auto& cty = t.value(conv2d_transpose(t, t.leaf(y), t.leaf(k), 2));
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx.data[i] * y.data[i];
        for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data[i] * cty.data[i];
        s.check(close(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs))), "conv transpose adjoint identity");
    }

    // softmax is a shift-invariant probability vector
    {
        tape<double> t;
        const auto& sm = t.value(softmax(t, t.leaf(tensor<double>({3}, {0.1, 1.2, -0.4})), 0));
        double sum = 0;
        for (double v : sm.data) sum += v;
        s.check(close(sum, 1.0, 1e-6), "softmax normalization");
    }

    // channel arithmetic
    s.check(close(snr_to_noise_variance(snr_db{7.0}, 1.0), 0.19952623149688797, 1e-12),
            "snr to noise variance inversion");
    {
        complex_signal<double> sig;
        sig.symbols = {{3.0, 4.0}};
        const auto out = power_normalize(sig, 1.0);
        s.check(close(out.symbols[0].real(), 0.6, 1e-12) && close(out.symbols[0].imag(), 0.8, 1e-12),
                "power normalization hand case");
    }
    {
        rng r(3);
        complex_signal<double> zero;
        zero.symbols.assign(100000, {0.0, 0.0});
        const auto out = awgn_transfer(zero, 0.5, r);
        double p = 0;
        for (const auto& c : out.symbols) p += c.real() * c.real() + c.imag() * c.imag();
        p /= static_cast<double>(out.k());
        s.check(close(p, 0.5, 0.01), "awgn empirical noise power");
    }

    // token routing
    {
        const model_config cfg;
        s.check(cfg.snr_token_count() == 18, "token bank size for [-3,14] at 1 dB");
        s.check(select_token(snr_db{-3.0}, cfg) == 0 && select_token(snr_db{13.5}, cfg) == 16 &&
                    select_token(snr_db::make_noiseless(), cfg) == 18,
                "token bin routing");
    }

    // metrics
    {
        const auto p = generate_pair<double>(4, 0.8, 32, 64);
        s.check(ms_ssim_value(p.x, p.x) == 1.0, "ms-ssim self similarity");
        s.check(psnr(p.x, p.x) == 100.0, "psnr cap at zero error");
    }

    // bandwidth arithmetic at the reference scale
    {
        model_config cfg;
        cfg.image_h = 128;
        cfg.image_w = 256;
        cfg.bottleneck_channels = 20;
        s.check(cfg.symbols_per_image() == 5120 && close(cfg.bandwidth_ratio(), 0.052, 0.0005),
                "bandwidth ratio at the reference configuration");
    }

    // tiny end-to-end pipeline stays finite and deterministic
    {
        train_config cfg = train_config::parse(
            "image_h = 16\nimage_w = 16\nenc_widths = 4,4,4\nenc_kernels = 3,3,3\n"
            "bottleneck_channels = 2\nbatch_size = 2\ntrain_pairs = 2\niterations = 2\n");
        auto a = trainer<float>::fresh(cfg);
        auto b = trainer<float>::fresh(cfg);
        const double l1 = a.step(), l2 = b.step();
        s.check(std::isfinite(l1) && l1 == l2, "deterministic training step");
    }

    std::printf("selftest: %d/%d checks passed\n", s.total - s.failed, s.total);
    return s.failed == 0 ? 0 : 1;
}

}  // namespace djscc
