// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "djscc/channel.hpp"
#include "support/test_util.hpp"

using namespace djscc;
using djscc::test::random_tensor;
using djscc::test::rel_err;

TEST_CASE("frame pairs flattened entries into complex symbols") {
    tensor<double> t({20, 16, 32});
    REQUIRE(frame(t).k() == 5120);

    rng r(31);
    tensor<double> b = random_tensor({4, 3, 2}, r);
    auto s = frame(b);
    REQUIRE(s.k() == 12);
    REQUIRE(s.symbols[0].real() == b.data[0]);
    REQUIRE(s.symbols[0].imag() == b.data[1]);
    REQUIRE(unframe(s, b.shape).data == b.data);

    // fixed bijection: equal inputs, equal symbol sequences
    auto s2 = frame(b);
    REQUIRE(s.symbols == s2.symbols);

    REQUIRE_THROWS_AS(frame(tensor<double>({3, 3})), std::invalid_argument);
}

TEST_CASE("power_normalize hand case") {
    complex_signal<double> s;
    s.symbols = {{3.0, 4.0}};
    auto out = power_normalize(s, 1.0);
    REQUIRE(rel_err(out.symbols[0].real(), 0.6) < 1e-12);
    REQUIRE(rel_err(out.symbols[0].imag(), 0.8) < 1e-12);
}

TEST_CASE("power_normalize is a fixed point on already-normalized signals") {
    rng r(32);
    complex_signal<double> s;
    for (int i = 0; i < 8; ++i) s.symbols.emplace_back(r.uniform(-1, 1), r.uniform(-1, 1));
    auto once = power_normalize(s, 1.0);
    auto twice = power_normalize(once, 1.0);
    for (std::size_t i = 0; i < once.k(); ++i) {
        REQUIRE(std::abs(once.symbols[i].real() - twice.symbols[i].real()) < 1e-12);
        REQUIRE(std::abs(once.symbols[i].imag() - twice.symbols[i].imag()) < 1e-12);
    }
}

TEST_CASE("power_normalize meets the power constraint at k=100") {
    rng r(33);
    complex_signal<double> s;
    for (int i = 0; i < 100; ++i) s.symbols.emplace_back(r.gaussian(), r.gaussian());
    const double p = 2.5;
    auto out = power_normalize(s, p);
    REQUIRE(rel_err(out.sq_norm(), 100.0 * p) < 1e-6);

    complex_signal<double> zero;
    zero.symbols.assign(4, {0.0, 0.0});
    REQUIRE_THROWS_AS(power_normalize(zero, 1.0), std::domain_error);
}

TEST_CASE("snr to noise variance inversion") {
    REQUIRE(snr_to_noise_variance(snr_db{0.0}, 1.0) == 1.0);
    REQUIRE(rel_err(snr_to_noise_variance(snr_db{10.0}, 1.0), 0.1) < 1e-12);
    // independently computed 10^(-0.7)
    REQUIRE(rel_err(snr_to_noise_variance(snr_db{7.0}, 1.0), 0.19952623149688797) < 1e-12);
    REQUIRE_THROWS_AS(snr_to_noise_variance(snr_db::make_noiseless(), 1.0), std::invalid_argument);
}

TEST_CASE("channel_params keeps the variance invariant") {
    auto p = channel_params::make(channel_kind::awgn, snr_db{7.0}, 2.0);
    REQUIRE(rel_err(p.noise_variance, 2.0 * 0.19952623149688797) < 1e-12);
    auto nl = channel_params::make(channel_kind::noiseless, snr_db::make_noiseless());
    REQUIRE(nl.noise_variance == 0.0);
    REQUIRE_THROWS_AS(channel_params::make(channel_kind::awgn, snr_db::make_noiseless()), std::invalid_argument);
    REQUIRE_THROWS_AS(channel_params::make(channel_kind::noiseless, snr_db{3.0}), std::invalid_argument);
}

TEST_CASE("awgn with zero variance is exact") {
    rng r(34);
    complex_signal<double> s;
    for (int i = 0; i < 16; ++i) s.symbols.emplace_back(r.uniform(-1, 1), r.uniform(-1, 1));
    auto out = awgn_transfer(s, 0.0, r);
    REQUIRE(out.symbols == s.symbols);
    REQUIRE_THROWS_AS(awgn_transfer(s, -0.1, r), std::invalid_argument);
}

TEST_CASE("awgn empirical statistics at k=1e5") {
    const std::size_t k = 100000;
    complex_signal<double> zero;
    zero.symbols.assign(k, {0.0, 0.0});
    rng r(35);
    auto out = awgn_transfer(zero, 0.5, r);
    double mean_re = 0, mean_im = 0, power = 0;
    for (const auto& c : out.symbols) {
        mean_re += c.real();
        mean_im += c.imag();
        power += c.real() * c.real() + c.imag() * c.imag();
    }
    mean_re /= k;
    mean_im /= k;
    power /= k;
    REQUIRE(std::abs(mean_re) < 0.01);
    REQUIRE(std::abs(mean_im) < 0.01);
    REQUIRE(rel_err(power, 0.5) < 0.01);
}

TEST_CASE("awgn is deterministic given the seed") {
    complex_signal<double> s;
    s.symbols.assign(64, {0.25, -0.5});
    rng r1(36), r2(36);
    auto a = awgn_transfer(s, 0.3, r1);
    auto b = awgn_transfer(s, 0.3, r2);
    REQUIRE(a.symbols == b.symbols);
}

TEST_CASE("empirical awgn snr within 0.1 dB of commanded") {
    const std::size_t k = 100000;
    for (double mu : {-3.0, 0.0, 7.0, 14.0}) {
        complex_signal<double> s;
        rng sig(37);
        for (std::size_t i = 0; i < k; ++i) s.symbols.emplace_back(sig.gaussian(), sig.gaussian());
        s = power_normalize(s, 1.0);
        rng r(38);
        auto out = awgn_transfer(s, snr_to_noise_variance(snr_db{mu}, 1.0), r);
        double noise_power = 0;
        for (std::size_t i = 0; i < k; ++i) {
            const auto d = out.symbols[i] - s.symbols[i];
            noise_power += d.real() * d.real() + d.imag() * d.imag();
        }
        noise_power /= static_cast<double>(k);
        const double measured = 10.0 * std::log10(1.0 / noise_power);
        REQUIRE(std::abs(measured - mu) < 0.1);
    }
}

TEST_CASE("rayleigh with zero variance is exact after equalization") {
    rng r(39);
    complex_signal<double> s;
    for (int i = 0; i < 16; ++i) s.symbols.emplace_back(r.uniform(-1, 1), r.uniform(-1, 1));
    rng ch(40);
    auto out = rayleigh_transfer(s, 0.0, ch);
    REQUIRE(out.symbols == s.symbols);
}

TEST_CASE("rayleigh equalized noise has heavier tails than awgn") {
    const std::size_t k = 100000;
    complex_signal<double> zero;
    zero.symbols.assign(k, {0.0, 0.0});
    const double sigma2 = 0.5;
    rng r(41);
    auto out = rayleigh_transfer(zero, sigma2, r);
    double power = 0;
    for (const auto& c : out.symbols) power += c.real() * c.real() + c.imag() * c.imag();
    power /= k;
    // E[1/|h|^2] diverges, so the sample variance exceeds sigma^2
    REQUIRE(power > sigma2);
}

TEST_CASE("rayleigh is deterministic given the seed") {
    complex_signal<double> s;
    s.symbols.assign(64, {0.25, -0.5});
    rng r1(42), r2(42);
    REQUIRE(rayleigh_transfer(s, 0.3, r1).symbols == rayleigh_transfer(s, 0.3, r2).symbols);
}

TEST_CASE("noiseless transfer is the identity") {
    rng r(43);
    complex_signal<double> s;
    for (int i = 0; i < 10; ++i) s.symbols.emplace_back(r.uniform(-1, 1), r.uniform(-1, 1));
    auto out = noiseless_transfer(s);
    REQUIRE(out.symbols == s.symbols);
    REQUIRE(out.sq_norm() == s.sq_norm());

    // composes with frame/unframe to a lossless path
    tensor<double> b = random_tensor({2, 2, 3}, r);
    REQUIRE(unframe(noiseless_transfer(frame(b)), b.shape).data == b.data);
}

TEST_CASE("effective_noise_rows matches the complex transfer draws") {
    // same rng state -> the tensor path and the signal path add identical noise
    const std::size_t k = 32;
    complex_signal<double> s;
    s.symbols.assign(k, {0.0, 0.0});
    for (channel_kind kind : {channel_kind::awgn, channel_kind::rayleigh}) {
        rng r1(44), r2(44);
        auto sig = kind == channel_kind::awgn ? awgn_transfer(s, 0.37, r1)
                                              : rayleigh_transfer(s, 0.37, r1);
        auto rows = effective_noise_rows<double>(kind, 0.37, k, r2);
        for (std::size_t i = 0; i < k; ++i) {
            REQUIRE(sig.symbols[i].real() == rows[2 * i]);
            REQUIRE(sig.symbols[i].imag() == rows[2 * i + 1]);
        }
    }
}
