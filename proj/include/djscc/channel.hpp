// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "djscc/rng.hpp"
#include "djscc/tensor.hpp"

namespace djscc {

/// Channel SNR in dB, or the distinguished NOISELESS value used for the
/// asymmetric side-information case.
struct snr_db {
    double db = 0.0;
    bool noiseless = false;

    snr_db() = default;
    explicit snr_db(double v) : db(v) {}
    static snr_db make_noiseless() { return snr_db{0.0, true}; }

    bool operator==(const snr_db&) const = default;

  private:
    snr_db(double v, bool nl) : db(v), noiseless(nl) {}
};

enum class channel_kind { awgn, rayleigh, noiseless };

inline std::string channel_kind_name(channel_kind k) {
    switch (k) {
        case channel_kind::awgn: return "awgn";
        case channel_kind::rayleigh: return "rayleigh";
        case channel_kind::noiseless: return "noiseless";
    }
    return "?";
}

inline channel_kind parse_channel_kind(const std::string& s) {
    if (s == "awgn") return channel_kind::awgn;
    if (s == "rayleigh") return channel_kind::rayleigh;
    if (s == "noiseless") return channel_kind::noiseless;
    throw std::invalid_argument("unknown channel kind '" + s + "' (expected awgn|rayleigh|noiseless)");
}

/// sigma^2 = P * 10^(-mu/10), the inversion of mu = 10*log10(P/sigma^2).
inline double snr_to_noise_variance(snr_db mu, double power) {
    if (mu.noiseless)
        throw std::invalid_argument("snr_to_noise_variance: NOISELESS has no variance; use noiseless_transfer");
    return power * std::pow(10.0, -mu.db / 10.0);
}

template <typename Real>
struct complex_signal {
    std::vector<std::complex<Real>> symbols;

    std::size_t k() const { return symbols.size(); }

    double sq_norm() const {
        double acc = 0;
        for (const auto& s : symbols)
            acc += static_cast<double>(s.real()) * s.real() + static_cast<double>(s.imag()) * s.imag();
        return acc;
    }
};

/// Per-link channel parameterization. Keeps the invariant
/// sigma^2 = P * 10^(-mu/10) for finite mu; noiseless kind iff mu NOISELESS.
struct channel_params {
    channel_kind kind = channel_kind::awgn;
    double power = 1.0;      // P, average power per complex symbol
    snr_db mu;               // link SNR
    double noise_variance = 1.0;  // sigma^2 per complex symbol

    static channel_params make(channel_kind kind, snr_db mu, double power = 1.0) {
        if ((kind == channel_kind::noiseless) != mu.noiseless)
            throw std::invalid_argument("channel_params: kind is noiseless iff mu is NOISELESS");
        channel_params p;
        p.kind = kind;
        p.power = power;
        p.mu = mu;
        p.noise_variance = mu.noiseless ? 0.0 : snr_to_noise_variance(mu, power);
        return p;
    }
};

/// Pack a bottleneck feature map into complex symbols: consecutive pairs of
/// the flattened tensor become (real, imaginary). A fixed bijection; exact
/// round trip with unframe().
template <typename Real>
complex_signal<Real> frame(const tensor<Real>& bottleneck) {
    if (bottleneck.numel() % 2 != 0)
        throw std::invalid_argument("frame: element count " + std::to_string(bottleneck.numel()) +
                                    " is odd, cannot pair into complex symbols");
    complex_signal<Real> s;
    s.symbols.resize(bottleneck.numel() / 2);
    for (std::size_t i = 0; i < s.symbols.size(); ++i)
        s.symbols[i] = {bottleneck.data[2 * i], bottleneck.data[2 * i + 1]};
    return s;
}

template <typename Real>
tensor<Real> unframe(const complex_signal<Real>& s, const shape_t& shape) {
    if (shape_numel(shape) != 2 * s.k())
        throw std::invalid_argument("unframe: shape " + shape_str(shape) + " does not hold " +
                                    std::to_string(s.k()) + " complex symbols");
    tensor<Real> t(shape);
    for (std::size_t i = 0; i < s.k(); ++i) {
        t.data[2 * i] = s.symbols[i].real();
        t.data[2 * i + 1] = s.symbols[i].imag();
    }
    return t;
}

/// s~ = sqrt(kP) * s / ||s||_2. Norm accumulates in double; rejects the
/// all-zero signal.
template <typename Real>
complex_signal<Real> power_normalize(const complex_signal<Real>& s, double power) {
    const double ss = s.sq_norm();
    if (ss == 0.0) throw std::domain_error("power_normalize: degenerate all-zero signal");
    const double c = std::sqrt(static_cast<double>(s.k()) * power / ss);
    complex_signal<Real> out;
    out.symbols.resize(s.k());
    for (std::size_t i = 0; i < s.k(); ++i)
        out.symbols[i] = {static_cast<Real>(c * s.symbols[i].real()),
                          static_cast<Real>(c * s.symbols[i].imag())};
    return out;
}

namespace detail {

/// One circularly-symmetric complex gaussian with unit total variance
/// (1/2 per real component).
inline std::complex<double> unit_complex_gaussian(rng& r) {
    auto [a, b] = r.gaussian_pair();
    constexpr double half = 0.70710678118654752440;  // 1/sqrt(2)
    return {a * half, b * half};
}

}  // namespace detail

/// AWGN: shat = s~ + n, n i.i.d. circularly-symmetric complex gaussian with
/// per-symbol variance sigma^2.
template <typename Real>
complex_signal<Real> awgn_transfer(const complex_signal<Real>& s, double noise_variance, rng& r) {
    if (noise_variance < 0) throw std::invalid_argument("awgn_transfer: negative noise variance");
    const double sd = std::sqrt(noise_variance);
    complex_signal<Real> out;
    out.symbols.resize(s.k());
    for (std::size_t i = 0; i < s.k(); ++i) {
        const auto n = detail::unit_complex_gaussian(r);
        out.symbols[i] = {static_cast<Real>(s.symbols[i].real() + sd * n.real()),
                          static_cast<Real>(s.symbols[i].imag() + sd * n.imag())};
    }
    return out;
}

/// Rayleigh fast fading with perfect CSI, zero-forcing equalized:
/// shat_i = s~_i + n_i / h_i with h_i unit-variance complex gaussian.
/// Fading draws with |h| < 1e-12 are redrawn (counted if requested).
template <typename Real>
complex_signal<Real> rayleigh_transfer(const complex_signal<Real>& s, double noise_variance, rng& r,
                                       std::size_t* redraws = nullptr) {
    if (noise_variance < 0) throw std::invalid_argument("rayleigh_transfer: negative noise variance");
    const double sd = std::sqrt(noise_variance);
    complex_signal<Real> out;
    out.symbols.resize(s.k());
    for (std::size_t i = 0; i < s.k(); ++i) {
        std::complex<double> h = detail::unit_complex_gaussian(r);
        while (std::abs(h) < 1e-12) {
            h = detail::unit_complex_gaussian(r);
            if (redraws) ++*redraws;
        }
        const auto n = detail::unit_complex_gaussian(r);
        const std::complex<double> eq = std::complex<double>(sd * n.real(), sd * n.imag()) / h;
        out.symbols[i] = {static_cast<Real>(s.symbols[i].real() + eq.real()),
                          static_cast<Real>(s.symbols[i].imag() + eq.imag())};
    }
    return out;
}

template <typename Real>
complex_signal<Real> noiseless_transfer(const complex_signal<Real>& s) {
    return s;
}

/// Effective additive noise for one link as a flat real tensor [2k], drawn
/// with unit per-symbol variance and scaled by sigma. Both the tensor-path
/// training/evaluation pipeline and the complex-signal transfer functions
/// share this draw order, so a given rng state yields the same noise either
/// way. The draw count per symbol is fixed per kind, independent of sigma.
template <typename Real>
std::vector<Real> effective_noise_rows(channel_kind kind, double noise_variance, std::size_t k,
                                       rng& r) {
    std::vector<Real> out(2 * k, Real(0));
    if (kind == channel_kind::noiseless) return out;
    const double sd = std::sqrt(noise_variance);
    for (std::size_t i = 0; i < k; ++i) {
        if (kind == channel_kind::awgn) {
            const auto n = detail::unit_complex_gaussian(r);
            out[2 * i] = static_cast<Real>(sd * n.real());
            out[2 * i + 1] = static_cast<Real>(sd * n.imag());
        } else {
            std::complex<double> h = detail::unit_complex_gaussian(r);
            while (std::abs(h) < 1e-12) h = detail::unit_complex_gaussian(r);
            const auto n = detail::unit_complex_gaussian(r);
            const std::complex<double> eq = std::complex<double>(sd * n.real(), sd * n.imag()) / h;
            out[2 * i] = static_cast<Real>(eq.real());
            out[2 * i + 1] = static_cast<Real>(eq.imag());
        }
    }
    return out;
}

}  // namespace djscc
