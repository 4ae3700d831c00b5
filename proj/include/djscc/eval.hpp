// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "djscc/channel.hpp"
#include "djscc/data.hpp"
#include "djscc/kvtext.hpp"
#include "djscc/metrics.hpp"
#include "djscc/model.hpp"

namespace djscc {

struct eval_row {
    snr_db mu_x;
    snr_db mu_y;
    channel_kind channel = channel_kind::awgn;
    std::string source;  // "x" or "y"
    double psnr_db = 0;
    double ms_ssim = 0;
    std::size_t n = 0;
};

inline std::string format_snr(snr_db mu) { return mu.noiseless ? "noiseless" : kv_format_double(mu.db); }

inline snr_db parse_snr(const std::string& s) {
    if (s == "noiseless" || s == "inf") return snr_db::make_noiseless();
    return snr_db{kv_parse_double("snr", s)};
}

/// Delimited text table carrying the quantities of the quality sweeps.
/// Lines starting with '#' are warnings; the header line is fixed.
struct eval_report {
    std::vector<std::string> warnings;
    std::vector<eval_row> rows;

    static constexpr const char* header = "mu_x,mu_y,channel,source,psnr_db,ms_ssim,n";

    std::string to_csv() const {
        std::string out = std::string(header) + "\n";
        for (const auto& w : warnings) out += "# warning: " + w + "\n";
        char buf[256];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%.6f,%.6f,%zu\n", format_snr(r.mu_x).c_str(),
                          format_snr(r.mu_y).c_str(), channel_kind_name(r.channel).c_str(),
                          r.source.c_str(), r.psnr_db, r.ms_ssim, r.n);
            out += buf;
        }
        return out;
    }
};

/// Mean reconstruction quality per source over a pair set, at fixed link
/// SNRs. The unit-variance noise realization is seeded per (pair, link)
/// only, so sweeps stay paired across SNR cells, channel kinds and
/// checkpoints.
struct pair_quality {
    double psnr_x = 0, psnr_y = 0;
    double ms_ssim_x = 0, ms_ssim_y = 0;
    std::size_t n = 0;
};

template <typename Real>
pair_quality evaluate_pairs(model<Real>& m, const std::vector<stereo_pair<Real>>& pairs, snr_db mu_x,
                            snr_db mu_y, channel_kind kind, std::uint64_t noise_seed,
                            std::size_t batch = 8) {
    const model_config& cfg = m.config;
    const std::size_t k = cfg.symbols_per_image();
    pair_quality q;
    metric_config mcfg;

    for (std::size_t base = 0; base < pairs.size(); base += batch) {
        const std::size_t n = std::min(batch, pairs.size() - base);
        tensor<Real> bx({n, 3, cfg.image_h, cfg.image_w});
        tensor<Real> by(bx.shape);
        tensor<Real> nx({n, 2 * k}), ny({n, 2 * k});
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = pairs[base + i];
            std::copy(p.x.data.begin(), p.x.data.end(), bx.data.begin() + i * p.x.numel());
            std::copy(p.y.data.begin(), p.y.data.end(), by.data.begin() + i * p.y.numel());
            auto draw = [&](snr_db mu, std::uint64_t link, tensor<Real>& dst) {
                rng local(derive_seed(noise_seed, p.id * 2 + link));
                const channel_kind ck = mu.noiseless ? channel_kind::noiseless : kind;
                const double var = mu.noiseless ? 0.0 : snr_to_noise_variance(mu, 1.0);
                const std::vector<Real> row = effective_noise_rows<Real>(ck, var, k, local);
                std::copy(row.begin(), row.end(), dst.data.begin() + i * 2 * k);
            };
            draw(mu_x, 0, nx);
            draw(mu_y, 1, ny);
        }

        const std::vector<snr_db> mxs(n, mu_x), mys(n, mu_y);
        tape<Real> t;
        bound_model<Real> bm = bind_model(t, m);
        var vx = t.leaf(bx);
        var vy = t.leaf(by);
        var sx = encode_to_rows(t, m.enc_x, bm, vx, mxs, cfg);
        var sy = encode_to_rows(t, m.enc_y, bm, vy, mys, cfg);
        var rx = add(t, sx, t.leaf(std::move(nx)));
        var ry = add(t, sy, t.leaf(std::move(ny)));
        auto [xhat, yhat] = decode_images(t, m.dec, bm, rx, ry, mxs, mys, cfg);

        const std::size_t img = 3 * cfg.image_h * cfg.image_w;
        const shape_t img_shape{3, cfg.image_h, cfg.image_w};
        for (std::size_t i = 0; i < n; ++i) {
            auto item = [&](const tensor<Real>& t4) {
                return tensor<Real>(img_shape, std::vector<Real>(t4.data.begin() + i * img,
                                                                 t4.data.begin() + (i + 1) * img));
            };
            const tensor<Real> xi = item(bx), yi = item(by);
            const tensor<Real> xh = item(t.value(xhat)), yh = item(t.value(yhat));
            q.psnr_x += psnr(xi, xh);
            q.psnr_y += psnr(yi, yh);
            q.ms_ssim_x += ms_ssim_value(xi, xh, mcfg);
            q.ms_ssim_y += ms_ssim_value(yi, yh, mcfg);
            ++q.n;
        }
    }
    q.psnr_x /= static_cast<double>(q.n);
    q.psnr_y /= static_cast<double>(q.n);
    q.ms_ssim_x /= static_cast<double>(q.n);
    q.ms_ssim_y /= static_cast<double>(q.n);
    return q;
}

/// Equal-SNR sweep (mu_x = mu_y = mu for each listed mu): two rows per
/// point, one per source.
template <typename Real>
eval_report evaluate_sweep(model<Real>& m, const std::vector<stereo_pair<Real>>& pairs,
                           const std::vector<snr_db>& mus, channel_kind kind,
                           std::uint64_t noise_seed) {
    eval_report rep;
    for (snr_db mu : mus) {
        if (!mu.noiseless && (mu.db < m.config.token_lo_db || mu.db > m.config.token_hi_db))
            rep.warnings.push_back("snr " + kv_format_double(mu.db) + " outside token range [" +
                                   kv_format_double(m.config.token_lo_db) + "," +
                                   kv_format_double(m.config.token_hi_db) + "], token clamped");
        const pair_quality q = evaluate_pairs(m, pairs, mu, mu, kind, noise_seed);
        rep.rows.push_back({mu, mu, kind, "x", q.psnr_x, q.ms_ssim_x, q.n});
        rep.rows.push_back({mu, mu, kind, "y", q.psnr_y, q.ms_ssim_y, q.n});
    }
    return rep;
}

/// Side-SNR sweep: mu_x fixed, mu_y = mu_x + delta per listed delta (a
/// NOISELESS delta evaluates the asymmetric upper bound). Reports the x side.
template <typename Real>
eval_report evaluate_delta_sweep(model<Real>& m, const std::vector<stereo_pair<Real>>& pairs,
                                 snr_db mu_x, const std::vector<snr_db>& deltas, channel_kind kind,
                                 std::uint64_t noise_seed) {
    eval_report rep;
    for (snr_db d : deltas) {
        const snr_db mu_y = d.noiseless ? snr_db::make_noiseless() : snr_db{mu_x.db + d.db};
        if (!mu_y.noiseless && (mu_y.db < m.config.token_lo_db || mu_y.db > m.config.token_hi_db))
            rep.warnings.push_back("side snr " + kv_format_double(mu_y.db) + " outside token range, token clamped");
        const pair_quality q = evaluate_pairs(m, pairs, mu_x, mu_y, kind, noise_seed);
        rep.rows.push_back({mu_x, mu_y, kind, "x", q.psnr_x, q.ms_ssim_x, q.n});
    }
    return rep;
}

/// Deterministic held-out pair set; seeds sit above the training range.
template <typename Real>
std::vector<stereo_pair<Real>> make_eval_pairs(const train_config& cfg, std::size_t count) {
    std::vector<stereo_pair<Real>> pairs;
    pairs.reserve(count);
    const std::uint64_t base = cfg.seed_data + cfg.train_pairs + 1000000;
    for (std::size_t i = 0; i < count; ++i)
        pairs.push_back(generate_pair<Real>(base + i, cfg.overlap, cfg.arch.image_h, cfg.arch.image_w,
                                            cfg.jitter()));
    return pairs;
}

}  // namespace djscc
