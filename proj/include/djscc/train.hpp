// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "djscc/adam.hpp"
#include "djscc/channel.hpp"
#include "djscc/checkpoint.hpp"
#include "djscc/config.hpp"
#include "djscc/data.hpp"
#include "djscc/metrics.hpp"
#include "djscc/model.hpp"
#include "djscc/ops.hpp"

namespace djscc {

/// L = d(x, xhat) + alpha * d(y, yhat), batch-averaged. kind selects
/// per-pixel MSE or 1 - MS-SSIM as the distortion d.
template <typename Real>
var distortion_loss(tape<Real>& t, var x, var xhat, var y, var yhat, double alpha, loss_kind kind,
                    const metric_config& mcfg = {}) {
    var dx, dy;
    if (kind == loss_kind::mse) {
        dx = mse(t, x, xhat);
        dy = mse(t, y, yhat);
    } else {
        dx = add_const(t, scale(t, ms_ssim(t, x, xhat, mcfg), Real(-1)), Real(1));
        dy = add_const(t, scale(t, ms_ssim(t, y, yhat, mcfg), Real(-1)), Real(1));
    }
    return add(t, dx, scale(t, dy, static_cast<Real>(alpha)));
}

/// Per-item link SNRs: independent uniform draws over [lo, hi] per link.
/// The asymmetric flag forces mu_y = NOISELESS; otherwise each link's draw
/// is replaced by NOISELESS with probability noiseless_side_prob. Draw
/// order per item is fixed: u_x, u_y, b_x, b_y.
inline std::pair<snr_db, snr_db> sample_link_snrs(rng& r, const train_config& cfg) {
    snr_db mu_x{r.uniform(cfg.snr_lo_db, cfg.snr_hi_db)};
    snr_db mu_y{r.uniform(cfg.snr_lo_db, cfg.snr_hi_db)};
    if (cfg.noiseless_side_prob > 0) {
        if (r.uniform() < cfg.noiseless_side_prob) mu_x = snr_db::make_noiseless();
        if (r.uniform() < cfg.noiseless_side_prob) mu_y = snr_db::make_noiseless();
    }
    if (cfg.asymmetric) mu_y = snr_db::make_noiseless();
    return {mu_x, mu_y};
}

/// One full training run: model plus Adam state plus the three rng streams,
/// stepped one batch at a time. A single logical writer owns the instance.
template <typename Real>
class trainer {
  public:
    static trainer fresh(const train_config& cfg) {
        cfg.validate();
        trainer tr(cfg);
        rng init(cfg.seed_init);
        tr.model_ = make_model<Real>(cfg.arch, init);
        tr.init_optimizer();
        return tr;
    }

    static trainer resume(const train_config& cfg, const checkpoint_data& ck) {
        cfg.validate();
        trainer tr(cfg);
        rng scratch(0);
        tr.model_ = make_model<Real>(cfg.arch, scratch);
        restore_model(tr.model_, ck);
        tr.init_optimizer();
        if (ck.has_optimizer) {
            for (std::size_t i = 0; i < tr.opt_.size(); ++i) {
                tr.opt_[i].m = tensor_cast<Real>(ck.moments[i].first);
                tr.opt_[i].v = tensor_cast<Real>(ck.moments[i].second);
                tr.opt_[i].step = ck.adam_step;
            }
        }
        tr.iteration_ = ck.iteration;
        for (const auto& [name, state] : ck.rng_states) {
            if (name == "data") tr.data_rng_ = rng::deserialize(state);
            else if (name == "noise") tr.noise_rng_ = rng::deserialize(state);
            else if (name == "snr") tr.snr_rng_ = rng::deserialize(state);
        }
        return tr;
    }

    /// Encode, transmit over the per-item sampled channels, jointly decode,
    /// backpropagate and Adam-update everything. Returns the pre-update loss.
    double step() {
        const std::size_t n = cfg_.batch_size;
        tensor<Real> bx({n, 3, cfg_.arch.image_h, cfg_.arch.image_w});
        tensor<Real> by(bx.shape);
        for (std::size_t i = 0; i < n; ++i) {
            const stereo_pair<Real>& p = pairs_[next_pair_index()];
            std::copy(p.x.data.begin(), p.x.data.end(), bx.data.begin() + i * p.x.numel());
            std::copy(p.y.data.begin(), p.y.data.end(), by.data.begin() + i * p.y.numel());
        }

        std::vector<snr_db> mu_x(n), mu_y(n);
        for (std::size_t i = 0; i < n; ++i) {
            auto [mx, my] = sample_link_snrs(snr_rng_, cfg_);
            mu_x[i] = mx;
            mu_y[i] = my;
        }

        tape<Real> t;
        bound_model<Real> bm = bind_model(t, model_);
        var vx = t.leaf(std::move(bx));
        var vy = t.leaf(std::move(by));
        var sx = encode_to_rows(t, model_.enc_x, bm, vx, mu_x, cfg_.arch);
        var sy = encode_to_rows(t, model_.enc_y, bm, vy, mu_y, cfg_.arch);
        var rx = add(t, sx, t.leaf(draw_noise(mu_x)));
        var ry = add(t, sy, t.leaf(draw_noise(mu_y)));
        auto [xhat, yhat] = decode_images(t, model_.dec, bm, rx, ry, mu_x, mu_y, cfg_.arch);
        var loss = distortion_loss(t, vx, xhat, vy, yhat, cfg_.alpha, cfg_.loss);

        const double loss_value = static_cast<double>(t.value(loss).data[0]);
        if (!std::isfinite(loss_value))
            throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(iteration_) +
                                     " (seeds data=" + std::to_string(cfg_.seed_data) +
                                     " noise=" + std::to_string(cfg_.seed_noise) +
                                     " init=" + std::to_string(cfg_.seed_init) + ")");
        t.backward(loss);

        adam_config acfg;
        acfg.lr = cfg_.learning_rate;
        for (std::size_t i = 0; i < bm.ordered.size(); ++i)
            adam_step(*bm.param_ptrs[i], t.adjoint(bm.ordered[i]), opt_[i], acfg);

        ++iteration_;
        return loss_value;
    }

    std::uint64_t iteration() const { return iteration_; }
    model<Real>& current_model() { return model_; }
    const train_config& config() const { return cfg_; }

    checkpoint_data snapshot() {
        checkpoint_data ck = snapshot_model(model_);
        ck.has_optimizer = true;
        ck.adam_step = opt_.empty() ? 0 : opt_[0].step;
        for (const auto& st : opt_)
            ck.moments.emplace_back(tensor_cast<float>(st.m), tensor_cast<float>(st.v));
        ck.iteration = iteration_;
        ck.rng_states = {{"data", data_rng_.serialize()},
                         {"noise", noise_rng_.serialize()},
                         {"snr", snr_rng_.serialize()}};
        return ck;
    }

    void save(const std::filesystem::path& path) { write_checkpoint(path, snapshot()); }

  private:
    explicit trainer(const train_config& cfg)
        : cfg_(cfg), data_rng_(cfg.seed_data), noise_rng_(cfg.seed_noise),
          snr_rng_(derive_seed(cfg.seed_noise, 0x5172)) {
        load_dataset();
    }

    void load_dataset() {
        if (cfg_.source == data_source::synthetic) {
            pairs_.reserve(cfg_.train_pairs);
            // training pair seeds occupy [seed_data, seed_data + train_pairs)
            for (std::size_t i = 0; i < cfg_.train_pairs; ++i)
                pairs_.push_back(generate_pair<Real>(cfg_.seed_data + i, cfg_.overlap, cfg_.arch.image_h,
                                                     cfg_.arch.image_w, cfg_.jitter()));
        } else {
            auto loaded = load_pairs<Real>(cfg_.data_dir);
            if (loaded.pairs.empty())
                throw std::runtime_error("train: no pairs found in " + cfg_.data_dir);
            for (auto& p : loaded.pairs) {
                if (p.x.shape[1] != cfg_.arch.image_h || p.x.shape[2] != cfg_.arch.image_w) {
                    p.x = center_crop_resize(p.x, cfg_.arch.image_h, cfg_.arch.image_w);
                    p.y = center_crop_resize(p.y, cfg_.arch.image_h, cfg_.arch.image_w);
                }
                pairs_.push_back(std::move(p));
            }
        }
    }

    std::size_t next_pair_index() {
        return static_cast<std::size_t>(data_rng_.uniform() * static_cast<double>(pairs_.size())) %
               pairs_.size();
    }

    /// Unit-variance channel noise scaled per item by sigma(mu), flattened
    /// to the signal row layout. Draw count per item is fixed by the channel
    /// kind alone.
    tensor<Real> draw_noise(const std::vector<snr_db>& mu) {
        const std::size_t k = cfg_.arch.symbols_per_image();
        tensor<Real> out({mu.size(), 2 * k});
        for (std::size_t i = 0; i < mu.size(); ++i) {
            const channel_kind kind = mu[i].noiseless ? channel_kind::noiseless : cfg_.channel;
            const double var = mu[i].noiseless ? 0.0 : snr_to_noise_variance(mu[i], 1.0);
            const std::vector<Real> row = effective_noise_rows<Real>(kind, var, k, noise_rng_);
            std::copy(row.begin(), row.end(), out.data.begin() + i * 2 * k);
        }
        return out;
    }

    train_config cfg_;
    model<Real> model_;
    std::vector<adam_state<Real>> opt_;
    std::vector<stereo_pair<Real>> pairs_;
    rng data_rng_;
    rng noise_rng_;
    rng snr_rng_;
    std::uint64_t iteration_ = 0;

    void init_optimizer() {
        opt_.clear();
        for_each_param(model_, [&](const std::string&, tensor<Real>& t) { opt_.emplace_back(t.shape); });
    }
};

}  // namespace djscc
