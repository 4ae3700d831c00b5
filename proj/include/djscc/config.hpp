// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "djscc/channel.hpp"
#include "djscc/data.hpp"
#include "djscc/kvtext.hpp"
#include "djscc/model.hpp"

namespace djscc {

enum class loss_kind { mse, ms_ssim };

inline loss_kind parse_loss_kind(const std::string& s) {
    if (s == "mse") return loss_kind::mse;
    if (s == "ms_ssim") return loss_kind::ms_ssim;
    throw std::invalid_argument("unknown loss '" + s + "' (expected mse|ms_ssim)");
}

inline std::string loss_kind_name(loss_kind k) { return k == loss_kind::mse ? "mse" : "ms_ssim"; }

enum class data_source { synthetic, directory };

/// Full run configuration: architecture, data supply, training protocol and
/// seeds. Parsed from flat key = value text; unknown keys are rejected.
struct train_config {
    model_config arch;

    // loss
    loss_kind loss = loss_kind::mse;
    double alpha = 1.0;  // relative weight of the y-term

    // optimization
    double learning_rate = 1e-4;
    std::size_t batch_size = 8;
    std::size_t iterations = 20000;
    std::size_t checkpoint_every = 1000;

    // channel protocol
    double snr_lo_db = -3.0;
    double snr_hi_db = 14.0;
    bool asymmetric = false;          // train with mu_y = NOISELESS always
    double noiseless_side_prob = 0.0; // chance per link+item of a NOISELESS draw
    channel_kind channel = channel_kind::awgn;

    // data supply
    data_source source = data_source::synthetic;
    std::string data_dir;
    std::size_t train_pairs = 64;
    double overlap = 0.7;
    double jitter_contrast = 0.05;
    double jitter_brightness = 0.05;
    double pixel_noise = 0.005;

    // seeds
    std::uint64_t seed_data = 1;
    std::uint64_t seed_noise = 2;
    std::uint64_t seed_init = 3;

    jitter_config jitter() const { return {jitter_contrast, jitter_brightness, pixel_noise}; }

    void validate() const {
        arch.validate();
        if (alpha <= 0) throw std::invalid_argument("train_config: alpha must be positive");
        // 0 is allowed as a diagnostic no-op-update mode
        if (learning_rate < 0) throw std::invalid_argument("train_config: learning_rate must be non-negative");
        if (batch_size == 0) throw std::invalid_argument("train_config: batch_size must be positive");
        if (!(snr_lo_db < snr_hi_db)) throw std::invalid_argument("train_config: snr range must satisfy lo < hi");
        if (noiseless_side_prob < 0 || noiseless_side_prob > 1)
            throw std::invalid_argument("train_config: noiseless_side_prob must be in [0,1]");
        if (channel == channel_kind::noiseless)
            throw std::invalid_argument("train_config: channel must be awgn or rayleigh");
        if (!(overlap >= 0 && overlap <= 1)) throw std::invalid_argument("train_config: overlap must be in [0,1]");
        if (source == data_source::synthetic && train_pairs == 0)
            throw std::invalid_argument("train_config: train_pairs must be positive");
        if (source == data_source::directory && data_dir.empty())
            throw std::invalid_argument("train_config: data_dir required for directory source");
        if (checkpoint_every == 0) throw std::invalid_argument("train_config: checkpoint_every must be positive");
    }

    static train_config parse(const std::string& text);
    std::string serialize() const;
};

inline train_config train_config::parse(const std::string& text) {
    static const std::set<std::string> known = {
        "image_h", "image_w", "enc_widths", "enc_kernels", "bottleneck_channels", "scam_stages",
        "mlp_multiplier", "token_lo_db", "token_hi_db", "token_interval_db",
        "loss", "alpha", "learning_rate", "batch_size", "iterations", "checkpoint_every",
        "snr_lo_db", "snr_hi_db", "asymmetric", "noiseless_side_prob", "channel",
        "data_source", "data_dir", "train_pairs", "overlap",
        "jitter_contrast", "jitter_brightness", "pixel_noise",
        "seed_data", "seed_noise", "seed_init"};

    const kv_text kv = kv_text::parse(text);
    for (const auto& [k, v] : kv.entries)
        if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");

    train_config c;
    auto size_of = [&](const char* k, std::size_t dflt) {
        if (!kv.has(k)) return dflt;
        const long long v = kv_parse_int(k, kv.get(k));
        if (v < 0) throw std::invalid_argument(std::string("config: key '") + k + "' must be non-negative");
        return static_cast<std::size_t>(v);
    };
    auto dbl_of = [&](const char* k, double dflt) { return kv.has(k) ? kv_parse_double(k, kv.get(k)) : dflt; };
    auto u64_of = [&](const char* k, std::uint64_t dflt) {
        return kv.has(k) ? static_cast<std::uint64_t>(kv_parse_int(k, kv.get(k))) : dflt;
    };
    auto list_of = [&](const char* k, std::vector<std::size_t> dflt) {
        if (!kv.has(k)) return dflt;
        std::vector<std::size_t> out;
        for (const auto& s : kv_split_list(kv.get(k)))
            out.push_back(static_cast<std::size_t>(kv_parse_int(k, s)));
        return out;
    };

    c.arch.image_h = size_of("image_h", c.arch.image_h);
    c.arch.image_w = size_of("image_w", c.arch.image_w);
    c.arch.enc_widths = list_of("enc_widths", c.arch.enc_widths);
    c.arch.enc_kernels = list_of("enc_kernels", c.arch.enc_kernels);
    c.arch.bottleneck_channels = size_of("bottleneck_channels", c.arch.bottleneck_channels);
    c.arch.scam_stages = list_of("scam_stages", c.arch.scam_stages);
    c.arch.mlp_multiplier = size_of("mlp_multiplier", c.arch.mlp_multiplier);
    c.arch.token_lo_db = dbl_of("token_lo_db", c.arch.token_lo_db);
    c.arch.token_hi_db = dbl_of("token_hi_db", c.arch.token_hi_db);
    c.arch.token_interval_db = dbl_of("token_interval_db", c.arch.token_interval_db);

    if (kv.has("loss")) c.loss = parse_loss_kind(kv.get("loss"));
    c.alpha = dbl_of("alpha", c.alpha);
    c.learning_rate = dbl_of("learning_rate", c.learning_rate);
    c.batch_size = size_of("batch_size", c.batch_size);
    c.iterations = size_of("iterations", c.iterations);
    c.checkpoint_every = size_of("checkpoint_every", c.checkpoint_every);

    c.snr_lo_db = dbl_of("snr_lo_db", c.snr_lo_db);
    c.snr_hi_db = dbl_of("snr_hi_db", c.snr_hi_db);
    if (kv.has("asymmetric")) c.asymmetric = kv_parse_bool("asymmetric", kv.get("asymmetric"));
    c.noiseless_side_prob = dbl_of("noiseless_side_prob", c.noiseless_side_prob);
    if (kv.has("channel")) c.channel = parse_channel_kind(kv.get("channel"));

    if (kv.has("data_source")) {
        const std::string& s = kv.get("data_source");
        if (s == "synthetic") c.source = data_source::synthetic;
        else if (s == "directory") c.source = data_source::directory;
        else throw std::invalid_argument("config: data_source must be synthetic|directory, got '" + s + "'");
    }
    if (kv.has("data_dir")) c.data_dir = kv.get("data_dir");
    c.train_pairs = size_of("train_pairs", c.train_pairs);
    c.overlap = dbl_of("overlap", c.overlap);
    c.jitter_contrast = dbl_of("jitter_contrast", c.jitter_contrast);
    c.jitter_brightness = dbl_of("jitter_brightness", c.jitter_brightness);
    c.pixel_noise = dbl_of("pixel_noise", c.pixel_noise);

    c.seed_data = u64_of("seed_data", c.seed_data);
    c.seed_noise = u64_of("seed_noise", c.seed_noise);
    c.seed_init = u64_of("seed_init", c.seed_init);

    c.validate();
    return c;
}

inline std::string train_config::serialize() const {
    std::string s = arch.serialize();
    s += "loss=" + loss_kind_name(loss) + "\n";
    s += "alpha=" + kv_format_double(alpha) + "\n";
    s += "learning_rate=" + kv_format_double(learning_rate) + "\n";
    s += "batch_size=" + std::to_string(batch_size) + "\n";
    s += "iterations=" + std::to_string(iterations) + "\n";
    s += "checkpoint_every=" + std::to_string(checkpoint_every) + "\n";
    s += "snr_lo_db=" + kv_format_double(snr_lo_db) + "\n";
    s += "snr_hi_db=" + kv_format_double(snr_hi_db) + "\n";
    s += "asymmetric=" + std::string(asymmetric ? "1" : "0") + "\n";
    s += "noiseless_side_prob=" + kv_format_double(noiseless_side_prob) + "\n";
    s += "channel=" + channel_kind_name(channel) + "\n";
    s += "data_source=" + std::string(source == data_source::synthetic ? "synthetic" : "directory") + "\n";
    if (!data_dir.empty()) s += "data_dir=" + data_dir + "\n";
    s += "train_pairs=" + std::to_string(train_pairs) + "\n";
    s += "overlap=" + kv_format_double(overlap) + "\n";
    s += "jitter_contrast=" + kv_format_double(jitter_contrast) + "\n";
    s += "jitter_brightness=" + kv_format_double(jitter_brightness) + "\n";
    s += "pixel_noise=" + kv_format_double(pixel_noise) + "\n";
    s += "seed_data=" + std::to_string(seed_data) + "\n";
    s += "seed_noise=" + std::to_string(seed_noise) + "\n";
    s += "seed_init=" + std::to_string(seed_init) + "\n";
    return s;
}

}  // namespace djscc
