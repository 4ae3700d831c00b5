// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "djscc/adam.hpp"
#include "djscc/autodiff.hpp"
#include "djscc/channel.hpp"
#include "djscc/kvtext.hpp"
#include "djscc/ops.hpp"
#include "djscc/rng.hpp"
#include "djscc/tensor.hpp"

namespace djscc {

// ---------------------------------------------------------------------------
// configuration

/// Architecture parameters. Three stride-2 stages are fixed, so one spatial
/// vector at the bottleneck covers an 8x8 pixel patch; everything else is
/// configurable.
struct model_config {
    std::size_t image_h = 32;
    std::size_t image_w = 64;
    std::vector<std::size_t> enc_widths = {16, 32, 32};
    std::vector<std::size_t> enc_kernels = {5, 5, 5};
    std::size_t bottleneck_channels = 8;       // C*
    std::vector<std::size_t> scam_stages = {1, 2};  // decoder stages followed by a SCAM
    std::size_t mlp_multiplier = 4;            // C_h = multiplier * C
    double token_lo_db = -3.0;
    double token_hi_db = 14.0;
    double token_interval_db = 1.0;

    static constexpr std::size_t downscale_stages = 3;
    static constexpr std::size_t patch = 8;  // 2^downscale_stages

    void validate() const {
        if (image_h % patch != 0 || image_w % patch != 0 || image_h == 0 || image_w == 0)
            throw std::invalid_argument("model_config: image extents must be positive multiples of 8, got " +
                                        std::to_string(image_h) + "x" + std::to_string(image_w));
        if (enc_widths.size() != downscale_stages || enc_kernels.size() != downscale_stages)
            throw std::invalid_argument("model_config: need exactly 3 encoder widths and kernels");
        for (std::size_t k : enc_kernels)
            if (k % 2 == 0 || k == 0) throw std::invalid_argument("model_config: kernel sizes must be odd");
        for (std::size_t w : enc_widths)
            if (w == 0) throw std::invalid_argument("model_config: zero encoder width");
        if (bottleneck_channels == 0) throw std::invalid_argument("model_config: bottleneck_channels must be positive");
        if ((bottleneck_channels * bottleneck_h() * bottleneck_w()) % 2 != 0)
            throw std::invalid_argument("model_config: bottleneck element count must be even to frame complex symbols");
        if (mlp_multiplier == 0) throw std::invalid_argument("model_config: mlp_multiplier must be positive");
        if (!(token_lo_db < token_hi_db) || token_interval_db <= 0)
            throw std::invalid_argument("model_config: token range must satisfy lo < hi and interval > 0");
        std::vector<std::size_t> s = scam_stages;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] < 1 || s[i] > 2)
                throw std::invalid_argument("model_config: scam_stages entries must be 1 or 2");
            if (i > 0 && s[i] == s[i - 1]) throw std::invalid_argument("model_config: duplicate scam stage");
        }
    }

    std::size_t bottleneck_h() const { return image_h / patch; }
    std::size_t bottleneck_w() const { return image_w / patch; }

    /// Channel uses per image: k = C* * h * w / 2.
    std::size_t symbols_per_image() const {
        return bottleneck_channels * bottleneck_h() * bottleneck_w() / 2;
    }

    /// R = k / n with n = 3*H*W source dimensions.
    double bandwidth_ratio() const {
        return static_cast<double>(symbols_per_image()) / static_cast<double>(3 * image_h * image_w);
    }

    /// Number of SNR tokens S_1..S_m covering [lo, hi]; the noiseless token
    /// is extra. The last bin closes the top edge.
    std::size_t snr_token_count() const {
        return static_cast<std::size_t>(
                   std::ceil((token_hi_db - token_lo_db) / token_interval_db - 1e-12)) + 1;
    }

    /// Feature channels after decoder stage s (1-based; stage 3 emits RGB).
    std::size_t decoder_stage_channels(std::size_t stage) const {
        if (stage == 1) return enc_widths[1];
        if (stage == 2) return enc_widths[0];
        throw std::invalid_argument("decoder_stage_channels: stage must be 1 or 2");
    }

    bool operator==(const model_config&) const = default;

    std::string serialize() const {
        std::ostringstream os;
        auto list = [](const std::vector<std::size_t>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
            return s;
        };
        os << "image_h=" << image_h << "\nimage_w=" << image_w
           << "\nenc_widths=" << list(enc_widths) << "\nenc_kernels=" << list(enc_kernels)
           << "\nbottleneck_channels=" << bottleneck_channels
           << "\nscam_stages=" << list(scam_stages)
           << "\nmlp_multiplier=" << mlp_multiplier
           << "\ntoken_lo_db=" << kv_format_double(token_lo_db)
           << "\ntoken_hi_db=" << kv_format_double(token_hi_db)
           << "\ntoken_interval_db=" << kv_format_double(token_interval_db) << "\n";
        return os.str();
    }

    static model_config deserialize(const std::string& text) {
        const kv_text kv = kv_text::parse(text);
        model_config c;
        auto get_size = [&](const char* k) { return static_cast<std::size_t>(kv_parse_int(k, kv.get(k))); };
        auto get_list = [&](const char* k) {
            std::vector<std::size_t> out;
            for (const auto& s : kv_split_list(kv.get(k)))
                out.push_back(static_cast<std::size_t>(kv_parse_int(k, s)));
            return out;
        };
        c.image_h = get_size("image_h");
        c.image_w = get_size("image_w");
        c.enc_widths = get_list("enc_widths");
        c.enc_kernels = get_list("enc_kernels");
        c.bottleneck_channels = get_size("bottleneck_channels");
        c.scam_stages = get_list("scam_stages");
        c.mlp_multiplier = get_size("mlp_multiplier");
        c.token_lo_db = kv_parse_double("token_lo_db", kv.get("token_lo_db"));
        c.token_hi_db = kv_parse_double("token_hi_db", kv.get("token_hi_db"));
        c.token_interval_db = kv_parse_double("token_interval_db", kv.get("token_interval_db"));
        c.validate();
        return c;
    }
};

/// Map a link SNR to a token row. Finite values are clamped into [lo, hi]
/// and binned half-open with the top edge closed; NOISELESS selects the
/// dedicated extra row (index m).
inline std::size_t select_token(snr_db mu, const model_config& cfg) {
    const std::size_t m = cfg.snr_token_count();
    if (mu.noiseless) return m;
    double v = std::clamp(mu.db, cfg.token_lo_db, cfg.token_hi_db);
    auto j = static_cast<std::size_t>(std::floor((v - cfg.token_lo_db) / cfg.token_interval_db));
    return std::min(j, m - 1);
}

/// Linear rescale of mu onto [0,1] over the token range, for the AF gates.
/// NOISELESS maps to 1.
inline double snr_unit_scale(snr_db mu, const model_config& cfg) {
    if (mu.noiseless) return 1.0;
    const double v = std::clamp(mu.db, cfg.token_lo_db, cfg.token_hi_db);
    return (v - cfg.token_lo_db) / (cfg.token_hi_db - cfg.token_lo_db);
}

// ---------------------------------------------------------------------------
// parameters

/// SNR-conditioned channel gating: pooled per-channel statistics plus the
/// rescaled SNR pass through a two-layer perceptron ending in sigmoid gates.
template <typename Real>
struct af_params {
    tensor<Real> w1;  // [C+1, C]
    tensor<Real> b1;  // [C]
    tensor<Real> w2;  // [C, C]
    tensor<Real> b2;  // [C]
    bool force_identity_gates = false;  // test hook: bypass gating entirely
};

/// One convolutional block: conv (or transpose conv), channel norm, ReLU,
/// AF gating.
template <typename Real>
struct conv_block_params {
    tensor<Real> kernels;  // conv: [Co,Ci,K,K]; transpose conv: [Ci,Co,K,K]
    tensor<Real> norm_gain;
    tensor<Real> norm_bias;
    af_params<Real> af;
};

/// Single bare convolution (the bandwidth compress/decompress "*" layers and
/// the final RGB layer).
template <typename Real>
struct plain_conv_params {
    tensor<Real> kernels;
    tensor<Real> bias;  // per output channel
};

template <typename Real>
struct scam_params {
    tensor<Real> w_q, w_k, w_v, w_o;          // [C,C]
    tensor<Real> w_1;                         // [C,Ch]
    tensor<Real> b_1;                         // [Ch]
    tensor<Real> w_2;                         // [Ch,C]
    tensor<Real> b_2;                         // [C]
    tensor<Real> ln1_gain, ln1_bias;          // pre-QKV normalization
    tensor<Real> ln2_gain, ln2_bias;          // pre-MLP normalization
};

/// Learnable per-SNR-range tokens. rows[0..m-1] are S_1..S_m; row m is the
/// distinct noiseless token.
template <typename Real>
struct quality_token_bank {
    tensor<Real> rows;  // [m+1, C]
};

template <typename Real>
struct scam_instance {
    std::size_t stage = 1;  // decoder stage this follows
    scam_params<Real> params;
    quality_token_bank<Real> bank;
};

template <typename Real>
struct encoder_params {
    std::vector<conv_block_params<Real>> blocks;  // 3 stride-2 blocks
    plain_conv_params<Real> compress;             // 1x1 conv to C*
};

template <typename Real>
struct decoder_params {
    plain_conv_params<Real> decompress;           // 1x1 conv from C*
    conv_block_params<Real> stage1;               // transpose conv blocks
    conv_block_params<Real> stage2;
    plain_conv_params<Real> output;               // transpose conv to RGB
    std::vector<scam_instance<Real>> scams;
};

/// Full system: two independently parameterized edge encoders and one shared
/// joint decoder.
template <typename Real>
struct model {
    model_config config;
    encoder_params<Real> enc_x;
    encoder_params<Real> enc_y;
    decoder_params<Real> dec;
};

// ---------------------------------------------------------------------------
// parameter traversal
//
// for_each_param fixes the canonical parameter order and names used by the
// optimizer, the checkpoint format and tape binding. bind_model below must
// visit tensors in exactly this order.

template <typename Real, typename F>
void for_each_param_impl(af_params<Real>& af, const std::string& prefix, F&& f) {
    f(prefix + ".w1", af.w1);
    f(prefix + ".b1", af.b1);
    f(prefix + ".w2", af.w2);
    f(prefix + ".b2", af.b2);
}

template <typename Real, typename F>
void for_each_param_impl(conv_block_params<Real>& b, const std::string& prefix, F&& f) {
    f(prefix + ".kernels", b.kernels);
    f(prefix + ".norm_gain", b.norm_gain);
    f(prefix + ".norm_bias", b.norm_bias);
    for_each_param_impl(b.af, prefix + ".af", f);
}

template <typename Real, typename F>
void for_each_param_impl(plain_conv_params<Real>& p, const std::string& prefix, F&& f) {
    f(prefix + ".kernels", p.kernels);
    f(prefix + ".bias", p.bias);
}

template <typename Real, typename F>
void for_each_param_impl(scam_params<Real>& s, const std::string& prefix, F&& f) {
    f(prefix + ".w_q", s.w_q);
    f(prefix + ".w_k", s.w_k);
    f(prefix + ".w_v", s.w_v);
    f(prefix + ".w_o", s.w_o);
    f(prefix + ".w_1", s.w_1);
    f(prefix + ".b_1", s.b_1);
    f(prefix + ".w_2", s.w_2);
    f(prefix + ".b_2", s.b_2);
    f(prefix + ".ln1_gain", s.ln1_gain);
    f(prefix + ".ln1_bias", s.ln1_bias);
    f(prefix + ".ln2_gain", s.ln2_gain);
    f(prefix + ".ln2_bias", s.ln2_bias);
}

template <typename Real, typename F>
void for_each_param_impl(encoder_params<Real>& e, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < e.blocks.size(); ++i)
        for_each_param_impl(e.blocks[i], prefix + ".block" + std::to_string(i), f);
    for_each_param_impl(e.compress, prefix + ".compress", f);
}

template <typename Real, typename F>
void for_each_param(model<Real>& m, F&& f) {
    for_each_param_impl(m.enc_x, "enc_x", f);
    for_each_param_impl(m.enc_y, "enc_y", f);
    for_each_param_impl(m.dec.decompress, "dec.decompress", f);
    for_each_param_impl(m.dec.stage1, "dec.stage1", f);
    for_each_param_impl(m.dec.stage2, "dec.stage2", f);
    for_each_param_impl(m.dec.output, "dec.output", f);
    for (auto& s : m.dec.scams) {
        const std::string p = "dec.scam_stage" + std::to_string(s.stage);
        for_each_param_impl(s.params, p, f);
        f(p + ".tokens", s.bank.rows);
    }
}

template <typename Real, typename F>
void for_each_param(const model<Real>& m, F&& f) {
    for_each_param(const_cast<model<Real>&>(m),
                   [&f](const std::string& n, tensor<Real>& t) { f(n, static_cast<const tensor<Real>&>(t)); });
}

template <typename Real>
std::size_t parameter_count(const model<Real>& m) {
    std::size_t n = 0;
    for_each_param(m, [&n](const std::string&, const tensor<Real>& t) { n += t.numel(); });
    return n;
}

// ---------------------------------------------------------------------------
// construction

namespace detail {

template <typename Real>
tensor<Real> fan_in_uniform(shape_t shape, std::size_t fan_in, rng& r) {
    tensor<Real> t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& x : t.data) x = static_cast<Real>(r.uniform(-bound, bound));
    return t;
}

template <typename Real>
af_params<Real> make_af(std::size_t c, rng& r) {
    af_params<Real> af;
    af.w1 = fan_in_uniform<Real>({c + 1, c}, c + 1, r);
    af.b1 = tensor<Real>({c});
    af.w2 = fan_in_uniform<Real>({c, c}, c, r);
    af.b2 = tensor<Real>({c});
    return af;
}

template <typename Real>
conv_block_params<Real> make_conv_block(std::size_t ci, std::size_t co, std::size_t k, bool transposed,
                                        rng& r) {
    conv_block_params<Real> b;
    const shape_t kshape = transposed ? shape_t{ci, co, k, k} : shape_t{co, ci, k, k};
    b.kernels = fan_in_uniform<Real>(kshape, ci * k * k, r);
    b.norm_gain = tensor<Real>::full({co}, Real(1));
    b.norm_bias = tensor<Real>({co});
    b.af = make_af<Real>(co, r);
    return b;
}

template <typename Real>
plain_conv_params<Real> make_plain_conv(shape_t kshape, std::size_t fan_in, std::size_t co, rng& r) {
    plain_conv_params<Real> p;
    p.kernels = fan_in_uniform<Real>(std::move(kshape), fan_in, r);
    p.bias = tensor<Real>({co});
    return p;
}

template <typename Real>
scam_params<Real> make_scam(std::size_t c, std::size_t ch, rng& r) {
    scam_params<Real> s;
    s.w_q = fan_in_uniform<Real>({c, c}, c, r);
    s.w_k = fan_in_uniform<Real>({c, c}, c, r);
    s.w_v = fan_in_uniform<Real>({c, c}, c, r);
    s.w_o = fan_in_uniform<Real>({c, c}, c, r);
    s.w_1 = fan_in_uniform<Real>({c, ch}, c, r);
    s.b_1 = tensor<Real>({ch});
    s.w_2 = fan_in_uniform<Real>({ch, c}, ch, r);
    s.b_2 = tensor<Real>({c});
    s.ln1_gain = tensor<Real>::full({c}, Real(1));
    s.ln1_bias = tensor<Real>({c});
    s.ln2_gain = tensor<Real>::full({c}, Real(1));
    s.ln2_bias = tensor<Real>({c});
    return s;
}

template <typename Real>
encoder_params<Real> make_encoder(const model_config& cfg, rng& r) {
    encoder_params<Real> e;
    std::size_t ci = 3;
    for (std::size_t i = 0; i < model_config::downscale_stages; ++i) {
        e.blocks.push_back(make_conv_block<Real>(ci, cfg.enc_widths[i], cfg.enc_kernels[i], false, r));
        ci = cfg.enc_widths[i];
    }
    e.compress = make_plain_conv<Real>({cfg.bottleneck_channels, ci, 1, 1}, ci, cfg.bottleneck_channels, r);
    return e;
}

}  // namespace detail

/// Build a model with freshly initialized parameters. Weights use a
/// fan-in-scaled uniform, tokens 0.02 * N(0,1), norm gains 1 and biases 0.
/// The rng consumption order equals the for_each_param order.
template <typename Real>
model<Real> make_model(const model_config& cfg, rng& r) {
    cfg.validate();
    model<Real> m;
    m.config = cfg;
    m.enc_x = detail::make_encoder<Real>(cfg, r);
    m.enc_y = detail::make_encoder<Real>(cfg, r);

    const std::size_t c1 = cfg.enc_widths[0], c2 = cfg.enc_widths[1], c3 = cfg.enc_widths[2];
    m.dec.decompress = detail::make_plain_conv<Real>({c3, cfg.bottleneck_channels, 1, 1},
                                                     cfg.bottleneck_channels, c3, r);
    m.dec.stage1 = detail::make_conv_block<Real>(c3, c2, cfg.enc_kernels[2], true, r);
    m.dec.stage2 = detail::make_conv_block<Real>(c2, c1, cfg.enc_kernels[1], true, r);
    m.dec.output = detail::make_plain_conv<Real>({c1, 3, cfg.enc_kernels[0], cfg.enc_kernels[0]},
                                                 c1 * cfg.enc_kernels[0] * cfg.enc_kernels[0], 3, r);

    std::vector<std::size_t> stages = cfg.scam_stages;
    std::sort(stages.begin(), stages.end());
    for (std::size_t stage : stages) {
        scam_instance<Real> inst;
        inst.stage = stage;
        const std::size_t c = cfg.decoder_stage_channels(stage);
        inst.params = detail::make_scam<Real>(c, cfg.mlp_multiplier * c, r);
        inst.bank.rows = tensor<Real>({cfg.snr_token_count() + 1, c});
        for (auto& x : inst.bank.rows.data) x = static_cast<Real>(0.02 * r.gaussian());
        m.dec.scams.push_back(std::move(inst));
    }
    return m;
}

// ---------------------------------------------------------------------------
// tape binding

template <typename Real>
struct bound_model {
    std::vector<var> ordered;                 // leaves in for_each_param order
    std::vector<tensor<Real>*> param_ptrs;    // matching parameter storage
    std::vector<std::string> names;

    var of(const tensor<Real>& t) const {
        for (std::size_t i = 0; i < param_ptrs.size(); ++i)
            if (param_ptrs[i] == &t) return ordered[i];
        throw std::logic_error("bound_model: tensor is not a bound parameter");
    }
};

/// Put every parameter on the tape as a leaf. Forward code looks leaves up
/// via bound_model::of; after backward(), adjoints pair up with param_ptrs.
template <typename Real>
bound_model<Real> bind_model(tape<Real>& t, model<Real>& m) {
    bound_model<Real> b;
    for_each_param(m, [&](const std::string& name, tensor<Real>& p) {
        b.ordered.push_back(t.leaf(p));
        b.param_ptrs.push_back(&p);
        b.names.push_back(name);
    });
    return b;
}

// ---------------------------------------------------------------------------
// forward pieces

/// AF gating of a [N,C,H,W] feature map under per-sample SNRs.
template <typename Real>
var af_modulate(tape<Real>& t, const af_params<Real>& af, const bound_model<Real>& bm, var f,
                const std::vector<snr_db>& mu, const model_config& cfg) {
    const auto& shape = t.value(f).shape;
    if (shape.size() != 4) throw std::invalid_argument("af_modulate: need [N,C,H,W], got " + shape_str(shape));
    if (mu.size() != shape[0]) throw std::invalid_argument("af_modulate: need one SNR per sample");
    if (af.force_identity_gates) return f;
    const std::size_t n = shape[0];
    var pooled = global_avg_pool(t, f);  // [N,C]
    tensor<Real> muv({n, 1});
    for (std::size_t i = 0; i < n; ++i) muv.data[i] = static_cast<Real>(snr_unit_scale(mu[i], cfg));
    var mu_leaf = t.leaf(std::move(muv));
    var in = concat(t, {pooled, mu_leaf}, 1);  // [N,C+1]
    var h = relu(t, add_bias_lastdim(t, matmul(t, in, bm.of(af.w1)), bm.of(af.b1)));
    var gates = sigmoid(t, add_bias_lastdim(t, matmul(t, h, bm.of(af.w2)), bm.of(af.b2)));
    return scale_channels(t, f, gates);
}

template <typename Real>
var conv_block_forward(tape<Real>& t, const conv_block_params<Real>& blk, const bound_model<Real>& bm,
                       var f, const std::vector<snr_db>& mu, const model_config& cfg, bool transposed) {
    const std::size_t k = t.value(bm.of(blk.kernels)).shape[2];
    var y = transposed ? conv2d_transpose(t, f, bm.of(blk.kernels), 2)
                       : conv2d(t, f, bm.of(blk.kernels), 2, (k - 1) / 2);
    y = channel_norm(t, y, bm.of(blk.norm_gain), bm.of(blk.norm_bias));
    y = relu(t, y);
    return af_modulate(t, blk.af, bm, y, mu, cfg);
}

/// Full edge encoder: three stride-2 blocks, bandwidth compression to C*,
/// then per-sample power normalization of the flattened complex symbols.
/// Returns [N, 2k] rows with ||row||^2 = k*P.
template <typename Real>
var encode_to_rows(tape<Real>& t, const encoder_params<Real>& enc, const bound_model<Real>& bm,
                   var images, const std::vector<snr_db>& mu, const model_config& cfg,
                   double power = 1.0) {
    const auto& shape = t.value(images).shape;
    if (shape.size() != 4 || shape[1] != 3 || shape[2] != cfg.image_h || shape[3] != cfg.image_w)
        throw std::invalid_argument("encode: expected [N,3," + std::to_string(cfg.image_h) + "," +
                                    std::to_string(cfg.image_w) + "], got " + shape_str(shape));
    var f = images;
    for (const auto& blk : enc.blocks) f = conv_block_forward(t, blk, bm, f, mu, cfg, false);
    f = conv2d(t, f, bm.of(enc.compress.kernels), 1, 0);
    f = add_bias_channel(t, f, bm.of(enc.compress.bias));
    const std::size_t n = shape[0];
    const std::size_t d = cfg.bottleneck_channels * cfg.bottleneck_h() * cfg.bottleneck_w();
    var rows = reshape(t, f, {n, d});
    return power_normalize_rows(t, rows, static_cast<double>(cfg.symbols_per_image()) * power);
}

/// Cross attention between two token-attached streams (Mx and My may
/// differ). Both use the same weights; each stream's queries attend over the
/// partner's keys/values, scores are scaled by 1/sqrt(C) and softmaxed over
/// the partner-position axis, the attended values pass through W_o into a
/// residual, and a ReLU MLP with skip finishes.
template <typename Real>
std::pair<var, var> scam_pair(tape<Real>& t, const scam_params<Real>& p, const bound_model<Real>& bm,
                              var fx, var fy) {
    const auto& sx = t.value(fx).shape;
    const auto& sy = t.value(fy).shape;
    if (sx.size() != 3 || sy.size() != 3 || sx[2] != sy[2] || sx[0] != sy[0])
        throw std::invalid_argument("scam_pair: incompatible streams " + shape_str(sx) + " vs " + shape_str(sy));
    const std::size_t c = sx[2];
    const Real inv_sqrt_c = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(c)));

    auto project = [&](var tokens, const tensor<Real>& w) {
        const auto& s = t.value(tokens).shape;
        var flat = reshape(t, tokens, {s[0] * s[1], s[2]});
        var prod = matmul(t, flat, bm.of(w));
        return reshape(t, prod, {s[0], s[1], t.value(bm.of(w)).shape[1]});
    };

    var lx = layer_norm(t, fx, bm.of(p.ln1_gain), bm.of(p.ln1_bias));
    var ly = layer_norm(t, fy, bm.of(p.ln1_gain), bm.of(p.ln1_bias));
    var qx = project(lx, p.w_q), kx = project(lx, p.w_k), vx = project(lx, p.w_v);
    var qy = project(ly, p.w_q), ky = project(ly, p.w_k), vy = project(ly, p.w_v);

    auto stream = [&](var self, var q_self, var k_partner, var v_partner) {
        var scores = scale(t, bmm(t, q_self, k_partner, /*transpose_b=*/true), inv_sqrt_c);
        var attn = softmax(t, scores, 2);
        var mixed = project(bmm(t, attn, v_partner), p.w_o);
        var h1 = add(t, self, mixed);
        var ln = layer_norm(t, h1, bm.of(p.ln2_gain), bm.of(p.ln2_bias));
        var hid = relu(t, add_bias_lastdim(t, project(ln, p.w_1), bm.of(p.b_1)));
        var out = add_bias_lastdim(t, project(hid, p.w_2), bm.of(p.b_2));
        return add(t, h1, out);
    };

    return {stream(fx, qx, ky, vy), stream(fy, qy, kx, vx)};
}

/// Apply one SCAM instance to the batch-concatenated decoder feature map
/// [2N,C,h,w]: split into streams, attach per-sample quality tokens, cross
/// attend, strip tokens, re-concatenate.
template <typename Real>
var scam_apply(tape<Real>& t, const scam_instance<Real>& inst, const bound_model<Real>& bm, var f,
               const std::vector<snr_db>& mu_x, const std::vector<snr_db>& mu_y,
               const model_config& cfg) {
    const auto& shape = t.value(f).shape;
    const std::size_t n = shape[0] / 2, h = shape[2], w = shape[3];
    var fx = tokens_from_nchw(t, slice(t, f, 0, 0, n));
    var fy = tokens_from_nchw(t, slice(t, f, 0, n, n));
    std::vector<std::size_t> ix(n), iy(n);
    for (std::size_t i = 0; i < n; ++i) {
        ix[i] = select_token(mu_x[i], cfg);
        iy[i] = select_token(mu_y[i], cfg);
    }
    var bx = attach_quality_tokens(t, fx, bm.of(inst.bank.rows), ix);
    var by = attach_quality_tokens(t, fy, bm.of(inst.bank.rows), iy);
    auto [ox, oy] = scam_pair(t, inst.params, bm, bx, by);
    var gx = nchw_from_tokens(t, drop_token_row(t, ox), h, w);
    var gy = nchw_from_tokens(t, drop_token_row(t, oy), h, w);
    return concat(t, {gx, gy}, 0);
}

/// Shared joint decoder over both received streams in one parallel pass
/// (streams concatenated along the batch axis; SCAM pairs sample i of the
/// x-batch with sample i of the y-batch). Returns (xhat, yhat) in [0,1].
template <typename Real>
std::pair<var, var> decode_images(tape<Real>& t, const decoder_params<Real>& dec,
                                  const bound_model<Real>& bm, var rx_x, var rx_y,
                                  const std::vector<snr_db>& mu_x, const std::vector<snr_db>& mu_y,
                                  const model_config& cfg) {
    const auto& sx = t.value(rx_x).shape;
    const auto& sy = t.value(rx_y).shape;
    const std::size_t d = cfg.bottleneck_channels * cfg.bottleneck_h() * cfg.bottleneck_w();
    if (sx.size() != 2 || sx[1] != d || sx != sy)
        throw std::invalid_argument("decode: expected two [N," + std::to_string(d) + "] signals, got " +
                                    shape_str(sx) + " and " + shape_str(sy));
    const std::size_t n = sx[0];
    if (mu_x.size() != n || mu_y.size() != n)
        throw std::invalid_argument("decode: need one SNR per sample and link");

    var fx = reshape(t, rx_x, {n, cfg.bottleneck_channels, cfg.bottleneck_h(), cfg.bottleneck_w()});
    var fy = reshape(t, rx_y, {n, cfg.bottleneck_channels, cfg.bottleneck_h(), cfg.bottleneck_w()});
    var f = concat(t, {fx, fy}, 0);
    std::vector<snr_db> mu_all = mu_x;
    mu_all.insert(mu_all.end(), mu_y.begin(), mu_y.end());

    f = conv2d(t, f, bm.of(dec.decompress.kernels), 1, 0);
    f = add_bias_channel(t, f, bm.of(dec.decompress.bias));

    auto scam_at = [&](std::size_t stage) -> const scam_instance<Real>* {
        for (const auto& s : dec.scams)
            if (s.stage == stage) return &s;
        return nullptr;
    };

    f = conv_block_forward(t, dec.stage1, bm, f, mu_all, cfg, true);
    if (const auto* s = scam_at(1)) f = scam_apply(t, *s, bm, f, mu_x, mu_y, cfg);
    f = conv_block_forward(t, dec.stage2, bm, f, mu_all, cfg, true);
    if (const auto* s = scam_at(2)) f = scam_apply(t, *s, bm, f, mu_x, mu_y, cfg);

    f = conv2d_transpose(t, f, bm.of(dec.output.kernels), 2);
    f = add_bias_channel(t, f, bm.of(dec.output.bias));
    f = sigmoid(t, f);

    return {slice(t, f, 0, 0, n), slice(t, f, 0, n, n)};
}

// ---------------------------------------------------------------------------
// signal-level wrappers

enum class stream_id { x, y };

/// Encode one image to power-normalized complex symbols. The encoder for one
/// stream never sees the other image.
template <typename Real>
complex_signal<Real> jsce_encode(model<Real>& m, stream_id which, const tensor<Real>& image,
                                 snr_db mu, double power = 1.0) {
    if (image.rank() != 3)
        throw std::invalid_argument("jsce_encode: expected [3,H,W], got " + shape_str(image.shape));
    tape<Real> t;
    bound_model<Real> bm = bind_model(t, m);
    tensor<Real> batch({1, image.shape[0], image.shape[1], image.shape[2]}, image.data);
    var rows = encode_to_rows(t, which == stream_id::x ? m.enc_x : m.enc_y, bm, t.leaf(std::move(batch)),
                              {mu}, m.config, power);
    tensor<Real> flat(shape_t{t.value(rows).shape[1]}, t.value(rows).data);
    return frame(flat);
}

/// Decode a pair of received signals; returns (xhat, yhat) as [3,H,W].
template <typename Real>
std::pair<tensor<Real>, tensor<Real>> jscd_decode(model<Real>& m, const complex_signal<Real>& sx,
                                                  const complex_signal<Real>& sy, snr_db mu_x,
                                                  snr_db mu_y) {
    const std::size_t d = 2 * m.config.symbols_per_image();
    tape<Real> t;
    bound_model<Real> bm = bind_model(t, m);
    var rx = t.leaf(tensor<Real>({1, d}, unframe(sx, {d}).data));
    var ry = t.leaf(tensor<Real>({1, d}, unframe(sy, {d}).data));
    auto [xhat, yhat] = decode_images(t, m.dec, bm, rx, ry, {mu_x}, {mu_y}, m.config);
    const shape_t img{3, m.config.image_h, m.config.image_w};
    return {tensor<Real>(img, t.value(xhat).data), tensor<Real>(img, t.value(yhat).data)};
}

}  // namespace djscc
