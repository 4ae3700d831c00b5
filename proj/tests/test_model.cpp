// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <set>

#include "djscc/adam.hpp"
#include "djscc/model.hpp"
#include "support/test_util.hpp"

using namespace djscc;
using djscc::test::max_grad_err;
using djscc::test::random_tensor;
using djscc::test::rel_err;

namespace {

model_config tiny_config() {
    model_config cfg;
    cfg.image_h = 16;
    cfg.image_w = 16;
    cfg.enc_widths = {4, 4, 4};
    cfg.enc_kernels = {3, 3, 3};
    cfg.bottleneck_channels = 2;
    cfg.scam_stages = {1, 2};
    cfg.mlp_multiplier = 2;
    return cfg;
}

model_config paper_config() {
    model_config cfg;
    cfg.image_h = 128;
    cfg.image_w = 256;
    cfg.enc_widths = {64, 128, 128};
    cfg.enc_kernels = {9, 5, 5};
    cfg.bottleneck_channels = 20;
    return cfg;
}

tensor<double> random_image(shape_t shape, std::uint64_t seed) {
    rng r(seed);
    tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = r.uniform(0.05, 0.95);
    return t;
}

}  // namespace

TEST_CASE("bandwidth arithmetic matches the reported ratio") {
    const model_config cfg = paper_config();
    REQUIRE(cfg.symbols_per_image() == 5120);  // 20*16*32/2
    REQUIRE(rel_err(cfg.bandwidth_ratio(), 5120.0 / 98304.0) < 1e-12);
    REQUIRE(std::abs(cfg.bandwidth_ratio() - 0.052) < 0.0005);  // 0.05208... to three decimals

    model_config small = paper_config();
    small.image_h = 32;
    small.image_w = 32;
    REQUIRE(small.symbols_per_image() == 160);  // 20*4*4/2
}

TEST_CASE("model_config validation") {
    model_config bad = tiny_config();
    bad.image_w = 20;  // not divisible by 8
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tiny_config();
    bad.enc_kernels = {3, 4, 3};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tiny_config();
    bad.scam_stages = {3};
    REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    REQUIRE_NOTHROW(tiny_config().validate());
}

TEST_CASE("model_config serialization round trip") {
    const model_config cfg = tiny_config();
    const model_config back = model_config::deserialize(cfg.serialize());
    REQUIRE(back == cfg);
    REQUIRE(back.serialize() == cfg.serialize());
}

TEST_CASE("token count and bin routing") {
    model_config cfg;  // [-3, 14] at 1 dB
    REQUIRE(cfg.snr_token_count() == 18);

    // lower boundary lands in the first bin
    REQUIRE(select_token(snr_db{-3.0}, cfg) == 0);
    // 13.5 dB sits in bin [13,14), 0-indexed 16
    REQUIRE(select_token(snr_db{13.5}, cfg) == 16);
    // closed top edge
    REQUIRE(select_token(snr_db{14.0}, cfg) == 17);
    // clamping absorbs out-of-range values
    REQUIRE(select_token(snr_db{-10.0}, cfg) == 0);
    REQUIRE(select_token(snr_db{99.0}, cfg) == 17);
    // the noiseless token is the distinct extra row
    REQUIRE(select_token(snr_db::make_noiseless(), cfg) == 18);
}

TEST_CASE("token routing selects exactly one token per snr, constant within bins") {
    model_config cfg;
    const std::size_t m = cfg.snr_token_count();
    std::set<std::size_t> seen;
    for (double mu = -3.0; mu <= 14.0; mu += 0.04) {
        const std::size_t j = select_token(snr_db{mu}, cfg);
        REQUIRE(j < m);
        seen.insert(j);
        // adjacent values within the same 1 dB bin share the token
        const double base = cfg.token_lo_db + std::floor(mu - cfg.token_lo_db);
        if (mu + 0.01 < base + 1.0) REQUIRE(select_token(snr_db{mu + 0.01}, cfg) == j);
    }
    seen.insert(select_token(snr_db{14.0}, cfg));  // closed top edge is its own bin
    REQUIRE(seen.size() == m);
}

TEST_CASE("af identity hook bypasses gating exactly") {
    rng r(600);
    af_params<double> af = detail::make_af<double>(4, r);
    af.force_identity_gates = true;
    tensor<double> f = random_tensor({2, 4, 3, 3}, r);
    tape<double> t;
    bound_model<double> bm;
    var vf = t.leaf(f);
    var out = af_modulate(t, af, bm, vf, {snr_db{1.0}, snr_db{7.0}}, model_config{});
    REQUIRE(t.value(out).data == f.data);
}

TEST_CASE("af gating preserves shape and stays in (0,1)") {
    rng r(601);
    af_params<double> af = detail::make_af<double>(4, r);
    tensor<double> f = random_tensor({2, 4, 3, 3}, r, 0.1, 1.0);
    tape<double> t;
    bound_model<double> bm;
    auto reg = [&](tensor<double>& x) {
        bm.ordered.push_back(t.leaf(x));
        bm.param_ptrs.push_back(&x);
        bm.names.push_back("");
    };
    reg(af.w1);
    reg(af.b1);
    reg(af.w2);
    reg(af.b2);
    var out = af_modulate(t, af, bm, t.leaf(f), {snr_db{1.0}, snr_db::make_noiseless()}, model_config{});
    REQUIRE(t.value(out).shape == f.shape);
    // every output element is the input scaled by a gate in (0,1)
    for (std::size_t i = 0; i < f.numel(); ++i) {
        const double ratio = t.value(out).data[i] / f.data[i];
        REQUIRE(ratio > 0.0);
        REQUIRE(ratio < 1.0);
    }
}

TEST_CASE("af gates become snr-sensitive after a few training steps") {
    // train the gate MLP to reproduce mu-dependent channel scaling
    const std::size_t c = 4;
    rng r(602);
    af_params<double> af = detail::make_af<double>(c, r);
    tensor<double> f = random_tensor({1, c, 2, 2}, r, 0.4, 0.6);
    const model_config cfg;

    std::vector<tensor<double>*> params = {&af.w1, &af.b1, &af.w2, &af.b2};
    std::vector<adam_state<double>> opt;
    for (auto* p : params) opt.emplace_back(p->shape);
    adam_config acfg;
    acfg.lr = 5e-2;

    for (int step = 0; step < 120; ++step) {
        const snr_db mu = step % 2 == 0 ? snr_db{-3.0} : snr_db{14.0};
        const double target_gate = step % 2 == 0 ? 0.2 : 0.9;
        tape<double> t;
        bound_model<double> bm;
        for (auto* p : params) {
            bm.ordered.push_back(t.leaf(*p));
            bm.param_ptrs.push_back(p);
            bm.names.push_back("");
        }
        var out = af_modulate(t, af, bm, t.leaf(f), {mu}, cfg);
        tensor<double> target = f;
        for (auto& v : target.data) v *= target_gate;
        t.backward(mse(t, out, t.leaf(target)));
        for (std::size_t i = 0; i < params.size(); ++i)
            adam_step(*params[i], t.adjoint(bm.ordered[i]), opt[i], acfg);
    }

    auto gates_at = [&](snr_db mu) {
        tape<double> t;
        bound_model<double> bm;
        for (auto* p : params) {
            bm.ordered.push_back(t.leaf(*p));
            bm.param_ptrs.push_back(p);
            bm.names.push_back("");
        }
        var out = af_modulate(t, af, bm, t.leaf(f), {mu}, cfg);
        return t.value(out).data[0] / f.data[0];
    };
    const double low = gates_at(snr_db{-3.0});
    const double high = gates_at(snr_db{14.0});
    CAPTURE(low, high);
    REQUIRE(std::abs(high - low) > 0.2);
}

TEST_CASE("encoder output is power normalized per sample") {
    const model_config cfg = tiny_config();
    rng r(603);
    model<double> m = make_model<double>(cfg, r);
    tensor<double> imgs = random_image({3, 3, 16, 16}, 604);
    tape<double> t;
    bound_model<double> bm = bind_model(t, m);
    var rows = encode_to_rows(t, m.enc_x, bm, t.leaf(imgs),
                              {snr_db{0.0}, snr_db{5.0}, snr_db::make_noiseless()}, cfg);
    const auto& v = t.value(rows);
    const double k = static_cast<double>(cfg.symbols_per_image());
    for (std::size_t row = 0; row < 3; ++row) {
        double ss = 0;
        for (std::size_t j = 0; j < v.shape[1]; ++j) ss += v.at2(row, j) * v.at2(row, j);
        REQUIRE(rel_err(ss, k) < 1e-6);
    }
    REQUIRE(v.shape == shape_t{3, 2 * cfg.symbols_per_image()});
}

TEST_CASE("jsce_encode emits k complex symbols and never reads the partner") {
    model_config cfg = tiny_config();
    rng r(605);
    model<double> m = make_model<double>(cfg, r);
    const tensor<double> img = random_image({3, 16, 16}, 606);
    auto s1 = jsce_encode(m, stream_id::x, img, snr_db{3.0});
    REQUIRE(s1.k() == cfg.symbols_per_image());
    REQUIRE(rel_err(s1.sq_norm(), static_cast<double>(s1.k())) < 1e-6);

    // perturbing the y-side parameters or image cannot change s_x
    for (auto& v : m.enc_y.blocks[0].kernels.data) v += 0.5;
    auto s2 = jsce_encode(m, stream_id::x, img, snr_db{3.0});
    REQUIRE(s1.symbols == s2.symbols);

    REQUIRE_THROWS_AS(jsce_encode(m, stream_id::x, random_image({3, 8, 16}, 607), snr_db{3.0}),
                      std::invalid_argument);
}

TEST_CASE("decoder output shapes and range") {
    const model_config cfg = tiny_config();
    rng r(608);
    model<double> m = make_model<double>(cfg, r);
    const tensor<double> ix = random_image({3, 16, 16}, 609);
    const tensor<double> iy = random_image({3, 16, 16}, 610);
    auto sx = jsce_encode(m, stream_id::x, ix, snr_db{1.0});
    auto sy = jsce_encode(m, stream_id::y, iy, snr_db{7.0});
    auto [xhat, yhat] = jscd_decode(m, sx, sy, snr_db{1.0}, snr_db{7.0});
    REQUIRE(xhat.shape == ix.shape);
    REQUIRE(yhat.shape == iy.shape);
    for (double v : xhat.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("argument-swap symmetry of the shared decoder") {
    const model_config cfg = tiny_config();
    rng r(611);
    model<double> m = make_model<double>(cfg, r);
    const tensor<double> ix = random_image({3, 16, 16}, 612);
    const tensor<double> iy = random_image({3, 16, 16}, 613);
    auto sx = jsce_encode(m, stream_id::x, ix, snr_db{2.0});
    auto sy = jsce_encode(m, stream_id::y, iy, snr_db{9.0});

    auto [a1, b1] = jscd_decode(m, sx, sy, snr_db{2.0}, snr_db{9.0});
    auto [a2, b2] = jscd_decode(m, sy, sx, snr_db{9.0}, snr_db{2.0});
    REQUIRE(a1.data == b2.data);  // bitwise, forced by the single shared decoder
    REQUIRE(b1.data == a2.data);
}

TEST_CASE("decoder rejects incompatible signal shapes") {
    const model_config cfg = tiny_config();
    rng r(622);
    model<double> m = make_model<double>(cfg, r);
    tape<double> t;
    bound_model<double> bm = bind_model(t, m);
    const std::size_t d = 2 * cfg.symbols_per_image();
    var good = t.leaf(tensor<double>({2, d}));
    var bad = t.leaf(tensor<double>({2, d + 2}));
    const std::vector<snr_db> mus(2, snr_db{1.0});
    REQUIRE_THROWS_AS(decode_images(t, m.dec, bm, good, bad, mus, mus, cfg), std::invalid_argument);
    REQUIRE_THROWS_AS(decode_images(t, m.dec, bm, good, good, {snr_db{1.0}}, mus, cfg),
                      std::invalid_argument);
}

TEST_CASE("asymmetric side information path works with the noiseless token") {
    const model_config cfg = tiny_config();
    rng r(614);
    model<double> m = make_model<double>(cfg, r);
    const tensor<double> ix = random_image({3, 16, 16}, 615);
    const tensor<double> iy = random_image({3, 16, 16}, 616);
    auto sx = jsce_encode(m, stream_id::x, ix, snr_db{1.0});
    auto sy = jsce_encode(m, stream_id::y, iy, snr_db::make_noiseless());
    auto [xhat, yhat] = jscd_decode(m, sx, sy, snr_db{1.0}, snr_db::make_noiseless());
    REQUIRE(xhat.all_finite());
    REQUIRE(yhat.all_finite());
}

TEST_CASE("bind_model order matches for_each_param order") {
    const model_config cfg = tiny_config();
    rng r(617);
    model<double> m = make_model<double>(cfg, r);
    tape<double> t;
    bound_model<double> bm = bind_model(t, m);
    std::size_t i = 0;
    for_each_param(m, [&](const std::string& name, tensor<double>& p) {
        REQUIRE(i < bm.param_ptrs.size());
        REQUIRE(bm.param_ptrs[i] == &p);
        REQUIRE(bm.names[i] == name);
        REQUIRE(t.value(bm.ordered[i]).data == p.data);
        ++i;
    });
    REQUIRE(i == bm.param_ptrs.size());

    // names are unique
    std::set<std::string> names(bm.names.begin(), bm.names.end());
    REQUIRE(names.size() == bm.names.size());
}

TEST_CASE("end-to-end gradients match finite differences on a tiny config") {
    model_config cfg = tiny_config();
    rng r(618);
    model<double> m = make_model<double>(cfg, r);
    const tensor<double> ix4({1, 3, 16, 16}, random_image({3, 16, 16}, 619).data);
    const tensor<double> iy4({1, 3, 16, 16}, random_image({3, 16, 16}, 620).data);
    const std::vector<snr_db> mu_x = {snr_db{1.0}};
    const std::vector<snr_db> mu_y = {snr_db{8.0}};

    // noise fixed by seed; enters additively so gradients pass through
    rng nr(621);
    const std::size_t k = cfg.symbols_per_image();
    tensor<double> noise_x({1, 2 * k});
    tensor<double> noise_y({1, 2 * k});
    {
        auto rx = effective_noise_rows<double>(channel_kind::awgn, snr_to_noise_variance(mu_x[0], 1.0), k, nr);
        auto ry = effective_noise_rows<double>(channel_kind::awgn, snr_to_noise_variance(mu_y[0], 1.0), k, nr);
        std::copy(rx.begin(), rx.end(), noise_x.data.begin());
        std::copy(ry.begin(), ry.end(), noise_y.data.begin());
    }

    auto build = [&](tape<double>& t, bound_model<double>& bm) {
        var vx = t.leaf(ix4);
        var vy = t.leaf(iy4);
        var sx = encode_to_rows(t, m.enc_x, bm, vx, mu_x, cfg);
        var sy = encode_to_rows(t, m.enc_y, bm, vy, mu_y, cfg);
        var rx = add(t, sx, t.leaf(noise_x));
        var ry = add(t, sy, t.leaf(noise_y));
        auto [xh, yh] = decode_images(t, m.dec, bm, rx, ry, mu_x, mu_y, cfg);
        return add(t, mse(t, vx, xh), mse(t, vy, yh));
    };
    auto eval = [&]() {
        tape<double> t;
        bound_model<double> bm = bind_model(t, m);
        return t.value(build(t, bm)).data[0];
    };

    tape<double> t;
    bound_model<double> bm = bind_model(t, m);
    t.backward(build(t, bm));

    for (std::size_t i = 0; i < bm.param_ptrs.size(); ++i) {
        CAPTURE(bm.names[i]);
        // subsample elements per tensor; every parameter tensor is covered
        const double err = max_grad_err(*bm.param_ptrs[i], t.adjoint(bm.ordered[i]), eval,
                                        /*max_checks=*/4, /*h=*/1e-6);
        REQUIRE(err < 1e-3);
    }
}
