// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Step-by-step reference evaluation of the SNR-aware cross attention block
// on plain row-major matrices: token attachment, layer-normalized Q/K/V
// projections, scaled cross attention with row softmax, W_o recalibration
// with residual, layer-normalized ReLU MLP with residual, token removal.
// Written independently of the tensor/tape library; test oracle only.

#include <cmath>
#include <cstddef>
#include <vector>

namespace scam_ref {

using mat = std::vector<std::vector<double>>;  // rows x cols

inline mat matmul(const mat& a, const mat& b) {
    const std::size_t m = a.size(), p = b.size(), q = b[0].size();
    mat c(m, std::vector<double>(q, 0.0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < p; ++k)
            for (std::size_t j = 0; j < q; ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline mat transpose(const mat& a) {
    mat t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

inline mat layer_norm(const mat& a, const std::vector<double>& gain, const std::vector<double>& bias,
                      double eps = 1e-5) {
    mat out = a;
    for (auto& row : out) {
        double m = 0;
        for (double v : row) m += v;
        m /= static_cast<double>(row.size());
        double var = 0;
        for (double v : row) var += (v - m) * (v - m);
        var /= static_cast<double>(row.size());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - m) * inv * gain[j] + bias[j];
    }
    return out;
}

inline mat softmax_rows(const mat& a) {
    mat out = a;
    for (auto& row : out) {
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0;
        for (auto& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (auto& v : row) v /= sum;
    }
    return out;
}

inline mat add(const mat& a, const mat& b) {
    mat c = a;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < c[0].size(); ++j) c[i][j] += b[i][j];
    return c;
}

struct weights {
    mat w_q, w_k, w_v, w_o;       // C x C
    mat w_1;                      // C x Ch
    std::vector<double> b_1;      // Ch
    mat w_2;                      // Ch x C
    std::vector<double> b_2;      // C
    std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// One stream of the block: everything after both fused maps are known.
inline mat stream(const mat& self_bar, const mat& partner_bar, const weights& w) {
    const std::size_t c = self_bar[0].size();
    const mat q = matmul(layer_norm(self_bar, w.ln1_gain, w.ln1_bias), w.w_q);
    const mat k = matmul(layer_norm(partner_bar, w.ln1_gain, w.ln1_bias), w.w_k);
    const mat v = matmul(layer_norm(partner_bar, w.ln1_gain, w.ln1_bias), w.w_v);

    mat scores = matmul(q, transpose(k));
    for (auto& row : scores)
        for (auto& s : row) s /= std::sqrt(static_cast<double>(c));
    const mat attn = softmax_rows(scores);
    const mat h1 = add(self_bar, matmul(matmul(attn, v), w.w_o));

    mat hidden = matmul(layer_norm(h1, w.ln2_gain, w.ln2_bias), w.w_1);
    for (std::size_t i = 0; i < hidden.size(); ++i)
        for (std::size_t j = 0; j < hidden[0].size(); ++j)
            hidden[i][j] = std::max(hidden[i][j] + w.b_1[j], 0.0);
    mat out = matmul(hidden, w.w_2);
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < out[0].size(); ++j) out[i][j] += w.b_2[j];
    return add(h1, out);
}

/// Full block on two feature maps (rows are spatial vectors) with their
/// selected tokens; returns the recalibrated maps with tokens removed.
inline std::pair<mat, mat> evaluate(const mat& fx, const mat& fy, const std::vector<double>& token_x,
                                    const std::vector<double>& token_y, const weights& w) {
    mat fx_bar{token_x};
    fx_bar.insert(fx_bar.end(), fx.begin(), fx.end());
    mat fy_bar{token_y};
    fy_bar.insert(fy_bar.end(), fy.begin(), fy.end());

    const mat hx = stream(fx_bar, fy_bar, w);
    const mat hy = stream(fy_bar, fx_bar, w);
    return {mat(hx.begin() + 1, hx.end()), mat(hy.begin() + 1, hy.end())};
}

}  // namespace scam_ref
