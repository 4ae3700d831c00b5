// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "djscc/rng.hpp"
#include "djscc/tensor.hpp"

namespace djscc {

/// Two correlated camera views plus the knobs that produced them.
template <typename Real>
struct stereo_pair {
    tensor<Real> x;  // [3,H,W] in [0,1]
    tensor<Real> y;
    std::uint64_t id = 0;
    double overlap = 1.0;  // nominal shared-column fraction (synthetic only)
};

struct jitter_config {
    double contrast = 0.0;    // per-view contrast factor in [1-c, 1+c]
    double brightness = 0.0;  // per-view offset in [-b, b]
    double pixel_noise = 0.0; // i.i.d. gaussian sigma per pixel
};

// ---------------------------------------------------------------------------
// portable pixel map (binary P6, 8-bit) — the lossless fixture format

struct image_u8 {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

inline void write_ppm(const std::filesystem::path& path, const image_u8& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path.string());
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw std::runtime_error("write_ppm: short write to " + path.string());
}

inline image_u8 read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path.string());
    auto next_token = [&]() {
        std::string tok;
        while (f) {
            f >> tok;
            if (!tok.empty() && tok[0] == '#') {
                std::string rest;
                std::getline(f, rest);
                continue;
            }
            return tok;
        }
        throw std::runtime_error("read_ppm: truncated header in " + path.string());
    };
    if (next_token() != "P6") throw std::runtime_error("read_ppm: " + path.string() + " is not a binary PPM");
    image_u8 img;
    img.w = std::stoul(next_token());
    img.h = std::stoul(next_token());
    const unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
    if (maxval != 255) throw std::runtime_error("read_ppm: " + path.string() + " has unsupported maxval");
    f.get();  // single whitespace after maxval
    img.rgb.resize(img.h * img.w * 3);
    f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
    return img;
}

template <typename Real>
tensor<Real> image_to_tensor(const image_u8& img) {
    tensor<Real> t({3, img.h, img.w});
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t.at3(c, y, x) = static_cast<Real>(img.rgb[(y * img.w + x) * 3 + c]) / Real(255);
    return t;
}

template <typename Real>
image_u8 tensor_to_image(const tensor<Real>& t) {
    if (t.rank() != 3 || t.shape[0] != 3)
        throw std::invalid_argument("tensor_to_image: need [3,H,W], got " + shape_str(t.shape));
    image_u8 img;
    img.h = t.shape[1];
    img.w = t.shape[2];
    img.rgb.resize(img.h * img.w * 3);
    for (std::size_t y = 0; y < img.h; ++y)
        for (std::size_t x = 0; x < img.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(static_cast<double>(t.at3(c, y, x)), 0.0, 1.0);
                img.rgb[(y * img.w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

// ---------------------------------------------------------------------------
// synthetic stereo generator

namespace detail {

/// Multi-octave value noise plus a few geometric primitives, rendered on a
/// canvas in double precision; deterministic in the rng state.
inline std::vector<double> render_canvas(std::size_t h, std::size_t w, rng& r) {
    std::vector<double> canvas(3 * h * w, 0.0);
    // value-noise octaves, coarse to fine
    const std::size_t cells[3] = {16, 8, 4};
    const double amps[3] = {0.55, 0.3, 0.15};
    for (std::size_t o = 0; o < 3; ++o) {
        const std::size_t cell = cells[o];
        const std::size_t gh = h / cell + 2, gw = w / cell + 2;
        std::vector<double> grid(3 * gh * gw);
        for (auto& g : grid) g = r.uniform();
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double fy = static_cast<double>(y) / cell;
                    const double fx = static_cast<double>(x) / cell;
                    const std::size_t y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
                    const double ty = fy - y0, tx = fx - x0;
                    const double* g = grid.data() + c * gh * gw;
                    const double v00 = g[y0 * gw + x0], v01 = g[y0 * gw + x0 + 1];
                    const double v10 = g[(y0 + 1) * gw + x0], v11 = g[(y0 + 1) * gw + x0 + 1];
                    canvas[(c * h + y) * w + x] +=
                        amps[o] * ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
                }
    }
    // a handful of solid primitives for hard edges
    const std::size_t n_prims = 4 + static_cast<std::size_t>(r.uniform() * 4.0);
    for (std::size_t i = 0; i < n_prims; ++i) {
        const bool circle = r.uniform() < 0.5;
        const double cx = r.uniform() * w, cy = r.uniform() * h;
        const double rx = (0.05 + 0.2 * r.uniform()) * w;
        const double ry = (0.1 + 0.3 * r.uniform()) * h;
        double color[3] = {r.uniform(), r.uniform(), r.uniform()};
        const double alpha = 0.5 + 0.4 * r.uniform();
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                bool inside;
                if (circle) {
                    const double dx = (x - cx) / rx, dy = (y - cy) / rx;
                    inside = dx * dx + dy * dy <= 1.0;
                } else {
                    inside = std::abs(x - cx) <= rx && std::abs(y - cy) <= ry;
                }
                if (inside)
                    for (std::size_t c = 0; c < 3; ++c) {
                        double& v = canvas[(c * h + y) * w + x];
                        v = (1 - alpha) * v + alpha * color[c];
                    }
            }
    }
    for (auto& v : canvas) v = std::clamp(v, 0.0, 1.0);
    return canvas;
}

inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Render one procedural scene on a canvas wider than the view, then crop
/// two views whose horizontal offset realizes the requested overlap
/// fraction. Photometric jitter and pixel noise are applied independently
/// per view afterwards; output pixels are quantized to 8-bit levels so PPM
/// fixtures round-trip exactly. Deterministic in (seed, overlap, H, W).
template <typename Real>
stereo_pair<Real> generate_pair(std::uint64_t seed, double overlap, std::size_t h, std::size_t w,
                                const jitter_config& jit = {}) {
    if (!(overlap >= 0.0 && overlap <= 1.0))
        throw std::invalid_argument("generate_pair: overlap must be in [0,1], got " + std::to_string(overlap));
    rng r(derive_seed(seed, 0x5ce9e0));
    const std::size_t shift = static_cast<std::size_t>(std::lround((1.0 - overlap) * static_cast<double>(w)));
    const std::size_t cw = w + shift;
    const std::vector<double> canvas = detail::render_canvas(h, cw, r);

    stereo_pair<Real> pair;
    pair.id = seed;
    pair.overlap = overlap;
    auto crop_view = [&](std::size_t x0) {
        tensor<Real> view({3, h, w});
        // per-view photometric jitter, drawn before the pixel loop
        const double a = 1.0 + jit.contrast * (2.0 * r.uniform() - 1.0);
        const double b = jit.brightness * (2.0 * r.uniform() - 1.0);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    double v = canvas[(c * h + y) * cw + (x + x0)];
                    v = a * (v - 0.5) + 0.5 + b;
                    if (jit.pixel_noise > 0) v += jit.pixel_noise * r.gaussian();
                    view.at3(c, y, x) = static_cast<Real>(detail::quantize8(v)) / Real(255);
                }
        return view;
    };
    pair.x = crop_view(0);
    pair.y = crop_view(shift);
    return pair;
}

// ---------------------------------------------------------------------------
// directory ingestion

template <typename Real>
struct load_result {
    std::vector<stereo_pair<Real>> pairs;
    std::size_t warnings = 0;  // unpairable files skipped
};

/// Load *_left/*_right PPM pairs from a directory (or from left/ and right/
/// subdirectories with matching names). Pairs are ordered by stem;
/// unpairable files are counted and skipped, undecodable ones throw.
template <typename Real>
load_result<Real> load_pairs(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("load_pairs: not a directory: " + dir.string());
    load_result<Real> out;
    std::map<std::string, std::pair<fs::path, fs::path>> stems;

    auto note = [&](const std::string& stem, const fs::path& p, bool left) {
        auto& slot = stems[stem];
        (left ? slot.first : slot.second) = p;
    };

    if (fs::is_directory(dir / "left") && fs::is_directory(dir / "right")) {
        for (const auto& e : fs::directory_iterator(dir / "left"))
            if (e.is_regular_file()) note(e.path().stem().string(), e.path(), true);
        for (const auto& e : fs::directory_iterator(dir / "right"))
            if (e.is_regular_file()) note(e.path().stem().string(), e.path(), false);
    } else {
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            const std::string stem = e.path().stem().string();
            if (stem.size() > 5 && stem.ends_with("_left"))
                note(stem.substr(0, stem.size() - 5), e.path(), true);
            else if (stem.size() > 6 && stem.ends_with("_right"))
                note(stem.substr(0, stem.size() - 6), e.path(), false);
            else
                ++out.warnings;
        }
    }

    std::uint64_t id = 0;
    for (const auto& [stem, files] : stems) {
        if (files.first.empty() || files.second.empty()) {
            ++out.warnings;
            continue;
        }
        stereo_pair<Real> p;
        p.x = image_to_tensor<Real>(read_ppm(files.first));
        p.y = image_to_tensor<Real>(read_ppm(files.second));
        require_same_shape(p.x, p.y, "load_pairs");
        p.id = id++;
        out.pairs.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------------
// preprocessing

/// Center-crop to the target aspect ratio (cropping the relatively longer
/// axis), then bilinear resize with half-pixel centers.
template <typename Real>
tensor<Real> center_crop_resize(const tensor<Real>& img, std::size_t th = 128, std::size_t tw = 256) {
    if (img.rank() != 3) throw std::invalid_argument("center_crop_resize: need [C,H,W], got " + shape_str(img.shape));
    const std::size_t c = img.shape[0], h = img.shape[1], w = img.shape[2];

    // crop box with the target aspect
    std::size_t ch = h, cw = w, y0 = 0, x0 = 0;
    if (w * th > h * tw) {
        cw = std::max<std::size_t>(1, h * tw / th);
        x0 = (w - cw) / 2;
    } else if (w * th < h * tw) {
        ch = std::max<std::size_t>(1, w * th / tw);
        y0 = (h - ch) / 2;
    }

    tensor<Real> out({c, th, tw});
    const double sy = static_cast<double>(ch) / static_cast<double>(th);
    const double sx = static_cast<double>(cw) / static_cast<double>(tw);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < th; ++y)
            for (std::size_t x = 0; x < tw; ++x) {
                const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
                const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                const double cy = std::clamp(fy, 0.0, static_cast<double>(ch - 1));
                const double cx = std::clamp(fx, 0.0, static_cast<double>(cw - 1));
                const std::size_t iy = static_cast<std::size_t>(cy);
                const std::size_t ix = static_cast<std::size_t>(cx);
                const std::size_t iy1 = std::min(iy + 1, ch - 1);
                const std::size_t ix1 = std::min(ix + 1, cw - 1);
                const double ty = cy - iy, tx = cx - ix;
                auto px = [&](std::size_t yy, std::size_t xx) {
                    return static_cast<double>(img.at3(ci, y0 + yy, x0 + xx));
                };
                const double v = (1 - ty) * ((1 - tx) * px(iy, ix) + tx * px(iy, ix1)) +
                                 ty * ((1 - tx) * px(iy1, ix) + tx * px(iy1, ix1));
                out.at3(ci, y, x) = static_cast<Real>(std::clamp(v, 0.0, 1.0));
            }
    return out;
}

}  // namespace djscc
