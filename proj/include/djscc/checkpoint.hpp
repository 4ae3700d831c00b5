// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "djscc/adam.hpp"
#include "djscc/model.hpp"
#include "djscc/tensor.hpp"

// Versioned binary checkpoint container. All integers and floats are
// little-endian; parameter tensors are 32-bit floats with length-prefixed
// names and shapes. save -> load -> save is byte-identical.
//
// layout:
//   "DJCK" | u32 version
//   u64 config_len | model-config text
//   u32 n_params | { u32 name_len | name | u32 rank | u64 extents[] | f32 data[] }*
//   u8 has_optimizer | [ u64 adam_step | { f32 m[] | f32 v[] }* ]   (same order/shapes)
//   u64 iteration
//   u32 n_rng | { u32 name_len | name | u64 state_len | state }*

namespace djscc {

class checkpoint_error : public std::runtime_error {
  public:
    enum class kind { io, bad_magic, bad_version, truncated, config_mismatch };

    checkpoint_error(kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
    kind which() const { return kind_; }

  private:
    kind kind_;
};

struct checkpoint_data {
    static constexpr std::uint32_t version = 1;

    model_config config;
    std::vector<std::pair<std::string, tensor<float>>> params;
    bool has_optimizer = false;
    std::uint64_t adam_step = 0;
    std::vector<std::pair<tensor<float>, tensor<float>>> moments;  // (m, v) per param
    std::uint64_t iteration = 0;
    std::vector<std::pair<std::string, std::string>> rng_states;
};

namespace detail {

class byte_writer {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void* p, std::size_t n) {
        buf_.append(static_cast<const char*>(p), n);
    }
    const std::string& str() const { return buf_; }

  private:
    std::string buf_;
};

class byte_reader {
  public:
    explicit byte_reader(std::string data) : data_(std::move(data)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const char* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string string(std::size_t n) { return std::string(take(n), n); }
    bool at_end() const { return pos_ == data_.size(); }

  private:
    const char* take(std::size_t n) {
        if (pos_ + n > data_.size())
            throw checkpoint_error(checkpoint_error::kind::truncated,
                                   "checkpoint: truncated file (wanted " + std::to_string(n) +
                                       " bytes at offset " + std::to_string(pos_) + ")");
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::string data_;
    std::size_t pos_ = 0;
};

inline void write_f32_tensor(byte_writer& w, const tensor<float>& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) w.u64(e);
    for (float v : t.data) w.f32(v);
}

inline tensor<float> read_f32_tensor(byte_reader& r) {
    const std::uint32_t rank = r.u32();
    shape_t shape(rank);
    for (auto& e : shape) e = r.u64();
    tensor<float> t(shape);
    for (auto& v : t.data) v = r.f32();
    return t;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const checkpoint_data& ck) {
    detail::byte_writer w;
    w.bytes("DJCK", 4);
    w.u32(checkpoint_data::version);
    const std::string cfg = ck.config.serialize();
    w.u64(cfg.size());
    w.bytes(cfg.data(), cfg.size());
    w.u32(static_cast<std::uint32_t>(ck.params.size()));
    for (const auto& [name, t] : ck.params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        detail::write_f32_tensor(w, t);
    }
    w.u8(ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        if (ck.moments.size() != ck.params.size())
            throw std::logic_error("checkpoint: optimizer moments do not match parameters");
        w.u64(ck.adam_step);
        for (const auto& [m, v] : ck.moments) {
            detail::write_f32_tensor(w, m);
            detail::write_f32_tensor(w, v);
        }
    }
    w.u64(ck.iteration);
    w.u32(static_cast<std::uint32_t>(ck.rng_states.size()));
    for (const auto& [name, state] : ck.rng_states) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u64(state.size());
        w.bytes(state.data(), state.size());
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: cannot open " + path.string());
    f.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!f) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: short write to " + path.string());
}

inline checkpoint_data read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw checkpoint_error(checkpoint_error::kind::io, "checkpoint: cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    detail::byte_reader r(std::move(data));

    if (r.string(4) != "DJCK")
        throw checkpoint_error(checkpoint_error::kind::bad_magic, "checkpoint: " + path.string() + " is not a checkpoint file");
    const std::uint32_t ver = r.u32();
    if (ver != checkpoint_data::version)
        throw checkpoint_error(checkpoint_error::kind::bad_version,
                               "checkpoint: unsupported version " + std::to_string(ver) + " (expected " +
                                   std::to_string(checkpoint_data::version) + ")");
    checkpoint_data ck;
    const std::uint64_t cfg_len = r.u64();
    ck.config = model_config::deserialize(r.string(cfg_len));
    const std::uint32_t np = r.u32();
    for (std::uint32_t i = 0; i < np; ++i) {
        const std::uint32_t nl = r.u32();
        std::string name = r.string(nl);
        ck.params.emplace_back(std::move(name), detail::read_f32_tensor(r));
    }
    ck.has_optimizer = r.u8() != 0;
    if (ck.has_optimizer) {
        ck.adam_step = r.u64();
        for (std::uint32_t i = 0; i < np; ++i) {
            tensor<float> m = detail::read_f32_tensor(r);
            tensor<float> v = detail::read_f32_tensor(r);
            ck.moments.emplace_back(std::move(m), std::move(v));
        }
    }
    ck.iteration = r.u64();
    const std::uint32_t nr = r.u32();
    for (std::uint32_t i = 0; i < nr; ++i) {
        const std::uint32_t nl = r.u32();
        std::string name = r.string(nl);
        const std::uint64_t sl = r.u64();
        ck.rng_states.emplace_back(std::move(name), r.string(sl));
    }
    if (!r.at_end())
        throw checkpoint_error(checkpoint_error::kind::truncated,
                               "checkpoint: trailing bytes in " + path.string());
    return ck;
}

/// Capture model parameters (cast to f32) in canonical order.
template <typename Real>
checkpoint_data snapshot_model(model<Real>& m) {
    checkpoint_data ck;
    ck.config = m.config;
    for_each_param(m, [&](const std::string& name, tensor<Real>& t) {
        ck.params.emplace_back(name, tensor_cast<float>(t));
    });
    return ck;
}

/// Load parameters into an existing model; the stored config must equal the
/// model's (the checkpoint is rejected otherwise).
template <typename Real>
void restore_model(model<Real>& m, const checkpoint_data& ck) {
    if (!(m.config == ck.config))
        throw checkpoint_error(checkpoint_error::kind::config_mismatch,
                               "checkpoint: stored model config does not match the target model");
    std::size_t i = 0;
    for_each_param(m, [&](const std::string& name, tensor<Real>& t) {
        if (i >= ck.params.size() || ck.params[i].first != name)
            throw checkpoint_error(checkpoint_error::kind::config_mismatch,
                                   "checkpoint: parameter list mismatch at '" + name + "'");
        const tensor<float>& src = ck.params[i].second;
        if (src.shape != t.shape)
            throw checkpoint_error(checkpoint_error::kind::config_mismatch,
                                   "checkpoint: shape mismatch for '" + name + "': stored " +
                                       shape_str(src.shape) + ", expected " + shape_str(t.shape));
        t = tensor_cast<Real>(src);
        ++i;
    });
    if (i != ck.params.size())
        throw checkpoint_error(checkpoint_error::kind::config_mismatch,
                               "checkpoint: extra stored parameters beyond the model's");
}

/// Build a model directly from a checkpoint's config echo and parameters.
template <typename Real>
model<Real> model_from_checkpoint(const checkpoint_data& ck) {
    rng scratch(0);
    model<Real> m = make_model<Real>(ck.config, scratch);
    restore_model(m, ck);
    return m;
}

}  // namespace djscc
