// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "djscc/autodiff.hpp"
#include "djscc/tensor.hpp"

// Taped tensor operations. Every op validates shapes, computes the forward
// value and records a closure that accumulates input adjoints from the
// output adjoint. Kernels iterate in a fixed order and parallel loops only
// ever write disjoint outputs, so forward+backward is bitwise deterministic
// for a given input regardless of thread count.

namespace djscc {
namespace detail {

template <typename Real>
void matmul_accum(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t p,
                  std::int64_t q) {
    // c[m,q] += a[m,p] * b[p,q]
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        Real* crow = c + i * q;
        const Real* arow = a + i * p;
        for (std::int64_t k = 0; k < p; ++k) {
            const Real av = arow[k];
            const Real* brow = b + k * q;
            for (std::int64_t j = 0; j < q; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
void matmul_bt_accum(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t p,
                     std::int64_t q) {
    // c[m,q] += a[m,p] * b[q,p]^T  (rows of b are dotted with rows of a)
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
        const Real* arow = a + i * p;
        Real* crow = c + i * q;
        for (std::int64_t j = 0; j < q; ++j) {
            const Real* brow = b + j * p;
            Real acc = 0;
#pragma omp simd reduction(+ : acc)
            for (std::int64_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

template <typename Real>
void matmul_at_accum(const Real* a, const Real* g, Real* gb, std::int64_t m, std::int64_t p,
                     std::int64_t q) {
    // gb[p,q] += a[m,p]^T * g[m,q]
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < p; ++k) {
        Real* gbrow = gb + k * q;
        for (std::int64_t i = 0; i < m; ++i) {
            const Real av = a[i * p + k];
            const Real* grow = g + i * q;
            for (std::int64_t j = 0; j < q; ++j) gbrow[j] += av * grow[j];
        }
    }
}

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                                    std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// out[n,co,ho,wo] += sum_{ci,kh,kw} in[n,ci,ho*s+kh-p, wo*s+kw-p] * k[co,ci,kh,kw]
template <typename Real>
void conv2d_accum(const Real* in, const Real* ker, Real* out, std::int64_t n, std::int64_t ci,
                  std::int64_t h, std::int64_t w, std::int64_t co, std::int64_t k, std::int64_t s,
                  std::int64_t p) {
    const std::int64_t ho = conv_out_extent(h, k, s, p);
    const std::int64_t wo = conv_out_extent(w, k, s, p);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
            Real* oplane = out + (b * co + oc) * ho * wo;
            for (std::int64_t ic = 0; ic < ci; ++ic) {
                const Real* iplane = in + (b * ci + ic) * h * w;
                const Real* kplane = ker + (oc * ci + ic) * k * k;
                for (std::int64_t kh = 0; kh < k; ++kh) {
                    for (std::int64_t kw = 0; kw < k; ++kw) {
                        const Real kv = kplane[kh * k + kw];
                        if (kv == Real(0)) continue;
                        // valid output column range for this tap
                        std::int64_t x0 = (p - kw + s - 1) / s;
                        if (x0 < 0) x0 = 0;
                        std::int64_t x1 = (w - 1 - kw + p) / s + 1;
                        if (x1 > wo) x1 = wo;
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * s + kh - p;
                            if (iy < 0 || iy >= h) continue;
                            const Real* irow = iplane + iy * w + (kw - p);
                            Real* orow = oplane + oy * wo;
                            for (std::int64_t ox = x0; ox < x1; ++ox)
                                orow[ox] += kv * irow[ox * s];
                        }
                    }
                }
            }
        }
    }
}

// gin[n,ci,hi,wi] += sum gout[n,co,ho,wo] * k[co,ci,kh,kw]  with hi=ho*s+kh-p
// (this is both the conv2d input gradient and the conv2d_transpose forward)
template <typename Real>
void conv2d_input_grad_accum(const Real* gout, const Real* ker, Real* gin, std::int64_t n,
                             std::int64_t ci, std::int64_t h, std::int64_t w, std::int64_t co,
                             std::int64_t k, std::int64_t s, std::int64_t p) {
    const std::int64_t ho = conv_out_extent(h, k, s, p);
    const std::int64_t wo = conv_out_extent(w, k, s, p);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ic = 0; ic < ci; ++ic) {
            Real* gplane = gin + (b * ci + ic) * h * w;
            for (std::int64_t oc = 0; oc < co; ++oc) {
                const Real* oplane = gout + (b * co + oc) * ho * wo;
                const Real* kplane = ker + (oc * ci + ic) * k * k;
                for (std::int64_t kh = 0; kh < k; ++kh) {
                    for (std::int64_t kw = 0; kw < k; ++kw) {
                        const Real kv = kplane[kh * k + kw];
                        if (kv == Real(0)) continue;
                        std::int64_t x0 = (p - kw + s - 1) / s;
                        if (x0 < 0) x0 = 0;
                        std::int64_t x1 = (w - 1 - kw + p) / s + 1;
                        if (x1 > wo) x1 = wo;
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * s + kh - p;
                            if (iy < 0 || iy >= h) continue;
                            Real* grow = gplane + iy * w + (kw - p);
                            const Real* orow = oplane + oy * wo;
                            for (std::int64_t ox = x0; ox < x1; ++ox)
                                grow[ox * s] += kv * orow[ox];
                        }
                    }
                }
            }
        }
    }
}

// gk[cg,cx,kh,kw] += sum_{n,ho,wo} g[n,cg,ho,wo] * x[n,cx,ho*s+kh-p, wo*s+kw-p]
template <typename Real>
void conv2d_kernel_grad_accum(const Real* x, const Real* g, Real* gk, std::int64_t n,
                              std::int64_t cx, std::int64_t h, std::int64_t w, std::int64_t cg,
                              std::int64_t k, std::int64_t s, std::int64_t p) {
    const std::int64_t ho = conv_out_extent(h, k, s, p);
    const std::int64_t wo = conv_out_extent(w, k, s, p);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t gc = 0; gc < cg; ++gc) {
        for (std::int64_t xc = 0; xc < cx; ++xc) {
            Real* kplane = gk + (gc * cx + xc) * k * k;
            for (std::int64_t kh = 0; kh < k; ++kh) {
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    std::int64_t x0 = (p - kw + s - 1) / s;
                    if (x0 < 0) x0 = 0;
                    std::int64_t x1 = (w - 1 - kw + p) / s + 1;
                    if (x1 > wo) x1 = wo;
                    Real acc = 0;
                    for (std::int64_t b = 0; b < n; ++b) {
                        const Real* xplane = x + (b * cx + xc) * h * w;
                        const Real* gplane = g + (b * cg + gc) * ho * wo;
                        for (std::int64_t oy = 0; oy < ho; ++oy) {
                            const std::int64_t iy = oy * s + kh - p;
                            if (iy < 0 || iy >= h) continue;
                            const Real* xrow = xplane + iy * w + (kw - p);
                            const Real* grow = gplane + oy * wo;
                            Real row_acc = 0;
#pragma omp simd reduction(+ : row_acc)
                            for (std::int64_t ox = x0; ox < x1; ++ox)
                                row_acc += grow[ox] * xrow[ox * s];
                            acc += row_acc;
                        }
                    }
                    kplane[kh * k + kw] += acc;
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pointwise

template <typename Real>
var relu(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > Real(0) ? x.data[i] : Real(0);
    var out = t.make_node(std::move(y));
    t.push_backward([a, out](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        // subgradient at 0 is taken as 0
        for (std::size_t i = 0; i < x.numel(); ++i)
            if (x.data[i] > Real(0)) ga.data[i] += g.data[i];
    });
    return out;
}

template <typename Real>
var sigmoid(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i)
        y.data[i] = Real(1) / (Real(1) + std::exp(-x.data[i]));
    var out = t.make_node(std::move(y));
    t.push_backward([a, out](tape<Real>& t) {
        const auto& y = t.value(out);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < y.numel(); ++i)
            ga.data[i] += g.data[i] * y.data[i] * (Real(1) - y.data[i]);
    });
    return out;
}

template <typename Real>
var scale(tape<Real>& t, var a, Real c) {
    const auto& x = t.value(a);
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = c * x.data[i];
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, c](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += c * g.data[i];
    });
    return out;
}

template <typename Real>
var add_const(tape<Real>& t, var a, Real c) {
    const auto& x = t.value(a);
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] + c;
    var out = t.make_node(std::move(y));
    t.push_backward([a, out](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
    return out;
}

/// Elementwise x^p for constant p. Gradient is defined as 0 where x <= 0
/// (callers feed non-negative inputs; the kink at exactly 0 is measure-zero).
template <typename Real>
var pow_const(tape<Real>& t, var a, Real p) {
    const auto& x = t.value(a);
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = std::pow(x.data[i], p);
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, p](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < x.numel(); ++i)
            if (x.data[i] > Real(0)) ga.data[i] += g.data[i] * p * std::pow(x.data[i], p - Real(1));
    });
    return out;
}

// ---------------------------------------------------------------------------
// elementwise binary (matching shapes)

template <typename Real>
var add(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    require_same_shape(x, y, "add");
    tensor<Real> z(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) z.data[i] = x.data[i] + y.data[i];
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
    });
    return out;
}

template <typename Real>
var sub(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    require_same_shape(x, y, "sub");
    tensor<Real> z(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) z.data[i] = x.data[i] - y.data[i];
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] -= g.data[i];
    });
    return out;
}

template <typename Real>
var mul(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    require_same_shape(x, y, "mul");
    tensor<Real> z(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) z.data[i] = x.data[i] * y.data[i];
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] * y.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i] * x.data[i];
    });
    return out;
}

template <typename Real>
var div(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    require_same_shape(x, y, "div");
    tensor<Real> z(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) z.data[i] = x.data[i] / y.data[i];
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i] / y.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < g.numel(); ++i)
            gb.data[i] -= g.data[i] * x.data[i] / (y.data[i] * y.data[i]);
    });
    return out;
}

// ---------------------------------------------------------------------------
// reductions

template <typename Real>
var sum_all(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.data[i]);
    var out = t.make_node(tensor<Real>::scalar(static_cast<Real>(acc)));
    t.push_backward([a, out](tape<Real>& t) {
        const Real g = t.adjoint(out).data[0];
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += g;
    });
    return out;
}

template <typename Real>
var mean_all(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    const std::size_t n = x.numel();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x.data[i]);
    var out = t.make_node(tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n))));
    t.push_backward([a, out, n](tape<Real>& t) {
        const Real g = t.adjoint(out).data[0] / static_cast<Real>(n);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < ga.numel(); ++i) ga.data[i] += g;
    });
    return out;
}

/// Mean squared difference of two same-shape tensors, as one scalar node.
template <typename Real>
var mse(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    require_same_shape(x, y, "mse");
    const std::size_t n = x.numel();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(x.data[i]) - static_cast<double>(y.data[i]);
        acc += d * d;
    }
    var out = t.make_node(tensor<Real>::scalar(static_cast<Real>(acc / static_cast<double>(n))));
    t.push_backward([a, b, out, n](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        const Real g = t.adjoint(out).data[0] * Real(2) / static_cast<Real>(n);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < n; ++i) ga.data[i] += g * (x.data[i] - y.data[i]);
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < n; ++i) gb.data[i] -= g * (x.data[i] - y.data[i]);
    });
    return out;
}

/// [N,C,H,W] -> [N,C] mean over the spatial extent.
template <typename Real>
var global_avg_pool(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: need rank-4, got " + shape_str(x.shape));
    const std::size_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    tensor<Real> y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double acc = 0;
        const Real* p = x.data.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) acc += static_cast<double>(p[j]);
        y.data[i] = static_cast<Real>(acc / static_cast<double>(hw));
    }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, n, c, hw](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < n * c; ++i) {
            const Real gv = g.data[i] / static_cast<Real>(hw);
            Real* p = ga.data.data() + i * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] += gv;
        }
    });
    return out;
}

/// 2x2 average pooling with stride 2; trailing odd row/column is dropped.
template <typename Real>
var avg_pool2(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    if (x.rank() != 4) throw std::invalid_argument("avg_pool2: need rank-4, got " + shape_str(x.shape));
    const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t ho = h / 2, wo = w / 2;
    if (ho == 0 || wo == 0) throw std::invalid_argument("avg_pool2: spatial extent too small " + shape_str(x.shape));
    tensor<Real> y({n, c, ho, wo});
    for (std::size_t p = 0; p < n * c; ++p) {
        const Real* ip = x.data.data() + p * h * w;
        Real* op = y.data.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
                op[i * wo + j] = (ip[(2 * i) * w + 2 * j] + ip[(2 * i) * w + 2 * j + 1] +
                                  ip[(2 * i + 1) * w + 2 * j] + ip[(2 * i + 1) * w + 2 * j + 1]) /
                                 Real(4);
    }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, n, c, h, w, ho, wo](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t p = 0; p < n * c; ++p) {
            Real* ip = ga.data.data() + p * h * w;
            const Real* op = g.data.data() + p * ho * wo;
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const Real gv = op[i * wo + j] / Real(4);
                    ip[(2 * i) * w + 2 * j] += gv;
                    ip[(2 * i) * w + 2 * j + 1] += gv;
                    ip[(2 * i + 1) * w + 2 * j] += gv;
                    ip[(2 * i + 1) * w + 2 * j + 1] += gv;
                }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename Real>
var reshape(tape<Real>& t, var a, shape_t new_shape) {
    const auto& x = t.value(a);
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape) + " as " +
                                    shape_str(new_shape));
    tensor<Real> y(new_shape, x.data);
    var out = t.make_node(std::move(y));
    t.push_backward([a, out](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
    return out;
}

template <typename Real>
var concat(tape<Real>& t, const std::vector<var>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const auto& first = t.value(parts[0]);
    if (axis >= first.rank()) throw std::invalid_argument("concat: axis out of range");
    shape_t out_shape = first.shape;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto& s = t.value(parts[i]).shape;
        if (s.size() != first.rank())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(first.shape) + " vs " + shape_str(s));
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != first.shape[d])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(first.shape) +
                                            " vs " + shape_str(s) + " on non-concat axis");
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first.shape[d];
    for (std::size_t d = axis + 1; d < first.rank(); ++d) inner *= first.shape[d];

    tensor<Real> y(out_shape);
    const std::size_t out_axis = out_shape[axis];
    std::size_t offset = 0;
    for (var p : parts) {
        const auto& x = t.value(p);
        const std::size_t ax = x.shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(x.data.data() + o * ax * inner, ax * inner,
                        y.data.data() + (o * out_axis + offset) * inner);
        offset += ax;
    }
    var out = t.make_node(std::move(y));
    std::vector<var> parts_copy = parts;
    t.push_backward([parts_copy, out, axis, outer, inner, out_axis](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        std::size_t offset = 0;
        for (var p : parts_copy) {
            auto& gp = t.adjoint_mut(p);
            const std::size_t ax = t.value(p).shape[axis];
            for (std::size_t o = 0; o < outer; ++o) {
                const Real* src = g.data.data() + (o * out_axis + offset) * inner;
                Real* dst = gp.data.data() + o * ax * inner;
                for (std::size_t i = 0; i < ax * inner; ++i) dst[i] += src[i];
            }
            offset += ax;
        }
    });
    return out;
}

template <typename Real>
var slice(tape<Real>& t, var a, std::size_t axis, std::size_t start, std::size_t len) {
    const auto& x = t.value(a);
    if (axis >= x.rank()) throw std::invalid_argument("slice: axis out of range");
    if (start + len > x.shape[axis])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") exceeds extent " +
                                    std::to_string(x.shape[axis]));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= x.shape[d];
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape[d];
    shape_t out_shape = x.shape;
    out_shape[axis] = len;
    tensor<Real> y(out_shape);
    const std::size_t ax = x.shape[axis];
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(x.data.data() + (o * ax + start) * inner, len * inner,
                    y.data.data() + o * len * inner);
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, axis, start, len, outer, inner, ax](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t o = 0; o < outer; ++o) {
            const Real* src = g.data.data() + o * len * inner;
            Real* dst = ga.data.data() + (o * ax + start) * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
    return out;
}

/// [N,C,H,W] -> [N, H*W, C]: one row per spatial position, row-major over
/// (h, w). This is the token layout the attention blocks consume.
template <typename Real>
var tokens_from_nchw(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    if (x.rank() != 4) throw std::invalid_argument("tokens_from_nchw: need rank-4, got " + shape_str(x.shape));
    const std::size_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    tensor<Real> y({n, hw, c});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const Real* src = x.data.data() + (b * c + ch) * hw;
            Real* dst = y.data.data() + b * hw * c + ch;
            for (std::size_t m = 0; m < hw; ++m) dst[m * c] = src[m];
        }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, n, c, hw](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                Real* dst = ga.data.data() + (b * c + ch) * hw;
                const Real* src = g.data.data() + b * hw * c + ch;
                for (std::size_t m = 0; m < hw; ++m) dst[m] += src[m * c];
            }
    });
    return out;
}

/// Inverse of tokens_from_nchw.
template <typename Real>
var nchw_from_tokens(tape<Real>& t, var a, std::size_t h, std::size_t w) {
    const auto& x = t.value(a);
    if (x.rank() != 3 || x.shape[1] != h * w)
        throw std::invalid_argument("nchw_from_tokens: shape " + shape_str(x.shape) +
                                    " does not match spatial " + std::to_string(h) + "x" + std::to_string(w));
    const std::size_t n = x.shape[0], c = x.shape[2], hw = h * w;
    tensor<Real> y({n, c, h, w});
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            Real* dst = y.data.data() + (b * c + ch) * hw;
            const Real* src = x.data.data() + b * hw * c + ch;
            for (std::size_t m = 0; m < hw; ++m) dst[m] = src[m * c];
        }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, n, c, hw](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real* src = g.data.data() + (b * c + ch) * hw;
                Real* dst = ga.data.data() + b * hw * c + ch;
                for (std::size_t m = 0; m < hw; ++m) dst[m * c] += src[m];
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// broadcast helpers

/// a[..., C] + b[C], bias broadcast over all leading axes.
template <typename Real>
var add_bias_lastdim(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& bias = t.value(b);
    const std::size_t c = x.shape.back();
    if (bias.rank() != 1 || bias.shape[0] != c)
        throw std::invalid_argument("add_bias_lastdim: bias " + shape_str(bias.shape) +
                                    " does not match last extent of " + shape_str(x.shape));
    const std::size_t rows = x.numel() / c;
    tensor<Real> y(x.shape);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) y.data[r * c + j] = x.data[r * c + j] + bias.data[j];
    var out = t.make_node(std::move(y));
    t.push_backward([a, b, out, rows, c](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) gb.data[j] += g.data[r * c + j];
    });
    return out;
}

/// a[N,C,H,W] + b[C] broadcast over batch and spatial axes.
template <typename Real>
var add_bias_channel(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& bias = t.value(b);
    if (x.rank() != 4 || bias.rank() != 1 || bias.shape[0] != x.shape[1])
        throw std::invalid_argument("add_bias_channel: " + shape_str(bias.shape) + " vs " + shape_str(x.shape));
    const std::size_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    tensor<Real> y(x.shape);
    for (std::size_t b2 = 0; b2 < n; ++b2)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const Real bv = bias.data[ch];
            const Real* src = x.data.data() + (b2 * c + ch) * hw;
            Real* dst = y.data.data() + (b2 * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bv;
        }
    var out = t.make_node(std::move(y));
    t.push_backward([a, b, out, n, c, hw](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
        auto& gb = t.adjoint_mut(b);
        for (std::size_t b2 = 0; b2 < n; ++b2)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const Real* src = g.data.data() + (b2 * c + ch) * hw;
                double acc = 0;
                for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(src[i]);
                gb.data[ch] += static_cast<Real>(acc);
            }
    });
    return out;
}

/// a[N,C,H,W] scaled per (sample, channel) by gates g[N,C].
template <typename Real>
var scale_channels(tape<Real>& t, var a, var gates) {
    const auto& x = t.value(a);
    const auto& g = t.value(gates);
    if (x.rank() != 4 || g.rank() != 2 || g.shape[0] != x.shape[0] || g.shape[1] != x.shape[1])
        throw std::invalid_argument("scale_channels: gates " + shape_str(g.shape) + " vs input " + shape_str(x.shape));
    const std::size_t nc = x.shape[0] * x.shape[1], hw = x.shape[2] * x.shape[3];
    tensor<Real> y(x.shape);
    for (std::size_t i = 0; i < nc; ++i) {
        const Real gv = g.data[i];
        const Real* src = x.data.data() + i * hw;
        Real* dst = y.data.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) dst[j] = gv * src[j];
    }
    var out = t.make_node(std::move(y));
    t.push_backward([a, gates, out, nc, hw](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& gt = t.value(gates);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        auto& gg = t.adjoint_mut(gates);
        for (std::size_t i = 0; i < nc; ++i) {
            const Real gv = gt.data[i];
            const Real* gsrc = g.data.data() + i * hw;
            const Real* xsrc = x.data.data() + i * hw;
            Real* gdst = ga.data.data() + i * hw;
            double acc = 0;
            for (std::size_t j = 0; j < hw; ++j) {
                gdst[j] += gv * gsrc[j];
                acc += static_cast<double>(gsrc[j]) * static_cast<double>(xsrc[j]);
            }
            gg.data[i] += static_cast<Real>(acc);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// normalization and softmax

/// Softmax along `axis`, max-shifted before exponentiation.
template <typename Real>
var softmax(tape<Real>& t, var a, std::size_t axis) {
    const auto& x = t.value(a);
    if (axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range for " + shape_str(x.shape));
    const std::size_t d = x.shape[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    tensor<Real> y(x.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * d * inner + in;
            Real mx = x.data[base];
            for (std::size_t k = 1; k < d; ++k) mx = std::max(mx, x.data[base + k * inner]);
            double sum = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const Real e = std::exp(x.data[base + k * inner] - mx);
                y.data[base + k * inner] = e;
                sum += static_cast<double>(e);
            }
            const Real norm = static_cast<Real>(1.0 / sum);
            for (std::size_t k = 0; k < d; ++k) y.data[base + k * inner] *= norm;
        }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, d, outer, inner](tape<Real>& t) {
        const auto& s = t.value(out);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * d * inner + in;
                double dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += static_cast<double>(g.data[base + k * inner]) *
                           static_cast<double>(s.data[base + k * inner]);
                for (std::size_t k = 0; k < d; ++k)
                    ga.data[base + k * inner] += s.data[base + k * inner] *
                                                 (g.data[base + k * inner] - static_cast<Real>(dot));
            }
    });
    return out;
}

inline constexpr double kNormEps = 1e-5;

namespace detail {

// Shared by layer_norm (contiguous lanes) and channel_norm (strided lanes).
// Normalizes `lanes` groups of `d` elements at `stride` apart, then applies
// the per-position affine gain/bias.
template <typename Real>
struct norm_plan {
    std::size_t d = 0;
    std::vector<std::size_t> lane_base;  // base offset of each lane
    std::size_t stride = 1;
};

template <typename Real>
tensor<Real> norm_forward(const tensor<Real>& x, const tensor<Real>& gain, const tensor<Real>& bias,
                          const norm_plan<Real>& plan, std::vector<double>& mean_out,
                          std::vector<double>& inv_out) {
    tensor<Real> y(x.shape);
    const std::size_t d = plan.d;
    mean_out.resize(plan.lane_base.size());
    inv_out.resize(plan.lane_base.size());
    for (std::size_t l = 0; l < plan.lane_base.size(); ++l) {
        const std::size_t base = plan.lane_base[l];
        double m = 0;
        for (std::size_t k = 0; k < d; ++k) m += static_cast<double>(x.data[base + k * plan.stride]);
        m /= static_cast<double>(d);
        double v = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double c = static_cast<double>(x.data[base + k * plan.stride]) - m;
            v += c * c;
        }
        v /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(v + kNormEps);
        mean_out[l] = m;
        inv_out[l] = inv;
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t idx = base + k * plan.stride;
            const double xh = (static_cast<double>(x.data[idx]) - m) * inv;
            y.data[idx] = static_cast<Real>(xh) * gain.data[k] + bias.data[k];
        }
    }
    return y;
}

template <typename Real>
void norm_backward(tape<Real>& t, var a, var gain_v, var bias_v, var out,
                   const norm_plan<Real>& plan, const std::vector<double>& means,
                   const std::vector<double>& invs) {
    const auto& x = t.value(a);
    const auto& gain = t.value(gain_v);
    const auto& g = t.adjoint(out);
    auto& ga = t.adjoint_mut(a);
    auto& ggain = t.adjoint_mut(gain_v);
    auto& gbias = t.adjoint_mut(bias_v);
    const std::size_t d = plan.d;
    for (std::size_t l = 0; l < plan.lane_base.size(); ++l) {
        const std::size_t base = plan.lane_base[l];
        const double m = means[l], inv = invs[l];
        double sum_gh = 0, sum_gh_xh = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t idx = base + k * plan.stride;
            const double xh = (static_cast<double>(x.data[idx]) - m) * inv;
            const double gh = static_cast<double>(g.data[idx]) * static_cast<double>(gain.data[k]);
            sum_gh += gh;
            sum_gh_xh += gh * xh;
            ggain.data[k] += static_cast<Real>(static_cast<double>(g.data[idx]) * xh);
            gbias.data[k] += g.data[idx];
        }
        sum_gh /= static_cast<double>(d);
        sum_gh_xh /= static_cast<double>(d);
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t idx = base + k * plan.stride;
            const double xh = (static_cast<double>(x.data[idx]) - m) * inv;
            const double gh = static_cast<double>(g.data[idx]) * static_cast<double>(gain.data[k]);
            ga.data[idx] += static_cast<Real>((gh - sum_gh - xh * sum_gh_xh) * inv);
        }
    }
}

}  // namespace detail

/// Normalize over the last axis of `a` per leading row (the "phi" of the
/// attention blocks), then scale/shift by gain/bias of that axis length.
template <typename Real>
var layer_norm(tape<Real>& t, var a, var gain, var bias) {
    const auto& x = t.value(a);
    if (x.rank() < 2) throw std::invalid_argument("layer_norm: need rank >= 2, got " + shape_str(x.shape));
    const std::size_t c = x.shape.back();
    const auto& gn = t.value(gain);
    const auto& bs = t.value(bias);
    if (gn.numel() != c || bs.numel() != c)
        throw std::invalid_argument("layer_norm: gain/bias length must be " + std::to_string(c));
    detail::norm_plan<Real> plan;
    plan.d = c;
    plan.stride = 1;
    const std::size_t rows = x.numel() / c;
    plan.lane_base.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) plan.lane_base[r] = r * c;
    std::vector<double> means, invs;
    tensor<Real> y = detail::norm_forward(x, gn, bs, plan, means, invs);
    var out = t.make_node(std::move(y));
    t.push_backward([a, gain, bias, out, plan, means, invs](tape<Real>& t) {
        detail::norm_backward(t, a, gain, bias, out, plan, means, invs);
    });
    return out;
}

/// Normalize across the channel axis independently at each spatial position
/// of a [N,C,H,W] tensor (H*W*N groups), then apply per-channel gain/bias.
template <typename Real>
var channel_norm(tape<Real>& t, var a, var gain, var bias) {
    const auto& x = t.value(a);
    if (x.rank() != 4) throw std::invalid_argument("channel_norm: need rank-4, got " + shape_str(x.shape));
    const std::size_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    const auto& gn = t.value(gain);
    const auto& bs = t.value(bias);
    if (gn.numel() != c || bs.numel() != c)
        throw std::invalid_argument("channel_norm: gain/bias length must be " + std::to_string(c));
    detail::norm_plan<Real> plan;
    plan.d = c;
    plan.stride = hw;
    plan.lane_base.resize(n * hw);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < hw; ++s) plan.lane_base[b * hw + s] = b * c * hw + s;
    std::vector<double> means, invs;
    tensor<Real> y = detail::norm_forward(x, gn, bs, plan, means, invs);
    var out = t.make_node(std::move(y));
    t.push_backward([a, gain, bias, out, plan, means, invs](tape<Real>& t) {
        detail::norm_backward(t, a, gain, bias, out, plan, means, invs);
    });
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename Real>
var matmul(tape<Real>& t, var a, var b) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    if (x.rank() != 2 || y.rank() != 2 || x.shape[1] != y.shape[0])
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(x.shape) + " x " + shape_str(y.shape));
    const std::int64_t m = x.shape[0], p = x.shape[1], q = y.shape[1];
    tensor<Real> z({static_cast<std::size_t>(m), static_cast<std::size_t>(q)});
    detail::matmul_accum(x.data.data(), y.data.data(), z.data.data(), m, p, q);
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out, m, p, q](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        const auto& g = t.adjoint(out);
        detail::matmul_bt_accum(g.data.data(), y.data.data(), t.adjoint_mut(a).data.data(), m, q, p);
        detail::matmul_at_accum(x.data.data(), g.data.data(), t.adjoint_mut(b).data.data(), m, p, q);
    });
    return out;
}

/// Batched matmul: [N,m,p] x [N,p,q] -> [N,m,q]; with transpose_b the second
/// operand is [N,q,p] and its rows are used as columns.
template <typename Real>
var bmm(tape<Real>& t, var a, var b, bool transpose_b = false) {
    const auto& x = t.value(a);
    const auto& y = t.value(b);
    if (x.rank() != 3 || y.rank() != 3 || x.shape[0] != y.shape[0])
        throw std::invalid_argument("bmm: shape mismatch " + shape_str(x.shape) + " x " + shape_str(y.shape));
    const std::size_t n = x.shape[0];
    const std::int64_t m = x.shape[1], p = x.shape[2];
    const std::int64_t q = transpose_b ? y.shape[1] : y.shape[2];
    const std::int64_t yp = transpose_b ? y.shape[2] : y.shape[1];
    if (yp != p)
        throw std::invalid_argument("bmm: inner extent mismatch " + shape_str(x.shape) + " x " + shape_str(y.shape));
    tensor<Real> z({n, static_cast<std::size_t>(m), static_cast<std::size_t>(q)});
    std::vector<Real> bt;  // materialized transpose keeps the inner loop long
    if (transpose_b) bt.resize(p * q);
    for (std::size_t i = 0; i < n; ++i) {
        const Real* xa = x.data.data() + i * m * p;
        const Real* yb = y.data.data() + i * p * q;
        Real* zc = z.data.data() + i * m * q;
        if (transpose_b) {
            for (std::int64_t r = 0; r < q; ++r)
                for (std::int64_t c = 0; c < p; ++c) bt[c * q + r] = yb[r * p + c];
            detail::matmul_accum(xa, bt.data(), zc, m, p, q);
        } else {
            detail::matmul_accum(xa, yb, zc, m, p, q);
        }
    }
    var out = t.make_node(std::move(z));
    t.push_backward([a, b, out, n, m, p, q, transpose_b](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& y = t.value(b);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        auto& gb = t.adjoint_mut(b);
        for (std::size_t i = 0; i < n; ++i) {
            const Real* xa = x.data.data() + i * m * p;
            const Real* yb = y.data.data() + i * p * q;
            const Real* gc = g.data.data() + i * m * q;
            Real* gxa = ga.data.data() + i * m * p;
            Real* gyb = gb.data.data() + i * p * q;
            if (transpose_b) {
                // z = x * y^T: gx += g * y; gy += g^T * x
                detail::matmul_accum(gc, yb, gxa, m, q, p);
                detail::matmul_at_accum(gc, xa, gyb, m, q, p);
            } else {
                detail::matmul_bt_accum(gc, yb, gxa, m, q, p);
                detail::matmul_at_accum(xa, gc, gyb, m, p, q);
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// convolutions

/// Cross-correlation over [N,Ci,H,W] with kernels [Co,Ci,K,K]. K must be odd.
/// With padding (K-1)/2, stride 1 preserves spatial extents and stride 2
/// halves them; strided input extents must be even.
template <typename Real>
var conv2d(tape<Real>& t, var input, var kernels, std::size_t stride, std::size_t padding) {
    const auto& x = t.value(input);
    const auto& k = t.value(kernels);
    if (x.rank() != 4 || k.rank() != 4)
        throw std::invalid_argument("conv2d: need input [N,C,H,W] and kernels [Co,Ci,K,K], got " +
                                    shape_str(x.shape) + " and " + shape_str(k.shape));
    if (k.shape[2] != k.shape[3] || k.shape[2] % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be odd square, got " + shape_str(k.shape));
    if (k.shape[1] != x.shape[1])
        throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape) +
                                    " vs kernels " + shape_str(k.shape));
    if (stride == 0 || stride > 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (stride == 2 && (x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0))
        throw std::invalid_argument("conv2d: stride-2 input extents must be even, got " + shape_str(x.shape));
    const std::int64_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::int64_t co = k.shape[0], ks = k.shape[2];
    const std::int64_t s = stride, p = padding;
    const std::int64_t ho = detail::conv_out_extent(h, ks, s, p);
    const std::int64_t wo = detail::conv_out_extent(w, ks, s, p);
    if (ho <= 0 || wo <= 0)
        throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape) + " too large for input " + shape_str(x.shape));
    tensor<Real> y({static_cast<std::size_t>(n), static_cast<std::size_t>(co),
                    static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    detail::conv2d_accum(x.data.data(), k.data.data(), y.data.data(), n, ci, h, w, co, ks, s, p);
    var out = t.make_node(std::move(y));
    t.push_backward([input, kernels, out, n, ci, h, w, co, ks, s, p](tape<Real>& t) {
        const auto& x = t.value(input);
        const auto& k = t.value(kernels);
        const auto& g = t.adjoint(out);
        detail::conv2d_input_grad_accum(g.data.data(), k.data.data(),
                                        t.adjoint_mut(input).data.data(), n, ci, h, w, co, ks, s, p);
        detail::conv2d_kernel_grad_accum(x.data.data(), g.data.data(),
                                         t.adjoint_mut(kernels).data.data(), n, ci, h, w, co, ks, s, p);
    });
    return out;
}

/// Exact adjoint of conv2d for the same kernel/stride and padding (K-1)/2.
/// Input [N,Ci,H,W], kernels [Ci,Co,K,K]; output [N,Co,H*stride,W*stride].
template <typename Real>
var conv2d_transpose(tape<Real>& t, var input, var kernels, std::size_t stride) {
    const auto& x = t.value(input);
    const auto& k = t.value(kernels);
    if (x.rank() != 4 || k.rank() != 4)
        throw std::invalid_argument("conv2d_transpose: need input [N,C,H,W] and kernels [Ci,Co,K,K], got " +
                                    shape_str(x.shape) + " and " + shape_str(k.shape));
    if (k.shape[2] != k.shape[3] || k.shape[2] % 2 == 0)
        throw std::invalid_argument("conv2d_transpose: kernel must be odd square, got " + shape_str(k.shape));
    if (k.shape[0] != x.shape[1])
        throw std::invalid_argument("conv2d_transpose: channel mismatch, input " + shape_str(x.shape) +
                                    " vs kernels " + shape_str(k.shape));
    if (stride == 0 || stride > 2) throw std::invalid_argument("conv2d_transpose: stride must be 1 or 2");
    const std::int64_t n = x.shape[0], ci = x.shape[1], hin = x.shape[2], win = x.shape[3];
    const std::int64_t co = k.shape[1], ks = k.shape[2];
    const std::int64_t s = stride, p = (ks - 1) / 2;
    const std::int64_t h = hin * s, w = win * s;  // extents of the adjointed conv's input
    tensor<Real> y({static_cast<std::size_t>(n), static_cast<std::size_t>(co),
                    static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    detail::conv2d_input_grad_accum(x.data.data(), k.data.data(), y.data.data(), n, co, h, w, ci, ks, s, p);
    var out = t.make_node(std::move(y));
    t.push_backward([input, kernels, out, n, ci, co, h, w, ks, s, p](tape<Real>& t) {
        const auto& x = t.value(input);
        const auto& k = t.value(kernels);
        const auto& g = t.adjoint(out);
        // d/dinput is the forward conv; d/dkernels pairs the small map with
        // the large one, with the kernel channel layout [Ci,Co,K,K].
        detail::conv2d_accum(g.data.data(), k.data.data(), t.adjoint_mut(input).data.data(),
                             n, co, h, w, ci, ks, s, p);
        detail::conv2d_kernel_grad_accum(g.data.data(), x.data.data(),
                                         t.adjoint_mut(kernels).data.data(), n, co, h, w, ci, ks, s, p);
    });
    return out;
}

// ---------------------------------------------------------------------------
// signal ops

/// Scale each row of a [N,D] tensor so its squared L2 norm equals
/// `target_sq`. Rejects all-zero rows: a silent zero signal would mask a
/// dead encoder. Norm accumulation runs in double so the constraint holds to
/// 1e-6 relative even in single precision.
template <typename Real>
var power_normalize_rows(tape<Real>& t, var a, double target_sq) {
    const auto& x = t.value(a);
    if (x.rank() != 2) throw std::invalid_argument("power_normalize_rows: need [N,D], got " + shape_str(x.shape));
    const std::size_t n = x.shape[0], d = x.shape[1];
    tensor<Real> y(x.shape);
    std::vector<double> inv_norm(n);
    const double target = std::sqrt(target_sq);
    for (std::size_t r = 0; r < n; ++r) {
        const Real* src = x.data.data() + r * d;
        double ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(src[j]) * static_cast<double>(src[j]);
        if (ss == 0.0)
            throw std::domain_error("power_normalize_rows: degenerate all-zero signal in row " + std::to_string(r));
        const double c = target / std::sqrt(ss);
        inv_norm[r] = c;
        Real* dst = y.data.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<Real>(c * static_cast<double>(src[j]));
    }
    var out = t.make_node(std::move(y));
    t.push_backward([a, out, n, d, inv_norm, target_sq](tape<Real>& t) {
        const auto& x = t.value(a);
        const auto& g = t.adjoint(out);
        auto& ga = t.adjoint_mut(a);
        for (std::size_t r = 0; r < n; ++r) {
            const Real* xs = x.data.data() + r * d;
            const Real* gs = g.data.data() + r * d;
            Real* gd = ga.data.data() + r * d;
            const double c = inv_norm[r];  // sqrt(target_sq)/||x||
            double xg = 0, xx = 0;
            for (std::size_t j = 0; j < d; ++j) {
                xg += static_cast<double>(xs[j]) * static_cast<double>(gs[j]);
                xx += static_cast<double>(xs[j]) * static_cast<double>(xs[j]);
            }
            for (std::size_t j = 0; j < d; ++j)
                gd[j] += static_cast<Real>(c * (static_cast<double>(gs[j]) -
                                                static_cast<double>(xs[j]) * xg / xx));
        }
    });
    return out;
}

/// Prepend one per-sample token row to [N,M,C] feature rows. Row 0 of each
/// sample is bank[index[n]]; the bank gradient accumulates into the selected
/// rows, so shared tokens sum their contributions.
template <typename Real>
var attach_quality_tokens(tape<Real>& t, var features, var bank, std::vector<std::size_t> index) {
    const auto& f = t.value(features);
    const auto& bk = t.value(bank);
    if (f.rank() != 3 || bk.rank() != 2)
        throw std::invalid_argument("attach_quality_tokens: need features [N,M,C] and bank [T,C], got " +
                                    shape_str(f.shape) + " and " + shape_str(bk.shape));
    if (f.shape[2] != bk.shape[1])
        throw std::invalid_argument("attach_quality_tokens: channel mismatch, features " + shape_str(f.shape) +
                                    " vs bank " + shape_str(bk.shape));
    const std::size_t n = f.shape[0], m = f.shape[1], c = f.shape[2];
    if (index.size() != n) throw std::invalid_argument("attach_quality_tokens: need one token index per sample");
    for (std::size_t i : index)
        if (i >= bk.shape[0]) throw std::invalid_argument("attach_quality_tokens: token index out of range");
    tensor<Real> y({n, m + 1, c});
    for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(bk.data.data() + index[b] * c, c, y.data.data() + b * (m + 1) * c);
        std::copy_n(f.data.data() + b * m * c, m * c, y.data.data() + b * (m + 1) * c + c);
    }
    var out = t.make_node(std::move(y));
    t.push_backward([features, bank, out, index, n, m, c](tape<Real>& t) {
        const auto& g = t.adjoint(out);
        auto& gf = t.adjoint_mut(features);
        auto& gb = t.adjoint_mut(bank);
        for (std::size_t b = 0; b < n; ++b) {
            const Real* g0 = g.data.data() + b * (m + 1) * c;
            Real* brow = gb.data.data() + index[b] * c;
            for (std::size_t j = 0; j < c; ++j) brow[j] += g0[j];
            Real* frow = gf.data.data() + b * m * c;
            for (std::size_t j = 0; j < m * c; ++j) frow[j] += g0[c + j];
        }
    });
    return out;
}

/// Remove the token row again: [N,M+1,C] -> [N,M,C].
template <typename Real>
var drop_token_row(tape<Real>& t, var a) {
    const auto& x = t.value(a);
    if (x.rank() != 3 || x.shape[1] < 2)
        throw std::invalid_argument("drop_token_row: need [N,M+1,C] with M >= 1, got " + shape_str(x.shape));
    return slice(t, a, 1, 1, x.shape[1] - 1);
}

}  // namespace djscc
