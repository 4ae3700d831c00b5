// Copyright (c) 2026 The djscc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "djscc/tensor.hpp"

namespace djscc {

/// Handle to a value recorded on a tape. Cheap to copy; only meaningful
/// together with the tape that produced it.
struct var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Reverse-mode tape. Operations append (value, adjoint) nodes plus a
/// backward closure; backward() replays the closures in exact reverse
/// execution order. A tape is confined to one execution context; distinct
/// tapes share nothing and may run concurrently.
template <typename Real>
class tape {
  public:
    /// Record an input or parameter value. Leaves have no backward step;
    /// their adjoints are read out after backward().
    var leaf(tensor<Real> value) { return make_node(std::move(value)); }

    /// Record an op output. Used by the op library, not by end users.
    var make_node(tensor<Real> value) {
        nodes_.push_back(node{std::move(value), tensor<Real>()});
        return var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void push_backward(std::function<void(tape<Real>&)> fn) { steps_.push_back(std::move(fn)); }

    const tensor<Real>& value(var v) const { return nodes_.at(v.id).value; }

    /// Adjoint of a node; all zeros until backward() has run.
    const tensor<Real>& adjoint(var v) const {
        const node& n = nodes_.at(v.id);
        if (n.adjoint.numel() == 0) ensure_adjoint(v.id);
        return n.adjoint;
    }

    tensor<Real>& adjoint_mut(var v) {
        ensure_adjoint(v.id);
        return nodes_.at(v.id).adjoint;
    }

    /// Populate every reachable adjoint with d(loss)/d(node). The loss must
    /// be a scalar recorded on this tape. Call once per recorded graph.
    void backward(var loss) {
        if (value(loss).numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(value(loss).shape));
        adjoint_mut(loss).data[0] = Real(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)(*this);
    }

    std::size_t node_count() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        steps_.clear();
    }

  private:
    struct node {
        tensor<Real> value;
        tensor<Real> adjoint;  // allocated lazily, zero-filled
    };
    // deque: appending nodes must not invalidate value()/adjoint() references
    // held across later op calls

    void ensure_adjoint(std::uint32_t id) const {
        node& n = const_cast<node&>(nodes_.at(id));
        if (n.adjoint.numel() == 0) n.adjoint = tensor<Real>(n.value.shape);
    }

    mutable std::deque<node> nodes_;
    std::vector<std::function<void(tape<Real>&)>> steps_;
};

}  // namespace djscc
