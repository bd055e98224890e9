#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "aqcast/tensor.hpp"

namespace aqcast::ad {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class BackwardContext;
using BackwardRule = std::function<void(BackwardContext&)>;

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in evaluation order, so inputs always precede their
/// consumers and backward() is a single reverse sweep. Values live in a
/// deque: references returned by Var::value() stay valid while the tape
/// grows. A tape is not thread-safe.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var variable(Tensor value);

    // Appends an op node. The rule is dropped when no input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardRule rule);
    Var record(Tensor value, std::span<const Var> inputs, BackwardRule rule);

    // Reverse sweep from a scalar loss. Clears gradients of a previous sweep.
    void backward(Var loss);

    // d(loss)/d(v) from the last sweep; zeros when v did not contribute.
    Tensor grad(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    friend class Var;
    friend class BackwardContext;

    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardRule rule;
        bool requires_grad = false;
        std::optional<Tensor> grad;
    };

    void check_owned(Var v) const;
    Tensor& grad_buffer(std::size_t id);

    std::deque<Node> nodes_;
};

/// View handed to a backward rule for one node.
class BackwardContext {
public:
    const Tensor& grad_out() const { return grad_out_; }
    const Tensor& output() const { return tape_.nodes_[node_].value; }
    const Tensor& input(std::size_t k) const { return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value; }
    // Accumulation buffer for input k, or nullptr when it needs no gradient.
    Tensor* input_grad(std::size_t k);

private:
    friend class Tape;
    BackwardContext(Tape& tape, std::size_t node, const Tensor& grad_out)
        : tape_(tape), node_(node), grad_out_(grad_out) {}

    Tape& tape_;
    std::size_t node_;
    const Tensor& grad_out_;
};

// ---- primitive ops --------------------------------------------------------

// "Same" zero-padded convolution. x: (..., H, W, C_in), kernels: (k, k, C_in,
// C_out), bias: (C_out). Leading axes of x are treated as a batch.
Var conv2d_same(Var x, Var kernels, Var bias);
Var conv2d_same(Var x, Var kernels);

// Binary ops accept identical shapes, or y of shape (C) broadcast along the
// trailing channel axis of x.
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);

Var scale(Var x, double factor);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);  // NaN passes through so non-finite losses stay detectable
Var log1p(Var x);  // DomainError for any x <= -1
Var square(Var x);

Var sum(Var x);   // scalar
Var mean(Var x);  // scalar

// Channel-axis slicing and concatenation.
Var slice_channels(Var x, std::size_t begin, std::size_t count);
Var concat_channels(Var a, Var b);

// Leading-axis indexing and stacking.
Var select(Var x, std::size_t index);
Var stack(std::span<const Var> items);

}  // namespace aqcast::ad
