#include "aqcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aqcast/error.hpp"
#include "aqcast/kernels.hpp"

namespace aqcast::ad {

// ---- Var / Tape -----------------------------------------------------------

const Tensor& Var::value() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const {
    if (!tape_) throw ContractError("use of an unbound Var");
    return tape_->nodes_[id_].requires_grad;
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, true, std::nullopt});
    return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw ContractError("Var belongs to a different tape");
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardRule rule) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(rule));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardRule rule) {
    Node node;
    node.value = std::move(value);
    node.inputs.reserve(inputs.size());
    for (const auto& v : inputs) {
        check_owned(v);
        node.inputs.push_back(v.id_);
        node.requires_grad = node.requires_grad || nodes_[v.id_].requires_grad;
    }
    if (node.requires_grad) node.rule = std::move(rule);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
    auto& node = nodes_[id];
    if (!node.grad) node.grad.emplace(Tensor::like(node.value));
    return *node.grad;
}

Tensor* BackwardContext::input_grad(std::size_t k) {
    const auto id = tape_.nodes_[node_].inputs.at(k);
    if (!tape_.nodes_[id].requires_grad) return nullptr;
    return &tape_.grad_buffer(id);
}

void Tape::backward(Var loss) {
    check_owned(loss);
    if (loss.value().size() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
    for (auto& node : nodes_) node.grad.reset();
    grad_buffer(loss.id_)[0] = 1.0;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        auto& node = nodes_[id];
        if (!node.grad || !node.rule) continue;
        BackwardContext ctx(*this, id, *node.grad);
        node.rule(ctx);
    }
}

Tensor Tape::grad(Var v) const {
    check_owned(v);
    const auto& node = nodes_[v.id_];
    return node.grad ? *node.grad : Tensor::like(node.value);
}

// ---- ops --------------------------------------------------------------------

namespace {

Tape& tape_of(Var a) {
    if (!a.valid()) throw ContractError("use of an unbound Var");
    return *a.tape();
}

Tape& tape_of(Var a, Var b) {
    if (a.tape() != b.tape() || !a.valid()) throw ContractError("operands live on different tapes");
    return *a.tape();
}

enum class Broadcast { same, channel };

Broadcast broadcast_kind(const Tensor& x, const Tensor& y, const char* op) {
    if (x.shape() == y.shape()) return Broadcast::same;
    if (y.rank() == 1 && y.size() == x.channels()) return Broadcast::channel;
    throw ContractError(std::string(op) + ": incompatible shapes " + shape_string(x.shape()) + " and " +
                        shape_string(y.shape()));
}

template <class F, class DF>
Var unary(Var x, F f, DF df_from_in_out) {
    auto& tape = tape_of(x);
    const auto& in = x.value();
    Tensor out = Tensor::like(in);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return tape.record(std::move(out), {x}, [df_from_in_out](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const auto& in = ctx.input(0);
        const auto& out = ctx.output();
        const auto& g = ctx.grad_out();
        for (std::size_t i = 0; i < in.size(); ++i) (*gx)[i] += g[i] * df_from_in_out(in[i], out[i]);
    });
}

ConvGeometry geometry_of(const Tensor& x, const Tensor& w) {
    if (x.rank() < 3) throw ContractError("conv2d_same input must be (..., H, W, C), got " + shape_string(x.shape()));
    if (w.rank() != 4 || w.dim(0) != w.dim(1))
        throw ContractError("conv2d_same kernels must be (k, k, C_in, C_out), got " + shape_string(w.shape()));
    if (w.dim(0) % 2 == 0) throw ConfigError("conv2d_same kernel size must be odd");
    if (w.dim(2) != x.channels())
        throw ContractError("conv2d_same channel mismatch: input " + shape_string(x.shape()) + ", kernels " +
                            shape_string(w.shape()));
    ConvGeometry g;
    const auto r = x.rank();
    g.height = x.dim(r - 3);
    g.width = x.dim(r - 2);
    g.c_in = x.dim(r - 1);
    g.batch = x.size() / (g.height * g.width * g.c_in);
    g.c_out = w.dim(3);
    g.kernel = w.dim(0);
    return g;
}

Var conv_impl(Var x, Var w, std::optional<Var> b) {
    auto& tape = tape_of(x, w);
    const auto g = geometry_of(x.value(), w.value());
    if (b && (b->value().rank() != 1 || b->value().size() != g.c_out))
        throw ContractError("conv2d_same bias must have shape (C_out)");
    Shape out_shape = x.shape();
    out_shape.back() = g.c_out;
    Tensor out(out_shape);
    kernels::conv2d_same_forward(g, x.value().values(), w.value().values(),
                                 b ? b->value().values() : std::span<const double>{}, out.values());
    auto rule = [g, has_bias = b.has_value()](BackwardContext& ctx) {
        const auto& gout = ctx.grad_out().values();
        if (Tensor* gx = ctx.input_grad(0))
            kernels::conv2d_same_backward_input(g, gout, ctx.input(1).values(), gx->values());
        Tensor* gw = ctx.input_grad(1);
        Tensor* gb = has_bias ? ctx.input_grad(2) : nullptr;
        if (gw || gb)
            kernels::conv2d_same_backward_params(g, ctx.input(0).values(), gout,
                                                 gw ? gw->values() : std::span<double>{},
                                                 gb ? gb->values() : std::span<double>{});
    };
    if (b) {
        tape_of(x, *b);
        return tape.record(std::move(out), {x, w, *b}, rule);
    }
    return tape.record(std::move(out), {x, w}, rule);
}

}  // namespace

Var conv2d_same(Var x, Var kernels, Var bias) { return conv_impl(x, kernels, bias); }
Var conv2d_same(Var x, Var kernels) { return conv_impl(x, kernels, std::nullopt); }

Var add(Var x, Var y) {
    auto& tape = tape_of(x, y);
    const auto& a = x.value();
    const auto& b = y.value();
    const auto kind = broadcast_kind(a, b, "add");
    Tensor out = a;
    const auto c = a.channels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += kind == Broadcast::same ? b[i] : b[i % c];
    return tape.record(std::move(out), {x, y}, [kind, c](BackwardContext& ctx) {
        const auto& g = ctx.grad_out();
        if (Tensor* gx = ctx.input_grad(0))
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        if (Tensor* gy = ctx.input_grad(1))
            for (std::size_t i = 0; i < g.size(); ++i) (*gy)[kind == Broadcast::same ? i : i % c] += g[i];
    });
}

Var sub(Var x, Var y) {
    auto& tape = tape_of(x, y);
    const auto& a = x.value();
    const auto& b = y.value();
    const auto kind = broadcast_kind(a, b, "sub");
    Tensor out = a;
    const auto c = a.channels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= kind == Broadcast::same ? b[i] : b[i % c];
    return tape.record(std::move(out), {x, y}, [kind, c](BackwardContext& ctx) {
        const auto& g = ctx.grad_out();
        if (Tensor* gx = ctx.input_grad(0))
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
        if (Tensor* gy = ctx.input_grad(1))
            for (std::size_t i = 0; i < g.size(); ++i) (*gy)[kind == Broadcast::same ? i : i % c] -= g[i];
    });
}

Var mul(Var x, Var y) {
    auto& tape = tape_of(x, y);
    const auto& a = x.value();
    const auto& b = y.value();
    const auto kind = broadcast_kind(a, b, "mul");
    Tensor out = a;
    const auto c = a.channels();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kind == Broadcast::same ? b[i] : b[i % c];
    return tape.record(std::move(out), {x, y}, [kind, c](BackwardContext& ctx) {
        const auto& g = ctx.grad_out();
        const auto& a = ctx.input(0);
        const auto& b = ctx.input(1);
        if (Tensor* gx = ctx.input_grad(0))
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (kind == Broadcast::same ? b[i] : b[i % c]);
        if (Tensor* gy = ctx.input_grad(1))
            for (std::size_t i = 0; i < g.size(); ++i) (*gy)[kind == Broadcast::same ? i : i % c] += g[i] * a[i];
    });
}

Var scale(Var x, double factor) {
    return unary(x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var sigmoid(Var x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double s) { return s * (1.0 - s); });
}

Var tanh(Var x) {
    return unary(x, [](double v) { return std::tanh(v); }, [](double, double t) { return 1.0 - t * t; });
}

Var relu(Var x) {
    return unary(x, [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log1p(Var x) {
    for (double v : x.value().values())
        if (!(v > -1.0)) throw DomainError("log1p argument must be > -1, got " + std::to_string(v));
    return unary(x, [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

Var square(Var x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
    auto& tape = tape_of(x);
    double s = 0.0;
    for (double v : x.value().values()) s += v;
    return tape.record(Tensor::scalar(s), {x}, [](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const double g = ctx.grad_out()[0];
        for (auto& v : gx->values()) v += g;
    });
}

Var mean(Var x) {
    const auto n = static_cast<double>(x.value().size());
    return scale(sum(x), 1.0 / n);
}

Var slice_channels(Var x, std::size_t begin, std::size_t count) {
    auto& tape = tape_of(x);
    const auto& in = x.value();
    const auto c = in.channels();
    if (count == 0 || begin + count > c) throw ContractError("slice_channels range outside channel axis");
    Shape shape = in.shape();
    shape.back() = count;
    Tensor out(shape);
    const auto rows = in.rows();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(in.data() + r * c + begin, count, out.data() + r * count);
    return tape.record(std::move(out), {x}, [begin, count, c, rows](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const auto& g = ctx.grad_out();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < count; ++k) (*gx)[r * c + begin + k] += g[r * count + k];
    });
}

Var concat_channels(Var a, Var b) {
    auto& tape = tape_of(a, b);
    const auto& x = a.value();
    const auto& y = b.value();
    if (!std::equal(x.shape().begin(), x.shape().end() - 1, y.shape().begin(), y.shape().end() - 1) ||
        x.rank() != y.rank())
        throw ContractError("concat_channels shape mismatch: " + shape_string(x.shape()) + " and " +
                            shape_string(y.shape()));
    const auto ca = x.channels();
    const auto cb = y.channels();
    Shape shape = x.shape();
    shape.back() = ca + cb;
    Tensor out(shape);
    const auto rows = x.rows();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.data() + r * ca, ca, out.data() + r * (ca + cb));
        std::copy_n(y.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
    }
    return tape.record(std::move(out), {a, b}, [ca, cb, rows](BackwardContext& ctx) {
        const auto& g = ctx.grad_out();
        if (Tensor* ga = ctx.input_grad(0))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < ca; ++k) (*ga)[r * ca + k] += g[r * (ca + cb) + k];
        if (Tensor* gb = ctx.input_grad(1))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t k = 0; k < cb; ++k) (*gb)[r * cb + k] += g[r * (ca + cb) + ca + k];
    });
}

Var select(Var x, std::size_t index) {
    auto& tape = tape_of(x);
    Tensor out = x.value().slab(index);
    const auto n = out.size();
    return tape.record(std::move(out), {x}, [index, n](BackwardContext& ctx) {
        Tensor* gx = ctx.input_grad(0);
        if (!gx) return;
        const auto& g = ctx.grad_out();
        for (std::size_t i = 0; i < n; ++i) (*gx)[index * n + i] += g[i];
    });
}

Var stack(std::span<const Var> items) {
    if (items.empty()) throw ContractError("stack of zero tensors");
    auto& tape = tape_of(items.front());
    const auto& first = items.front().value().shape();
    Shape shape{items.size()};
    shape.insert(shape.end(), first.begin(), first.end());
    Tensor out(shape);
    const auto n = shape_size(first);
    for (std::size_t t = 0; t < items.size(); ++t) {
        tape_of(items.front(), items[t]);
        if (items[t].shape() != first) throw ContractError("stack items must share a shape");
        std::copy_n(items[t].value().data(), n, out.data() + t * n);
    }
    return tape.record(std::move(out), items, [n, count = items.size()](BackwardContext& ctx) {
        const auto& g = ctx.grad_out();
        for (std::size_t t = 0; t < count; ++t)
            if (Tensor* gi = ctx.input_grad(t))
                for (std::size_t i = 0; i < n; ++i) (*gi)[i] += g[t * n + i];
    });
}

}  // namespace aqcast::ad
