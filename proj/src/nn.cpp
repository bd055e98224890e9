#include "aqcast/nn.hpp"

#include <cmath>
#include <string>

#include "aqcast/error.hpp"

namespace aqcast::nn {

namespace {

double sigmoid(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

void uniform_fill(Tensor& t, double limit, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : t.values()) v = dist(rng);
}

}  // namespace

ConvLstmParams ConvLstmParams::zeros(std::size_t kernel, std::size_t c_in, std::size_t hidden) {
    if (kernel % 2 == 0) throw ConfigError("ConvLSTM kernel size must be odd, got " + std::to_string(kernel));
    if (c_in == 0 || hidden == 0) throw ConfigError("ConvLSTM channel counts must be >= 1");
    ConvLstmParams p;
    p.kernel = kernel;
    p.c_in = c_in;
    p.hidden = hidden;
    p.w_x = Tensor({kernel, kernel, c_in, 4 * hidden});
    p.w_h = Tensor({kernel, kernel, hidden, 4 * hidden});
    p.bias = Tensor({4 * hidden});
    return p;
}

ConvLstmParams ConvLstmParams::glorot(std::size_t kernel, std::size_t c_in, std::size_t hidden,
                                      std::mt19937_64& rng) {
    auto p = zeros(kernel, c_in, hidden);
    const double k2 = static_cast<double>(kernel * kernel);
    const double fan_out = k2 * 4.0 * static_cast<double>(hidden);
    uniform_fill(p.w_x, std::sqrt(6.0 / (k2 * static_cast<double>(c_in) + fan_out)), rng);
    uniform_fill(p.w_h, std::sqrt(6.0 / (k2 * static_cast<double>(hidden) + fan_out)), rng);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) p.bias[j] = 1.0;
    return p;
}

ConvLstmVars bind(ad::Tape& tape, const ConvLstmParams& p, bool trainable) {
    auto put = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
    return ConvLstmVars{put(p.w_x), put(p.w_h), put(p.bias), p.hidden};
}

// ---- fused pointwise cell update -------------------------------------------

ad::Var lstm_cell_state(ad::Var gates, const ad::Var* c_prev) {
    auto& tape = *gates.tape();
    const auto& gv = gates.value();
    if (gv.channels() % 4 != 0) throw ContractError("gate tensor channel count must be a multiple of 4");
    const auto h = gv.channels() / 4;
    const auto rows = gv.rows();
    Shape shape = gv.shape();
    shape.back() = h;
    if (c_prev && c_prev->shape() != shape)
        throw ContractError("cell state shape " + shape_string(c_prev->shape()) + " does not match gates " +
                            shape_string(gv.shape()));
    Tensor c(shape);
    const double* cp = c_prev ? c_prev->value().data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = gv.data() + r * 4 * h;
        for (std::size_t j = 0; j < h; ++j) {
            const double ig = sigmoid(g[j]);
            const double cand = std::tanh(g[2 * h + j]);
            double v = ig * cand;
            if (cp) v += sigmoid(g[h + j]) * cp[r * h + j];
            c[r * h + j] = v;
        }
    }
    auto rule = [h, rows, has_prev = c_prev != nullptr](ad::BackwardContext& ctx) {
        const auto& gv = ctx.input(0);
        const auto& dc = ctx.grad_out();
        const Tensor* cp = has_prev ? &ctx.input(1) : nullptr;
        Tensor* dg = ctx.input_grad(0);
        Tensor* dcp = has_prev ? ctx.input_grad(1) : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = gv.data() + r * 4 * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double d = dc[r * h + j];
                const double ig = sigmoid(g[j]);
                const double fg = sigmoid(g[h + j]);
                const double cand = std::tanh(g[2 * h + j]);
                if (dg) {
                    double* out = dg->data() + r * 4 * h;
                    out[j] += d * cand * ig * (1.0 - ig);
                    out[2 * h + j] += d * ig * (1.0 - cand * cand);
                    if (cp) out[h + j] += d * (*cp)[r * h + j] * fg * (1.0 - fg);
                }
                if (dcp) (*dcp)[r * h + j] += d * fg;
            }
        }
    };
    if (c_prev) return tape.record(std::move(c), {gates, *c_prev}, rule);
    return tape.record(std::move(c), {gates}, rule);
}

ad::Var lstm_hidden_state(ad::Var gates, ad::Var c) {
    auto& tape = *gates.tape();
    const auto& gv = gates.value();
    const auto h = gv.channels() / 4;
    const auto rows = gv.rows();
    if (c.value().rows() != rows || c.value().channels() != h)
        throw ContractError("cell state does not match gates");
    Tensor out = Tensor::like(c.value());
    const auto& cv = c.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j)
            out[r * h + j] = sigmoid(gv[r * 4 * h + 3 * h + j]) * std::tanh(cv[r * h + j]);
    return tape.record(std::move(out), {gates, c}, [h, rows](ad::BackwardContext& ctx) {
        const auto& gv = ctx.input(0);
        const auto& cv = ctx.input(1);
        const auto& dh = ctx.grad_out();
        Tensor* dg = ctx.input_grad(0);
        Tensor* dc = ctx.input_grad(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < h; ++j) {
                const double og = sigmoid(gv[r * 4 * h + 3 * h + j]);
                const double tc = std::tanh(cv[r * h + j]);
                const double d = dh[r * h + j];
                if (dg) (*dg)[r * 4 * h + 3 * h + j] += d * tc * og * (1.0 - og);
                if (dc) (*dc)[r * h + j] += d * og * (1.0 - tc * tc);
            }
    });
}

// ---- ConvLSTM ------------------------------------------------------------

CellState convlstm_cell_step(ad::Var x, ad::Var h_prev, ad::Var c_prev, const ConvLstmVars& p) {
    const auto& xs = x.shape();
    Shape state_shape = xs;
    state_shape.back() = p.hidden;
    if (h_prev.shape() != state_shape || c_prev.shape() != state_shape)
        throw ContractError("ConvLSTM state shape must be " + shape_string(state_shape) + ", got " +
                            shape_string(h_prev.shape()) + " / " + shape_string(c_prev.shape()));
    if (p.w_x.shape()[2] != xs.back())
        throw ContractError("ConvLSTM input has " + std::to_string(xs.back()) + " channels, params expect " +
                            std::to_string(p.w_x.shape()[2]));
    auto gates = ad::add(ad::conv2d_same(x, p.w_x, p.bias), ad::conv2d_same(h_prev, p.w_h));
    auto c = lstm_cell_state(gates, &c_prev);
    auto h = lstm_hidden_state(gates, c);
    return {h, c};
}

ad::Var convlstm_block_forward(ad::Var seq, const ConvLstmVars& p, bool return_sequences) {
    const auto& shape = seq.shape();
    if (shape.size() < 4) throw ContractError("ConvLSTM sequence must be (T, ..., H, W, C)");
    const auto steps = shape[0];
    if (p.w_x.shape()[2] != shape.back())
        throw ContractError("ConvLSTM input has " + std::to_string(shape.back()) + " channels, params expect " +
                            std::to_string(p.w_x.shape()[2]));

    std::vector<ad::Var> outputs;
    outputs.reserve(return_sequences ? steps : 0);
    ad::Var h;
    ad::Var c;
    for (std::size_t t = 0; t < steps; ++t) {
        auto x = ad::select(seq, t);
        if (t == 0) {
            // Zero initial state: the recurrent convolution and forget term vanish.
            auto gates = ad::conv2d_same(x, p.w_x, p.bias);
            c = lstm_cell_state(gates, nullptr);
            h = lstm_hidden_state(gates, c);
        } else {
            auto gates = ad::add(ad::conv2d_same(x, p.w_x, p.bias), ad::conv2d_same(h, p.w_h));
            c = lstm_cell_state(gates, &c);
            h = lstm_hidden_state(gates, c);
        }
        if (return_sequences) outputs.push_back(h);
    }
    return return_sequences ? ad::stack(outputs) : h;
}

// ---- batch norm ------------------------------------------------------------

BatchNormParams BatchNormParams::identity(std::size_t channels) {
    BatchNormParams p;
    p.gamma = Tensor({channels}, 1.0);
    p.beta = Tensor({channels}, 0.0);
    p.running_mean = Tensor({channels}, 0.0);
    p.running_var = Tensor({channels}, 1.0);
    return p;
}

BatchNormVars bind(ad::Tape& tape, const BatchNormParams& p, bool trainable) {
    if (trainable) return {tape.variable(p.gamma), tape.variable(p.beta)};
    return {tape.constant(p.gamma), tape.constant(p.beta)};
}

ad::Var batch_norm(ad::Var x, const BatchNormVars& v, BatchNormParams& stats, NormMode mode) {
    auto& tape = *x.tape();
    const auto& xv = x.value();
    const auto C = xv.channels();
    if (v.gamma.value().size() != C || v.beta.value().size() != C || stats.running_mean.size() != C)
        throw ContractError("batch_norm parameters have " + std::to_string(v.gamma.value().size()) +
                            " channels, input has " + std::to_string(C));
    if (!(stats.epsilon > 0.0)) throw ConfigError("batch_norm epsilon must be positive");
    const auto rows = xv.rows();
    const auto& gamma = v.gamma.value();
    const auto& beta = v.beta.value();

    std::vector<double> mu(C, 0.0);
    std::vector<double> var(C, 0.0);
    if (mode == NormMode::train) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) mu[c] += xv[r * C + c];
        for (auto& m : mu) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = xv[r * C + c] - mu[c];
                var[c] += d * d;
            }
        for (auto& s : var) s /= static_cast<double>(rows);
        for (std::size_t c = 0; c < C; ++c) {
            stats.running_mean[c] = stats.momentum * stats.running_mean[c] + (1.0 - stats.momentum) * mu[c];
            stats.running_var[c] = stats.momentum * stats.running_var[c] + (1.0 - stats.momentum) * var[c];
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mu[c] = stats.running_mean[c];
            var[c] = std::max(stats.running_var[c], 0.0);
        }
    }
    std::vector<double> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + stats.epsilon);

    Tensor out = Tensor::like(xv);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c)
            out[r * C + c] = gamma[c] * (xv[r * C + c] - mu[c]) * inv_std[c] + beta[c];

    const bool batch_stats = mode == NormMode::train;
    return tape.record(std::move(out), {x, v.gamma, v.beta},
                       [mu, inv_std, rows, C, batch_stats](ad::BackwardContext& ctx) {
                           const auto& xv = ctx.input(0);
                           const auto& gamma = ctx.input(1);
                           const auto& dy = ctx.grad_out();
                           std::vector<double> sum_dy(C, 0.0);
                           std::vector<double> sum_dy_xhat(C, 0.0);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < C; ++c) {
                                   const double xhat = (xv[r * C + c] - mu[c]) * inv_std[c];
                                   sum_dy[c] += dy[r * C + c];
                                   sum_dy_xhat[c] += dy[r * C + c] * xhat;
                               }
                           if (Tensor* gg = ctx.input_grad(1))
                               for (std::size_t c = 0; c < C; ++c) (*gg)[c] += sum_dy_xhat[c];
                           if (Tensor* gb = ctx.input_grad(2))
                               for (std::size_t c = 0; c < C; ++c) (*gb)[c] += sum_dy[c];
                           Tensor* gx = ctx.input_grad(0);
                           if (!gx) return;
                           const double n = static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < C; ++c) {
                                   const double scale = gamma[c] * inv_std[c];
                                   if (!batch_stats) {
                                       (*gx)[r * C + c] += dy[r * C + c] * scale;
                                       continue;
                                   }
                                   const double xhat = (xv[r * C + c] - mu[c]) * inv_std[c];
                                   (*gx)[r * C + c] +=
                                       scale * (dy[r * C + c] - sum_dy[c] / n - xhat * sum_dy_xhat[c] / n);
                               }
                       });
}

// ---- head, loss ------------------------------------------------------------

ad::Var forecast_head(ad::Var features, ad::Var kernels, ad::Var bias) {
    const auto& k = kernels.shape();
    if (k.size() != 4 || k[0] != 1 || k[1] != 1)
        throw ContractError("forecast head kernels must be (1, 1, C, N_pol), got " + shape_string(k));
    return ad::relu(ad::conv2d_same(features, kernels, bias));
}

ad::Var msle(ad::Var pred, ad::Var target) {
    if (pred.shape() != target.shape())
        throw ContractError("msle shape mismatch: " + shape_string(pred.shape()) + " vs " +
                            shape_string(target.shape()));
    return ad::mean(ad::square(ad::sub(ad::log1p(pred), ad::log1p(target))));
}

double msle(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw ContractError("msle shape mismatch: " + shape_string(pred.shape()) + " vs " +
                            shape_string(target.shape()));
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(pred[i] > -1.0) || !(target[i] > -1.0)) throw DomainError("msle needs values > -1");
        const double d = std::log1p(pred[i]) - std::log1p(target[i]);
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

// ---- Adam --------------------------------------------------------------------

AdamState AdamState::for_params(std::span<Tensor* const> params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto* p : params) {
        s.m.push_back(Tensor::like(*p));
        s.v.push_back(Tensor::like(*p));
    }
    return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ContractError("adam_step: parameter, gradient and state counts differ");
    ++state.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        const auto& g = grads[k];
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (p.shape() != g.shape() || p.shape() != m.shape())
            throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(k));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace aqcast::nn
