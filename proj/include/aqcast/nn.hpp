#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "aqcast/autodiff.hpp"
#include "aqcast/tensor.hpp"

namespace aqcast::nn {

// Learnable weights of one ConvLSTM block. The 4*hidden gate axis is laid
// out as [input i | forget f | candidate g | output o].
struct ConvLstmParams {
    std::size_t kernel = 3;
    std::size_t c_in = 1;
    std::size_t hidden = 1;
    Tensor w_x;   // (k, k, c_in, 4h)
    Tensor w_h;   // (k, k, h, 4h)
    Tensor bias;  // (4h)

    static ConvLstmParams zeros(std::size_t kernel, std::size_t c_in, std::size_t hidden);
    // Uniform Glorot kernels, zero biases except +1 on the forget gate.
    static ConvLstmParams glorot(std::size_t kernel, std::size_t c_in, std::size_t hidden, std::mt19937_64& rng);

    std::size_t parameter_count() const { return w_x.size() + w_h.size() + bias.size(); }
};

// 4 (k^2 (c_in + h) h + h); depends on nothing spatial.
constexpr std::size_t convlstm_parameter_count(std::size_t kernel, std::size_t c_in, std::size_t hidden) {
    return 4 * (kernel * kernel * (c_in + hidden) * hidden + hidden);
}

struct ConvLstmVars {
    ad::Var w_x, w_h, bias;
    std::size_t hidden = 0;
};

ConvLstmVars bind(ad::Tape& tape, const ConvLstmParams& p, bool trainable);

struct CellState {
    ad::Var h;
    ad::Var c;
};

// One step: gates = conv(x, W_x) + conv(h_prev, W_h) + b; i, f, o sigmoid,
// g tanh; c = f*c_prev + i*g; h = o*tanh(c). No peephole terms.
CellState convlstm_cell_step(ad::Var x, ad::Var h_prev, ad::Var c_prev, const ConvLstmVars& p);

// seq: (T, ..., H, W, c_in), starting from zero h and c. Returns (T, ..., H,
// W, h) or the final hidden state (..., H, W, h).
ad::Var convlstm_block_forward(ad::Var seq, const ConvLstmVars& p, bool return_sequences);

// Fused pointwise halves of the cell update (exposed for testing).
ad::Var lstm_cell_state(ad::Var gates, const ad::Var* c_prev);
ad::Var lstm_hidden_state(ad::Var gates, ad::Var c);

enum class NormMode { train, infer };

struct BatchNormParams {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.99;
    double epsilon = 1e-3;

    static BatchNormParams identity(std::size_t channels);
};

struct BatchNormVars {
    ad::Var gamma, beta;
};

BatchNormVars bind(ad::Tape& tape, const BatchNormParams& p, bool trainable);

// Normalizes over every axis except the trailing channel axis. Train mode
// uses batch statistics and folds them into the running statistics of
// `stats`; infer mode uses the running statistics.
ad::Var batch_norm(ad::Var x, const BatchNormVars& v, BatchNormParams& stats, NormMode mode);

// relu(1x1 conv): features (..., H, W, C), kernels (1, 1, C, N_pol).
ad::Var forecast_head(ad::Var features, ad::Var kernels, ad::Var bias);

// mean((log1p(pred) - log1p(target))^2)
ad::Var msle(ad::Var pred, ad::Var target);
double msle(const Tensor& pred, const Tensor& target);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(std::span<Tensor* const> params, double lr = 1e-3);
};

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace aqcast::nn
