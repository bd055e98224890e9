#include <algorithm>
#include <cstdint>

#include "aqcast/error.hpp"
#include "aqcast/kernels.hpp"

namespace aqcast {
namespace {

void check(const ConvGeometry& g) {
    if (g.kernel % 2 == 0) throw ConfigError("convolution kernel size must be odd");
    if (g.batch == 0 || g.height == 0 || g.width == 0 || g.c_in == 0 || g.c_out == 0)
        throw ContractError("convolution dimensions must be >= 1");
}

}  // namespace

namespace kernels {

void conv2d_same_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weights,
                         std::span<const double> bias, std::span<double> out) {
    check(g);
    if (input.size() != g.input_size() || weights.size() != g.weight_size() || out.size() != g.output_size() ||
        (!bias.empty() && bias.size() != g.c_out))
        throw ContractError("conv2d_same_forward: buffer sizes do not match geometry");

    const auto H = static_cast<std::int64_t>(g.height);
    const auto W = static_cast<std::int64_t>(g.width);
    const auto K = static_cast<std::int64_t>(g.kernel);
    const auto r = K / 2;
    const auto ci_n = g.c_in;
    const auto co_n = g.c_out;
    const auto rows = static_cast<std::int64_t>(g.batch) * H;
    const double* in = input.data();
    const double* w = weights.data();
    const double* b = bias.empty() ? nullptr : bias.data();
    double* o = out.data();

#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < rows; ++row) {
        const auto n = row / H;
        const auto y = row % H;
        for (std::int64_t x = 0; x < W; ++x) {
            double* dst = o + (row * W + x) * static_cast<std::int64_t>(co_n);
            if (b)
                std::copy(b, b + co_n, dst);
            else
                std::fill(dst, dst + co_n, 0.0);
            for (std::int64_t ky = 0; ky < K; ++ky) {
                const auto iy = y + ky - r;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t kx = 0; kx < K; ++kx) {
                    const auto ix = x + kx - r;
                    if (ix < 0 || ix >= W) continue;
                    const double* src = in + ((n * H + iy) * W + ix) * static_cast<std::int64_t>(ci_n);
                    const double* wk = w + (ky * K + kx) * static_cast<std::int64_t>(ci_n * co_n);
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const double a = src[ci];
                        const double* wr = wk + ci * co_n;
#pragma omp simd
                        for (std::size_t co = 0; co < co_n; ++co) dst[co] += a * wr[co];
                    }
                }
            }
        }
    }
}

void conv2d_same_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_input) {
    check(g);
    if (grad_out.size() != g.output_size() || weights.size() != g.weight_size() ||
        grad_input.size() != g.input_size())
        throw ContractError("conv2d_same_backward_input: buffer sizes do not match geometry");

    const auto H = static_cast<std::int64_t>(g.height);
    const auto W = static_cast<std::int64_t>(g.width);
    const auto K = static_cast<std::int64_t>(g.kernel);
    const auto r = K / 2;
    const auto ci_n = g.c_in;
    const auto co_n = g.c_out;
    const auto rows = static_cast<std::int64_t>(g.batch) * H;
    const double* go = grad_out.data();
    const double* w = weights.data();
    double* gi = grad_input.data();

#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < rows; ++row) {
        const auto n = row / H;
        const auto iy = row % H;
        for (std::int64_t ix = 0; ix < W; ++ix) {
            double* dst = gi + (row * W + ix) * static_cast<std::int64_t>(ci_n);
            for (std::int64_t ky = 0; ky < K; ++ky) {
                const auto y = iy - ky + r;
                if (y < 0 || y >= H) continue;
                for (std::int64_t kx = 0; kx < K; ++kx) {
                    const auto x = ix - kx + r;
                    if (x < 0 || x >= W) continue;
                    const double* src = go + ((n * H + y) * W + x) * static_cast<std::int64_t>(co_n);
                    const double* wk = w + (ky * K + kx) * static_cast<std::int64_t>(ci_n * co_n);
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const double* wr = wk + ci * co_n;
                        double s = 0.0;
#pragma omp simd reduction(+ : s)
                        for (std::size_t co = 0; co < co_n; ++co) s += src[co] * wr[co];
                        dst[ci] += s;
                    }
                }
            }
        }
    }
}

void conv2d_same_backward_params(const ConvGeometry& g, std::span<const double> input,
                                 std::span<const double> grad_out, std::span<double> grad_weights,
                                 std::span<double> grad_bias) {
    check(g);
    if (input.size() != g.input_size() || grad_out.size() != g.output_size() ||
        (!grad_weights.empty() && grad_weights.size() != g.weight_size()) ||
        (!grad_bias.empty() && grad_bias.size() != g.c_out))
        throw ContractError("conv2d_same_backward_params: buffer sizes do not match geometry");

    const auto H = static_cast<std::int64_t>(g.height);
    const auto W = static_cast<std::int64_t>(g.width);
    const auto K = static_cast<std::int64_t>(g.kernel);
    const auto r = K / 2;
    const auto ci_n = g.c_in;
    const auto co_n = g.c_out;
    const auto rows = static_cast<std::int64_t>(g.batch) * H;
    const double* in = input.data();
    const double* go = grad_out.data();

    if (!grad_weights.empty()) {
        double* gw = grad_weights.data();
        // One kernel tap per task: taps own disjoint slices of grad_weights.
#pragma omp parallel for schedule(static)
        for (std::int64_t tap = 0; tap < K * K; ++tap) {
            const auto ky = tap / K;
            const auto kx = tap % K;
            double* wk = gw + tap * static_cast<std::int64_t>(ci_n * co_n);
            for (std::int64_t row = 0; row < rows; ++row) {
                const auto n = row / H;
                const auto y = row % H;
                const auto iy = y + ky - r;
                if (iy < 0 || iy >= H) continue;
                for (std::int64_t x = 0; x < W; ++x) {
                    const auto ix = x + kx - r;
                    if (ix < 0 || ix >= W) continue;
                    const double* src = in + ((n * H + iy) * W + ix) * static_cast<std::int64_t>(ci_n);
                    const double* g_row = go + (row * W + x) * static_cast<std::int64_t>(co_n);
                    for (std::size_t ci = 0; ci < ci_n; ++ci) {
                        const double a = src[ci];
                        double* wr = wk + ci * co_n;
#pragma omp simd
                        for (std::size_t co = 0; co < co_n; ++co) wr[co] += a * g_row[co];
                    }
                }
            }
        }
    }

    if (!grad_bias.empty()) {
        double* gb = grad_bias.data();
        const auto positions = static_cast<std::size_t>(rows * W);
        for (std::size_t p = 0; p < positions; ++p) {
            const double* g_row = go + p * co_n;
            for (std::size_t co = 0; co < co_n; ++co) gb[co] += g_row[co];
        }
    }
}

}  // namespace kernels

namespace reference {

namespace {

// Input value at (n, y, x, c) with zeros outside the field.
double padded(const ConvGeometry& g, std::span<const double> input, std::size_t n, std::int64_t y, std::int64_t x,
              std::size_t c) {
    if (y < 0 || x < 0 || y >= static_cast<std::int64_t>(g.height) || x >= static_cast<std::int64_t>(g.width))
        return 0.0;
    return input[((n * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)) * g.c_in + c];
}

}  // namespace

void conv2d_same_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weights,
                         std::span<const double> bias, std::span<double> out) {
    check(g);
    const auto r = static_cast<std::int64_t>(g.kernel / 2);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t y = 0; y < g.height; ++y)
            for (std::size_t x = 0; x < g.width; ++x)
                for (std::size_t o = 0; o < g.c_out; ++o) {
                    double acc = bias.empty() ? 0.0 : bias[o];
                    for (std::size_t ky = 0; ky < g.kernel; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel; ++kx)
                            for (std::size_t c = 0; c < g.c_in; ++c) {
                                const auto iy = static_cast<std::int64_t>(y + ky) - r;
                                const auto ix = static_cast<std::int64_t>(x + kx) - r;
                                acc += padded(g, input, n, iy, ix, c) *
                                       weights[((ky * g.kernel + kx) * g.c_in + c) * g.c_out + o];
                            }
                    out[((n * g.height + y) * g.width + x) * g.c_out + o] = acc;
                }
}

void conv2d_same_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_input) {
    check(g);
    const auto r = static_cast<std::int64_t>(g.kernel / 2);
    const auto H = static_cast<std::int64_t>(g.height);
    const auto W = static_cast<std::int64_t>(g.width);
    // Scatter form: every output position distributes its adjoint over its window.
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::size_t ky = 0; ky < g.kernel; ++ky)
                    for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                        const auto iy = y + static_cast<std::int64_t>(ky) - r;
                        const auto ix = x + static_cast<std::int64_t>(kx) - r;
                        if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                        for (std::size_t c = 0; c < g.c_in; ++c)
                            for (std::size_t o = 0; o < g.c_out; ++o)
                                grad_input[((n * g.height + static_cast<std::size_t>(iy)) * g.width +
                                            static_cast<std::size_t>(ix)) * g.c_in + c] +=
                                    grad_out[((n * g.height + static_cast<std::size_t>(y)) * g.width +
                                              static_cast<std::size_t>(x)) * g.c_out + o] *
                                    weights[((ky * g.kernel + kx) * g.c_in + c) * g.c_out + o];
                    }
}

void conv2d_same_backward_params(const ConvGeometry& g, std::span<const double> input,
                                 std::span<const double> grad_out, std::span<double> grad_weights,
                                 std::span<double> grad_bias) {
    check(g);
    const auto r = static_cast<std::int64_t>(g.kernel / 2);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t y = 0; y < g.height; ++y)
            for (std::size_t x = 0; x < g.width; ++x)
                for (std::size_t o = 0; o < g.c_out; ++o) {
                    const double go = grad_out[((n * g.height + y) * g.width + x) * g.c_out + o];
                    if (!grad_bias.empty()) grad_bias[o] += go;
                    if (grad_weights.empty()) continue;
                    for (std::size_t ky = 0; ky < g.kernel; ++ky)
                        for (std::size_t kx = 0; kx < g.kernel; ++kx)
                            for (std::size_t c = 0; c < g.c_in; ++c) {
                                const auto iy = static_cast<std::int64_t>(y + ky) - r;
                                const auto ix = static_cast<std::int64_t>(x + kx) - r;
                                grad_weights[((ky * g.kernel + kx) * g.c_in + c) * g.c_out + o] +=
                                    padded(g, input, n, iy, ix, c) * go;
                            }
                }
}

}  // namespace reference

}  // namespace aqcast
