#pragma once

#include <cstddef>
#include <span>

namespace aqcast {

/// Geometry of a "same" zero-padded 2-D convolution over (batch, y, x, c)
/// row-major data. `batch` is the product of all leading axes.
struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t c_in = 1;
    std::size_t c_out = 1;
    std::size_t kernel = 1;  // odd

    std::size_t input_size() const { return batch * height * width * c_in; }
    std::size_t output_size() const { return batch * height * width * c_out; }
    std::size_t weight_size() const { return kernel * kernel * c_in * c_out; }
};

// OpenMP-parallel kernels. Each output element is produced by exactly one
// thread in a fixed summation order, so results do not depend on the thread
// count.
namespace kernels {

// out = conv(input, weights) + bias. `bias` may be empty.
void conv2d_same_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weights,
                         std::span<const double> bias, std::span<double> out);

// grad_input += d(out)/d(input)^T grad_out
void conv2d_same_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_input);

// grad_weights += ..., grad_bias += sum of grad_out over positions. Either
// output span may be empty to skip it.
void conv2d_same_backward_params(const ConvGeometry& g, std::span<const double> input,
                                 std::span<const double> grad_out, std::span<double> grad_weights,
                                 std::span<double> grad_bias);

}  // namespace kernels

// Straightforward serial versions of the kernels above, kept as the
// reference for tests and the benchmark.
namespace reference {

void conv2d_same_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> weights,
                         std::span<const double> bias, std::span<double> out);
void conv2d_same_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                                std::span<const double> weights, std::span<double> grad_input);
void conv2d_same_backward_params(const ConvGeometry& g, std::span<const double> input,
                                 std::span<const double> grad_out, std::span<double> grad_weights,
                                 std::span<double> grad_bias);

}  // namespace reference

}  // namespace aqcast
