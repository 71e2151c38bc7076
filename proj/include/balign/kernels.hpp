#pragma once

#include <cstdint>
#include <span>

#include "balign/tensor.hpp"

// Compute kernels behind the differentiable ops. Every kernel in the top-level
// namespace is OpenMP-parallel; `reference` holds plain serial versions kept
// for equivalence tests and the benchmark. Parallel kernels assign each output
// element to exactly one thread, so results are bit-identical for any thread
// count.
namespace balign::kernels {

struct Conv2dGeometry {
  int batch = 0, in_channels = 0, in_h = 0, in_w = 0;
  int out_channels = 0, kernel_h = 0, kernel_w = 0;
  int stride = 1, padding = 0;
  int out_h = 0, out_w = 0;

  Shape output_shape() const { return {batch, out_channels, out_h, out_w}; }
};

// Validates NCHW input against an OCkhkw kernel; throws DimensionError.
Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int stride, int padding);

// Cross-correlation. `bias` may be empty. `out` is overwritten.
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out);
// Accumulates into grad_input.
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> kernel,
                           std::span<double> grad_input);
// Accumulates into grad_kernel and (if non-empty) grad_bias.
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> input,
                            std::span<double> grad_kernel, std::span<double> grad_bias);

// 2x2/stride-2 max pooling over `planes` planes of h x w (h, w even).
// `argmax` receives the flat input index chosen for each output element.
void maxpool2_forward(int planes, int h, int w, std::span<const double> input, std::span<double> out,
                      std::span<std::int64_t> argmax);
void maxpool2_backward(std::span<const double> grad_out, std::span<const std::int64_t> argmax,
                       std::span<double> grad_input);

// Nearest-neighbour x2 upsampling over `planes` planes of h x w.
void upsample2_forward(int planes, int h, int w, std::span<const double> input, std::span<double> out);
void upsample2_backward(int planes, int h, int w, std::span<const double> grad_out, std::span<double> grad_input);

namespace reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> kernel,
                           std::span<double> grad_input);
void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> input,
                            std::span<double> grad_kernel, std::span<double> grad_bias);

}  // namespace reference

}  // namespace balign::kernels
