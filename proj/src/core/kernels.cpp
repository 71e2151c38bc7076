#include "balign/kernels.hpp"

#include <algorithm>

// GEMMs stay single-threaded; OpenMP covers im2col/col2im.
#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include "balign/errors.hpp"

namespace balign::kernels {

Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, int stride, int padding) {
  if (input.size() != 4) throw DimensionError("conv2d input must be NCHW, got " + shape_str(input));
  if (kernel.size() != 4) throw DimensionError("conv2d kernel must be OCkhkw, got " + shape_str(kernel));
  if (input[1] != kernel[1]) {
    throw DimensionError("conv2d channel mismatch: input " + shape_str(input) + " kernel " + shape_str(kernel));
  }
  if (stride < 1) throw DimensionError("conv2d stride must be >= 1");
  if (padding < 0) throw DimensionError("conv2d padding must be >= 0");
  Conv2dGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = stride;
  g.padding = padding;
  if (g.kernel_h > g.in_h + 2 * padding || g.kernel_w > g.in_w + 2 * padding) {
    throw DimensionError("conv2d kernel " + shape_str(kernel) + " larger than padded input " + shape_str(input));
  }
  g.out_h = (g.in_h + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.in_w + 2 * padding - g.kernel_w) / stride + 1;
  return g;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Unrolls receptive fields into a [C*KH*KW, N*OH*OW] row-major matrix.
RowMat im2col(const Conv2dGeometry& g, const double* input) {
  const int C = g.in_channels, H = g.in_h, W = g.in_w, KH = g.kernel_h, KW = g.kernel_w;
  const int S = g.stride, P = g.padding, OH = g.out_h, OW = g.out_w;
  const std::size_t plane = static_cast<std::size_t>(OH) * OW;
  const std::size_t cols = plane * g.batch;
  RowMat col(static_cast<Eigen::Index>(C) * KH * KW, static_cast<Eigen::Index>(cols));
  double* base = col.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < C; ++c) {
    for (int n = 0; n < g.batch; ++n) {
      const double* ip = input + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int ki = 0; ki < KH; ++ki) {
        for (int kj = 0; kj < KW; ++kj) {
          const std::size_t row = (static_cast<std::size_t>(c) * KH + ki) * KW + kj;
          double* dst = base + row * cols + n * plane;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * S + ki - P;
            double* drow = dst + static_cast<std::size_t>(oy) * OW;
            if (iy < 0 || iy >= H) {
              std::fill(drow, drow + OW, 0.0);
              continue;
            }
            const double* irow = ip + static_cast<std::size_t>(iy) * W;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * S + kj - P;
              drow[ox] = (ix >= 0 && ix < W) ? irow[ix] : 0.0;
            }
          }
        }
      }
    }
  }
  return col;
}

// Adds a [C*KH*KW, N*OH*OW] column-gradient matrix back onto NCHW input grads.
void col2im_add(const Conv2dGeometry& g, const RowMat& col, double* grad_input) {
  const int C = g.in_channels, H = g.in_h, W = g.in_w, KH = g.kernel_h, KW = g.kernel_w;
  const int S = g.stride, P = g.padding, OH = g.out_h, OW = g.out_w;
  const std::size_t plane = static_cast<std::size_t>(OH) * OW;
  const std::size_t cols = plane * g.batch;
  const double* base = col.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n) {
    for (int c = 0; c < C; ++c) {
      double* gp = grad_input + (static_cast<std::size_t>(n) * C + c) * H * W;
      for (int ki = 0; ki < KH; ++ki) {
        for (int kj = 0; kj < KW; ++kj) {
          const std::size_t row = (static_cast<std::size_t>(c) * KH + ki) * KW + kj;
          const double* src = base + row * cols + n * plane;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * S + ki - P;
            if (iy < 0 || iy >= H) continue;
            double* grow = gp + static_cast<std::size_t>(iy) * W;
            const double* srow = src + static_cast<std::size_t>(oy) * OW;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * S + kj - P;
              if (ix >= 0 && ix < W) grow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// NOHW -> [O, N*OH*OW]
RowMat gather_channels(const Conv2dGeometry& g, const double* grad_out) {
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  RowMat m(g.out_channels, static_cast<Eigen::Index>(plane * g.batch));
#pragma omp parallel for collapse(2) schedule(static)
  for (int o = 0; o < g.out_channels; ++o)
    for (int n = 0; n < g.batch; ++n) {
      const double* src = grad_out + (static_cast<std::size_t>(n) * g.out_channels + o) * plane;
      std::copy(src, src + plane, m.data() + o * plane * g.batch + n * plane);
    }
  return m;
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out) {
  const Eigen::Index O = g.out_channels, CKK = static_cast<Eigen::Index>(g.in_channels) * g.kernel_h * g.kernel_w;
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  const RowMat col = im2col(g, input.data());
  RowMat prod(O, col.cols());
  prod.noalias() = ConstMap(kernel.data(), O, CKK) * col;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o) {
      const double* src = prod.data() + o * plane * g.batch + n * plane;
      double* dst = out.data() + (static_cast<std::size_t>(n) * g.out_channels + o) * plane;
      const double b = bias.empty() ? 0.0 : bias[o];
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
    }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> kernel,
                           std::span<double> grad_input) {
  const Eigen::Index O = g.out_channels, CKK = static_cast<Eigen::Index>(g.in_channels) * g.kernel_h * g.kernel_w;
  const RowMat go = gather_channels(g, grad_out.data());
  RowMat colgrad(CKK, go.cols());
  colgrad.noalias() = ConstMap(kernel.data(), O, CKK).transpose() * go;
  col2im_add(g, colgrad, grad_input.data());
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> input,
                            std::span<double> grad_kernel, std::span<double> grad_bias) {
  const Eigen::Index O = g.out_channels, CKK = static_cast<Eigen::Index>(g.in_channels) * g.kernel_h * g.kernel_w;
  const RowMat go = gather_channels(g, grad_out.data());
  const RowMat col = im2col(g, input.data());
  MutMap(grad_kernel.data(), O, CKK).noalias() += go * col.transpose();
  if (!grad_bias.empty()) {
    for (Eigen::Index o = 0; o < O; ++o) grad_bias[o] += go.row(o).sum();
  }
}

void maxpool2_forward(int planes, int h, int w, std::span<const double> input, std::span<double> out,
                      std::span<std::int64_t> argmax) {
  const int oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const std::size_t in_base = static_cast<std::size_t>(p) * h * w;
    const std::size_t out_base = static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::size_t best = in_base + static_cast<std::size_t>(2 * y) * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand) {
          if (input[idx] > input[best]) best = idx;
        }
        out[out_base + static_cast<std::size_t>(y) * ow + x] = input[best];
        argmax[out_base + static_cast<std::size_t>(y) * ow + x] = static_cast<std::int64_t>(best);
      }
    }
  }
}

void maxpool2_backward(std::span<const double> grad_out, std::span<const std::int64_t> argmax,
                       std::span<double> grad_input) {
  // Pooling windows do not overlap, so each input index appears at most once.
  const std::int64_t n = static_cast<std::int64_t>(grad_out.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) grad_input[argmax[i]] += grad_out[i];
}

void upsample2_forward(int planes, int h, int w, std::span<const double> input, std::span<double> out) {
  const int oh = 2 * h, ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* ip = input.data() + static_cast<std::size_t>(p) * h * w;
    double* op = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const double* irow = ip + static_cast<std::size_t>(y / 2) * w;
      double* orow = op + static_cast<std::size_t>(y) * ow;
      for (int x = 0; x < ow; ++x) orow[x] = irow[x / 2];
    }
  }
}

void upsample2_backward(int planes, int h, int w, std::span<const double> grad_out, std::span<double> grad_input) {
  const int ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* gop = grad_out.data() + static_cast<std::size_t>(p) * 4 * h * w;
    double* gp = grad_input.data() + static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y) {
      const double* r0 = gop + static_cast<std::size_t>(2 * y) * ow;
      const double* r1 = r0 + ow;
      for (int x = 0; x < w; ++x) {
        gp[static_cast<std::size_t>(y) * w + x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
      }
    }
  }
}

namespace reference {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> out) {
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel_h; ++ki)
              for (int kj = 0; kj < g.kernel_w; ++kj) {
                const int iy = oy * g.stride + ki - g.padding;
                const int ix = ox * g.stride + kj - g.padding;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                acc += kernel[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] *
                       input[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
          out[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] = acc;
        }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> kernel,
                           std::span<double> grad_input) {
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const double go = grad_out[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_h + oy) * g.out_w + ox];
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel_h; ++ki)
              for (int kj = 0; kj < g.kernel_w; ++kj) {
                const int iy = oy * g.stride + ki - g.padding;
                const int ix = ox * g.stride + kj - g.padding;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                grad_input[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h + iy) * g.in_w + ix] +=
                    go * kernel[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
              }
        }
}

void conv2d_backward_kernel(const Conv2dGeometry& g, std::span<const double> grad_out, std::span<const double> input,
                            std::span<double> grad_kernel, std::span<double> grad_bias) {
  for (int n = 0; n < g.batch; ++n)
    for (int o = 0; o < g.out_channels; ++o)
      for (int oy = 0; oy < g.out_h; ++oy)
        for (int ox = 0; ox < g.out_w; ++ox) {
          const double go = grad_out[((static_cast<std::size_t>(n) * g.out_channels + o) * g.out_h + oy) * g.out_w + ox];
          if (!grad_bias.empty()) grad_bias[o] += go;
          for (int c = 0; c < g.in_channels; ++c)
            for (int ki = 0; ki < g.kernel_h; ++ki)
              for (int kj = 0; kj < g.kernel_w; ++kj) {
                const int iy = oy * g.stride + ki - g.padding;
                const int ix = ox * g.stride + kj - g.padding;
                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                grad_kernel[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] +=
                    go * input[((static_cast<std::size_t>(n) * g.in_channels + c) * g.in_h + iy) * g.in_w + ix];
              }
        }
}

}  // namespace reference

}  // namespace balign::kernels
