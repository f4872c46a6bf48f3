#pragma once

// Convolution and pooling kernels over NCHW double buffers.
//
// Two implementations share every signature: `cafo::kernels::reference` holds
// plain serial loops that are easy to audit, and `cafo::kernels` holds the
// production path (im2col + GEMM for dense convolution, OpenMP over the batch).
// The reference versions exist for tests and the benchmark target.
//
// All parallel kernels reduce weight gradients per sample and then sum in
// sample order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace cafo::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t input_size() const { return batch * in_channels * height * width; }
    std::size_t output_size() const { return batch * out_channels * out_height() * out_width(); }
    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

/// Depthwise layout: `multiplier` filters per input channel, output channel
/// `g * channels + c` reads input channel `c`.
struct DepthwiseGeometry {
    std::size_t batch = 1;
    std::size_t channels = 1;
    std::size_t multiplier = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_channels() const { return channels * multiplier; }
    std::size_t out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    std::size_t out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t input_size() const { return batch * channels * height * width; }
    std::size_t output_size() const { return batch * out_channels() * out_height() * out_width(); }
    std::size_t weight_size() const { return out_channels() * kernel * kernel; }
};

// Backward functions: `dx` may be empty when the input gradient is not needed.
// `dw`/`db` are overwritten, `dx` is overwritten.

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

void depthwise_forward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                       std::span<const double> b, std::span<double> y);
void depthwise_backward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> db);

/// Global pooling over H*W for each of `planes` = batch*channels planes.
void global_avg_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y);
/// Writes the first-index argmax of each plane to `argmax`.
void global_max_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y,
                     std::span<std::size_t> argmax);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y);
void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

void depthwise_forward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                       std::span<const double> b, std::span<double> y);
void depthwise_backward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> db);

void global_avg_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y);
void global_max_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y,
                     std::span<std::size_t> argmax);

} // namespace reference

/// Number of OpenMP threads the parallel kernels use (1 when built without OpenMP).
int max_threads();
/// Sets the OpenMP thread count for subsequent kernel calls; 0 restores the default.
void set_threads(int n);

} // namespace cafo::kernels
