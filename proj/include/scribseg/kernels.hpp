#pragma once

#include <cstddef>
#include <span>

// Dense NCHW kernels behind the network layers.
//
// Every kernel parallelizes over independent output planes with OpenMP and
// keeps the per-plane reduction order fixed, so results do not depend on the
// thread count. The `reference` namespace holds straightforward loop nests
// used only by tests and benchmarks to check the optimized versions.
namespace scribseg::kernels {

struct ConvShape {
    int batch = 1;
    int in_channels = 1;
    int out_channels = 1;
    int height = 1;
    int width = 1;
    int kernel = 3;  // odd; "same" zero padding of kernel/2, stride 1

    std::size_t in_size() const { return static_cast<std::size_t>(batch) * in_channels * height * width; }
    std::size_t out_size() const { return static_cast<std::size_t>(batch) * out_channels * height * width; }
    std::size_t weight_size() const { return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel; }
};

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
/// dx is overwritten.
void conv2d_backward_input(const ConvShape& s, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
/// dw and dbias are accumulated into.
void conv2d_backward_weight(const ConvShape& s, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias);

/// 2x2 stride-2 transposed convolution; `height`/`width` are the input dims,
/// output is (batch, out_channels, 2h, 2w). Weight layout (in, out, 2, 2).
void upconv2x2_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                       std::span<const double> bias, std::span<double> y);
void upconv2x2_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> dbias);

namespace reference {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvShape& s, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx);
void conv2d_backward_weight(const ConvShape& s, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias);

}  // namespace reference

/// Thread count used by the parallel kernels (0 = OpenMP default).
void set_num_threads(int n);
int num_threads();

}  // namespace scribseg::kernels
