#include "scribseg/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace scribseg::kernels {

namespace {

int g_threads = 0;

int thread_count() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

// Copies (planes, h, w) into (planes, h+2p, w+2p) with a zero border.
std::vector<double> pad_planes(std::span<const double> src, std::size_t planes, int h, int w, int p) {
    const int hp = h + 2 * p, wp = w + 2 * p;
    std::vector<double> out(planes * hp * wp, 0.0);
    for (std::size_t pl = 0; pl < planes; ++pl)
        for (int r = 0; r < h; ++r) {
            const double* s = src.data() + (pl * h + r) * w;
            std::copy(s, s + w, out.data() + (pl * hp + r + p) * wp + p);
        }
    return out;
}

// One output plane: y = bias + sum_i corr(xpad_i, w_i). xpad holds `in` padded
// planes; w holds in*K*K taps for this output.
template <int K>
void correlate_plane(int h, int w, int in, const double* xpad, const double* taps, double bias, double* y) {
    const int wp = w + K - 1;
    const int hp = h + K - 1;
    std::fill(y, y + static_cast<std::size_t>(h) * w, bias);
    for (int i = 0; i < in; ++i) {
        const double* xp = xpad + static_cast<std::size_t>(i) * hp * wp;
        const double* t = taps + i * K * K;
        for (int r = 0; r < h; ++r) {
            double* yr = y + static_cast<std::size_t>(r) * w;
            if constexpr (K == 3) {
                const double* x0 = xp + static_cast<std::size_t>(r) * wp;
                const double* x1 = x0 + wp;
                const double* x2 = x1 + wp;
                const double t0 = t[0], t1 = t[1], t2 = t[2], t3 = t[3], t4 = t[4], t5 = t[5], t6 = t[6],
                             t7 = t[7], t8 = t[8];
#pragma omp simd
                for (int c = 0; c < w; ++c) {
                    double acc = yr[c];
                    acc += t0 * x0[c];
                    acc += t1 * x0[c + 1];
                    acc += t2 * x0[c + 2];
                    acc += t3 * x1[c];
                    acc += t4 * x1[c + 1];
                    acc += t5 * x1[c + 2];
                    acc += t6 * x2[c];
                    acc += t7 * x2[c + 1];
                    acc += t8 * x2[c + 2];
                    yr[c] = acc;
                }
            } else {
                for (int ky = 0; ky < K; ++ky) {
                    const double* xr = xp + static_cast<std::size_t>(r + ky) * wp;
                    for (int kx = 0; kx < K; ++kx) {
                        const double tv = t[ky * K + kx];
#pragma omp simd
                        for (int c = 0; c < w; ++c) yr[c] += tv * xr[c + kx];
                    }
                }
            }
        }
    }
}

template <int K>
void conv_forward_impl(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                       std::span<const double> bias, std::span<double> y) {
    constexpr int p = K / 2;
    const auto xpad = pad_planes(x, static_cast<std::size_t>(s.batch) * s.in_channels, s.height, s.width, p);
    const std::size_t in_block = static_cast<std::size_t>(s.in_channels) * (s.height + 2 * p) * (s.width + 2 * p);
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
    const int jobs = s.batch * s.out_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < jobs; ++job) {
        const int n = job / s.out_channels;
        const int o = job % s.out_channels;
        correlate_plane<K>(s.height, s.width, s.in_channels, xpad.data() + n * in_block,
                           w.data() + static_cast<std::size_t>(o) * s.in_channels * K * K, bias[o],
                           y.data() + static_cast<std::size_t>(job) * plane);
    }
}

template <int K>
void conv_backward_input_impl(const ConvShape& s, std::span<const double> dy, std::span<const double> w,
                              std::span<double> dx) {
    constexpr int p = K / 2;
    const int pad = K - 1 - p;
    const auto dypad = pad_planes(dy, static_cast<std::size_t>(s.batch) * s.out_channels, s.height, s.width, pad);
    const std::size_t out_block =
        static_cast<std::size_t>(s.out_channels) * (s.height + 2 * pad) * (s.width + 2 * pad);
    const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;

    // Flipped taps gathered per input channel: flipped[i][o][k].
    std::vector<double> flipped(static_cast<std::size_t>(s.in_channels) * s.out_channels * K * K);
    for (int i = 0; i < s.in_channels; ++i)
        for (int o = 0; o < s.out_channels; ++o)
            for (int k = 0; k < K * K; ++k)
                flipped[(static_cast<std::size_t>(i) * s.out_channels + o) * K * K + k] =
                    w[(static_cast<std::size_t>(o) * s.in_channels + i) * K * K + (K * K - 1 - k)];

    const int jobs = s.batch * s.in_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < jobs; ++job) {
        const int n = job / s.in_channels;
        const int i = job % s.in_channels;
        correlate_plane<K>(s.height, s.width, s.out_channels, dypad.data() + n * out_block,
                           flipped.data() + static_cast<std::size_t>(i) * s.out_channels * K * K, 0.0,
                           dx.data() + static_cast<std::size_t>(job) * plane);
    }
}

template <int K>
void conv_backward_weight_impl(const ConvShape& s, std::span<const double> x, std::span<const double> dy,
                               std::span<double> dw, std::span<double> dbias) {
    constexpr int p = K / 2;
    const int h = s.height, w = s.width;
    const int hp = h + 2 * p, wp = w + 2 * p;
    const auto xpad = pad_planes(x, static_cast<std::size_t>(s.batch) * s.in_channels, h, w, p);
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    const int jobs = s.out_channels * s.in_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < jobs; ++job) {
        const int o = job / s.in_channels;
        const int i = job % s.in_channels;
        // Per-lane partial sums keep the inner loop vectorizable without
        // reassociating a scalar reduction.
        std::vector<double> lanes(static_cast<std::size_t>(K * K) * w, 0.0);
        for (int n = 0; n < s.batch; ++n) {
            const double* g = dy.data() + (static_cast<std::size_t>(n) * s.out_channels + o) * plane;
            const double* xp = xpad.data() + (static_cast<std::size_t>(n) * s.in_channels + i) * hp * wp;
            for (int r = 0; r < h; ++r) {
                const double* gr = g + static_cast<std::size_t>(r) * w;
                for (int ky = 0; ky < K; ++ky) {
                    const double* xr = xp + static_cast<std::size_t>(r + ky) * wp;
                    for (int kx = 0; kx < K; ++kx) {
                        double* lane = lanes.data() + static_cast<std::size_t>(ky * K + kx) * w;
#pragma omp simd
                        for (int c = 0; c < w; ++c) lane[c] += gr[c] * xr[c + kx];
                    }
                }
            }
        }
        double* out = dw.data() + static_cast<std::size_t>(job) * K * K;
        for (int k = 0; k < K * K; ++k) {
            double acc = 0.0;
            for (int c = 0; c < w; ++c) acc += lanes[static_cast<std::size_t>(k) * w + c];
            out[k] += acc;
        }
    }

    for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0.0;
        for (int n = 0; n < s.batch; ++n) {
            const double* g = dy.data() + (static_cast<std::size_t>(n) * s.out_channels + o) * plane;
            for (std::size_t q = 0; q < plane; ++q) acc += g[q];
        }
        dbias[o] += acc;
    }
}

}  // namespace

void set_num_threads(int n) { g_threads = std::max(0, n); }

int num_threads() { return thread_count(); }

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
    switch (s.kernel) {
        case 1: return conv_forward_impl<1>(s, x, w, bias, y);
        case 3: return conv_forward_impl<3>(s, x, w, bias, y);
        default: return reference::conv2d_forward(s, x, w, bias, y);
    }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
    switch (s.kernel) {
        case 1: return conv_backward_input_impl<1>(s, dy, w, dx);
        case 3: return conv_backward_input_impl<3>(s, dy, w, dx);
        default: return reference::conv2d_backward_input(s, dy, w, dx);
    }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias) {
    switch (s.kernel) {
        case 1: return conv_backward_weight_impl<1>(s, x, dy, dw, dbias);
        case 3: return conv_backward_weight_impl<3>(s, x, dy, dw, dbias);
        default: return reference::conv2d_backward_weight(s, x, dy, dw, dbias);
    }
}

void upconv2x2_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                       std::span<const double> bias, std::span<double> y) {
    const int h = s.height, wd = s.width, oh = 2 * h, ow = 2 * wd;
    const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
    const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
    const int jobs = s.batch * s.out_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < jobs; ++job) {
        const int n = job / s.out_channels;
        const int o = job % s.out_channels;
        double* yp = y.data() + static_cast<std::size_t>(job) * out_plane;
        std::fill(yp, yp + out_plane, bias[o]);
        for (int i = 0; i < s.in_channels; ++i) {
            const double* xp = x.data() + (static_cast<std::size_t>(n) * s.in_channels + i) * in_plane;
            const double* t = w.data() + (static_cast<std::size_t>(i) * s.out_channels + o) * 4;
            for (int r = 0; r < h; ++r) {
                double* y0 = yp + static_cast<std::size_t>(2 * r) * ow;
                double* y1 = y0 + ow;
                const double* xr = xp + static_cast<std::size_t>(r) * wd;
                for (int c = 0; c < wd; ++c) {
                    const double v = xr[c];
                    y0[2 * c] += v * t[0];
                    y0[2 * c + 1] += v * t[1];
                    y1[2 * c] += v * t[2];
                    y1[2 * c + 1] += v * t[3];
                }
            }
        }
    }
}

void upconv2x2_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> dbias) {
    const int h = s.height, wd = s.width, ow = 2 * wd;
    const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
    const std::size_t out_plane = in_plane * 4;

    const int dx_jobs = s.batch * s.in_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < dx_jobs; ++job) {
        const int n = job / s.in_channels;
        const int i = job % s.in_channels;
        double* dxp = dx.data() + static_cast<std::size_t>(job) * in_plane;
        std::fill(dxp, dxp + in_plane, 0.0);
        for (int o = 0; o < s.out_channels; ++o) {
            const double* g = dy.data() + (static_cast<std::size_t>(n) * s.out_channels + o) * out_plane;
            const double* t = w.data() + (static_cast<std::size_t>(i) * s.out_channels + o) * 4;
            for (int r = 0; r < h; ++r) {
                const double* g0 = g + static_cast<std::size_t>(2 * r) * ow;
                const double* g1 = g0 + ow;
                double* d = dxp + static_cast<std::size_t>(r) * wd;
                for (int c = 0; c < wd; ++c)
                    d[c] += g0[2 * c] * t[0] + g0[2 * c + 1] * t[1] + g1[2 * c] * t[2] + g1[2 * c + 1] * t[3];
            }
        }
    }

    const int dw_jobs = s.in_channels * s.out_channels;
#pragma omp parallel for schedule(static) num_threads(thread_count())
    for (int job = 0; job < dw_jobs; ++job) {
        const int i = job / s.out_channels;
        const int o = job % s.out_channels;
        double acc[4] = {0, 0, 0, 0};
        for (int n = 0; n < s.batch; ++n) {
            const double* xp = x.data() + (static_cast<std::size_t>(n) * s.in_channels + i) * in_plane;
            const double* g = dy.data() + (static_cast<std::size_t>(n) * s.out_channels + o) * out_plane;
            for (int r = 0; r < h; ++r) {
                const double* g0 = g + static_cast<std::size_t>(2 * r) * ow;
                const double* g1 = g0 + ow;
                const double* xr = xp + static_cast<std::size_t>(r) * wd;
                for (int c = 0; c < wd; ++c) {
                    acc[0] += xr[c] * g0[2 * c];
                    acc[1] += xr[c] * g0[2 * c + 1];
                    acc[2] += xr[c] * g1[2 * c];
                    acc[3] += xr[c] * g1[2 * c + 1];
                }
            }
        }
        for (int k = 0; k < 4; ++k) dw[static_cast<std::size_t>(job) * 4 + k] += acc[k];
    }

    for (int o = 0; o < s.out_channels; ++o) {
        double acc = 0.0;
        for (int n = 0; n < s.batch; ++n) {
            const double* g = dy.data() + (static_cast<std::size_t>(n) * s.out_channels + o) * out_plane;
            for (std::size_t q = 0; q < out_plane; ++q) acc += g[q];
        }
        dbias[o] += acc;
    }
}

namespace reference {

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
    const int K = s.kernel, p = K / 2, H = s.height, W = s.width;
    for (int n = 0; n < s.batch; ++n)
        for (int o = 0; o < s.out_channels; ++o)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    double acc = bias[o];
                    for (int i = 0; i < s.in_channels; ++i)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int rr = r + ky - p, cc = c + kx - p;
                                if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
                                acc += w[((static_cast<std::size_t>(o) * s.in_channels + i) * K + ky) * K + kx] *
                                       x[((static_cast<std::size_t>(n) * s.in_channels + i) * H + rr) * W + cc];
                            }
                    y[((static_cast<std::size_t>(n) * s.out_channels + o) * H + r) * W + c] = acc;
                }
}

void conv2d_backward_input(const ConvShape& s, std::span<const double> dy, std::span<const double> w,
                           std::span<double> dx) {
    const int K = s.kernel, p = K / 2, H = s.height, W = s.width;
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int n = 0; n < s.batch; ++n)
        for (int o = 0; o < s.out_channels; ++o)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const double g = dy[((static_cast<std::size_t>(n) * s.out_channels + o) * H + r) * W + c];
                    for (int i = 0; i < s.in_channels; ++i)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int rr = r + ky - p, cc = c + kx - p;
                                if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
                                dx[((static_cast<std::size_t>(n) * s.in_channels + i) * H + rr) * W + cc] +=
                                    g * w[((static_cast<std::size_t>(o) * s.in_channels + i) * K + ky) * K + kx];
                            }
                }
}

void conv2d_backward_weight(const ConvShape& s, std::span<const double> x, std::span<const double> dy,
                            std::span<double> dw, std::span<double> dbias) {
    const int K = s.kernel, p = K / 2, H = s.height, W = s.width;
    for (int n = 0; n < s.batch; ++n)
        for (int o = 0; o < s.out_channels; ++o)
            for (int r = 0; r < H; ++r)
                for (int c = 0; c < W; ++c) {
                    const double g = dy[((static_cast<std::size_t>(n) * s.out_channels + o) * H + r) * W + c];
                    dbias[o] += g;
                    for (int i = 0; i < s.in_channels; ++i)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int rr = r + ky - p, cc = c + kx - p;
                                if (rr < 0 || cc < 0 || rr >= H || cc >= W) continue;
                                dw[((static_cast<std::size_t>(o) * s.in_channels + i) * K + ky) * K + kx] +=
                                    g * x[((static_cast<std::size_t>(n) * s.in_channels + i) * H + rr) * W + cc];
                            }
                }
}

}  // namespace reference

}  // namespace scribseg::kernels
