#include "cafo/kernels.hpp"

#include <algorithm>

namespace cafo::kernels::reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y)
{
    const std::size_t oh = g.out_height(), ow = g.out_width();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b.empty() ? 0.0 : b[co];
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ki = 0; ki < g.kernel; ++ki)
                            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                                const long r = long(i * g.stride + ki) - long(g.pad);
                                const long c = long(j * g.stride + kj) - long(g.pad);
                                if (r < 0 || c < 0 || r >= long(g.height) || c >= long(g.width)) continue;
                                acc += w[((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj] *
                                       x[((n * g.in_channels + ci) * g.height + r) * g.width + c];
                            }
                    y[((n * g.out_channels + co) * oh + i) * ow + j] = acc;
                }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db)
{
    const std::size_t oh = g.out_height(), ow = g.out_width();
    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t co = 0; co < g.out_channels; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const double go = dy[((n * g.out_channels + co) * oh + i) * ow + j];
                    if (!db.empty()) db[co] += go;
                    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::size_t ki = 0; ki < g.kernel; ++ki)
                            for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                                const long r = long(i * g.stride + ki) - long(g.pad);
                                const long c = long(j * g.stride + kj) - long(g.pad);
                                if (r < 0 || c < 0 || r >= long(g.height) || c >= long(g.width)) continue;
                                const std::size_t wi = ((co * g.in_channels + ci) * g.kernel + ki) * g.kernel + kj;
                                const std::size_t xi = ((n * g.in_channels + ci) * g.height + r) * g.width + c;
                                dw[wi] += go * x[xi];
                                if (!dx.empty()) dx[xi] += go * w[wi];
                            }
                }
}

void depthwise_forward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                       std::span<const double> b, std::span<double> y)
{
    const std::size_t oh = g.out_height(), ow = g.out_width(), oc = g.out_channels();
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < oc; ++o) {
            const std::size_t c = o % g.channels;
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = b.empty() ? 0.0 : b[o];
                    for (std::size_t ki = 0; ki < g.kernel; ++ki)
                        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                            const long r = long(i * g.stride + ki) - long(g.pad);
                            const long cc = long(j * g.stride + kj) - long(g.pad);
                            if (r < 0 || cc < 0 || r >= long(g.height) || cc >= long(g.width)) continue;
                            acc += w[(o * g.kernel + ki) * g.kernel + kj] *
                                   x[((n * g.channels + c) * g.height + r) * g.width + cc];
                        }
                    y[((n * oc + o) * oh + i) * ow + j] = acc;
                }
        }
}

void depthwise_backward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> db)
{
    const std::size_t oh = g.out_height(), ow = g.out_width(), oc = g.out_channels();
    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < oc; ++o) {
            const std::size_t c = o % g.channels;
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const double go = dy[((n * oc + o) * oh + i) * ow + j];
                    if (!db.empty()) db[o] += go;
                    for (std::size_t ki = 0; ki < g.kernel; ++ki)
                        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                            const long r = long(i * g.stride + ki) - long(g.pad);
                            const long cc = long(j * g.stride + kj) - long(g.pad);
                            if (r < 0 || cc < 0 || r >= long(g.height) || cc >= long(g.width)) continue;
                            const std::size_t wi = (o * g.kernel + ki) * g.kernel + kj;
                            const std::size_t xi = ((n * g.channels + c) * g.height + r) * g.width + cc;
                            dw[wi] += go * x[xi];
                            if (!dx.empty()) dx[xi] += go * w[wi];
                        }
                }
        }
}

void global_avg_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y)
{
    for (std::size_t p = 0; p < planes; ++p) {
        double s = 0.0;
        for (std::size_t k = 0; k < area; ++k) s += x[p * area + k];
        y[p] = s / double(area);
    }
}

void global_max_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y,
                     std::span<std::size_t> argmax)
{
    for (std::size_t p = 0; p < planes; ++p) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < area; ++k)
            if (x[p * area + k] > x[p * area + best]) best = k;
        y[p] = x[p * area + best];
        argmax[p] = best;
    }
}

} // namespace cafo::kernels::reference
