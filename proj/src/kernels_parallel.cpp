#include "cafo/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cafo::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

// cols is (in_channels*k*k) x (oh*ow), row-major.
void im2col(const ConvGeometry& g, const double* x, double* cols)
{
    const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                double* row = cols + ((ci * k + ki) * k + kj) * oh * ow;
                const double* plane = x + ci * g.height * g.width;
                for (std::size_t i = 0; i < oh; ++i) {
                    const long r = long(i * g.stride + ki) - long(g.pad);
                    double* out = row + i * ow;
                    if (r < 0 || r >= long(g.height)) {
                        std::fill(out, out + ow, 0.0);
                        continue;
                    }
                    const double* src = plane + r * g.width;
                    for (std::size_t j = 0; j < ow; ++j) {
                        const long c = long(j * g.stride + kj) - long(g.pad);
                        out[j] = (c < 0 || c >= long(g.width)) ? 0.0 : src[c];
                    }
                }
            }
}

void col2im(const ConvGeometry& g, const double* cols, double* dx)
{
    const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
    std::fill(dx, dx + g.in_channels * g.height * g.width, 0.0);
    for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj) {
                const double* row = cols + ((ci * k + ki) * k + kj) * oh * ow;
                double* plane = dx + ci * g.height * g.width;
                for (std::size_t i = 0; i < oh; ++i) {
                    const long r = long(i * g.stride + ki) - long(g.pad);
                    if (r < 0 || r >= long(g.height)) continue;
                    double* dst = plane + r * g.width;
                    const double* in = row + i * ow;
                    for (std::size_t j = 0; j < ow; ++j) {
                        const long c = long(j * g.stride + kj) - long(g.pad);
                        if (c >= 0 && c < long(g.width)) dst[c] += in[j];
                    }
                }
            }
}

// Accumulates one depthwise plane: y += w (*) x over valid taps.
void depthwise_plane(const DepthwiseGeometry& g, const double* x, const double* w, double* y)
{
    const std::size_t oh = g.out_height(), ow = g.out_width();
    for (std::size_t ki = 0; ki < g.kernel; ++ki)
        for (std::size_t kj = 0; kj < g.kernel; ++kj) {
            const double wv = w[ki * g.kernel + kj];
            for (std::size_t i = 0; i < oh; ++i) {
                const long r = long(i * g.stride + ki) - long(g.pad);
                if (r < 0 || r >= long(g.height)) continue;
                const double* src = x + r * g.width;
                double* out = y + i * ow;
                // valid j: 0 <= j*stride + kj - pad < width
                const long lo_num = long(g.pad) - long(kj);
                std::size_t j0 = lo_num <= 0 ? 0 : std::size_t((lo_num + long(g.stride) - 1) / long(g.stride));
                const long hi = long(g.width) - 1 + long(g.pad) - long(kj);
                if (hi < 0) continue;
                std::size_t j1 = std::min<std::size_t>(ow, std::size_t(hi) / g.stride + 1);
                if (g.stride == 1) {
                    const double* s = src + (long(j0) + long(kj) - long(g.pad));
                    for (std::size_t j = j0; j < j1; ++j) out[j] += wv * s[j - j0];
                } else {
                    for (std::size_t j = j0; j < j1; ++j)
                        out[j] += wv * src[long(j * g.stride + kj) - long(g.pad)];
                }
            }
        }
}

// GEMMs run inside our own per-sample parallel loops.
const bool eigen_single_threaded = (Eigen::setNbThreads(1), true);

} // namespace

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n)
{
#ifdef _OPENMP
    static const int default_threads = omp_get_max_threads();
    omp_set_num_threads(n > 0 ? n : default_threads);
#else
    (void)n;
#endif
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> b, std::span<double> y)
{
    const std::size_t P = g.out_height() * g.out_width();
    const std::size_t K = g.in_channels * g.kernel * g.kernel;
    const std::size_t in_stride = g.in_channels * g.height * g.width;
    const long batch = long(g.batch);
    ConstMatMap W(w.data(), Eigen::Index(g.out_channels), Eigen::Index(K));

#pragma omp parallel
    {
        std::vector<double> cols(K * P);
#pragma omp for schedule(static)
        for (long n = 0; n < batch; ++n) {
            im2col(g, x.data() + n * in_stride, cols.data());
            MatMap Y(y.data() + n * g.out_channels * P, Eigen::Index(g.out_channels), Eigen::Index(P));
            Y.noalias() = W * ConstMatMap(cols.data(), Eigen::Index(K), Eigen::Index(P));
            if (!b.empty())
                for (std::size_t co = 0; co < g.out_channels; ++co) Y.row(Eigen::Index(co)).array() += b[co];
        }
    }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db)
{
    const std::size_t P = g.out_height() * g.out_width();
    const std::size_t K = g.in_channels * g.kernel * g.kernel;
    const std::size_t in_stride = g.in_channels * g.height * g.width;
    const std::size_t wsize = g.out_channels * K;
    const long batch = long(g.batch);
    ConstMatMap W(w.data(), Eigen::Index(g.out_channels), Eigen::Index(K));

    std::vector<double> dw_parts(g.batch * wsize);
    std::vector<double> db_parts(g.batch * g.out_channels);

#pragma omp parallel
    {
        std::vector<double> cols(K * P);
        std::vector<double> dcols(dx.empty() ? 0 : K * P);
#pragma omp for schedule(static)
        for (long n = 0; n < batch; ++n) {
            im2col(g, x.data() + n * in_stride, cols.data());
            ConstMatMap dY(dy.data() + n * g.out_channels * P, Eigen::Index(g.out_channels), Eigen::Index(P));
            ConstMatMap C(cols.data(), Eigen::Index(K), Eigen::Index(P));
            MatMap dW(dw_parts.data() + n * wsize, Eigen::Index(g.out_channels), Eigen::Index(K));
            dW.noalias() = dY * C.transpose();
            for (std::size_t co = 0; co < g.out_channels; ++co)
                db_parts[n * g.out_channels + co] = dY.row(Eigen::Index(co)).sum();
            if (!dx.empty()) {
                MatMap dC(dcols.data(), Eigen::Index(K), Eigen::Index(P));
                dC.noalias() = W.transpose() * dY;
                col2im(g, dcols.data(), dx.data() + n * in_stride);
            }
        }
    }

    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n) {
        const double* part = dw_parts.data() + n * wsize;
        for (std::size_t i = 0; i < wsize; ++i) dw[i] += part[i];
        if (!db.empty())
            for (std::size_t co = 0; co < g.out_channels; ++co) db[co] += db_parts[n * g.out_channels + co];
    }
}

void depthwise_forward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                       std::span<const double> b, std::span<double> y)
{
    const std::size_t oc = g.out_channels();
    const std::size_t plane_in = g.height * g.width;
    const std::size_t plane_out = g.out_height() * g.out_width();
    const std::size_t kk = g.kernel * g.kernel;
    const long work = long(g.batch * oc);

#pragma omp parallel for schedule(static)
    for (long t = 0; t < work; ++t) {
        const std::size_t n = std::size_t(t) / oc, o = std::size_t(t) % oc;
        const std::size_t c = o % g.channels;
        double* out = y.data() + (n * oc + o) * plane_out;
        std::fill(out, out + plane_out, b.empty() ? 0.0 : b[o]);
        depthwise_plane(g, x.data() + (n * g.channels + c) * plane_in, w.data() + o * kk, out);
    }
}

void depthwise_backward(const DepthwiseGeometry& g, std::span<const double> x, std::span<const double> w,
                        std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                        std::span<double> db)
{
    const std::size_t oc = g.out_channels();
    const std::size_t oh = g.out_height(), ow = g.out_width();
    const std::size_t plane_in = g.height * g.width;
    const std::size_t plane_out = oh * ow;
    const std::size_t kk = g.kernel * g.kernel;
    const long work = long(g.batch * g.channels);

    std::vector<double> dw_parts(g.batch * oc * kk);
    std::vector<double> db_parts(g.batch * oc);

#pragma omp parallel for schedule(static)
    for (long t = 0; t < work; ++t) {
        const std::size_t n = std::size_t(t) / g.channels, c = std::size_t(t) % g.channels;
        const double* xin = x.data() + (n * g.channels + c) * plane_in;
        double* dxin = dx.empty() ? nullptr : dx.data() + (n * g.channels + c) * plane_in;
        if (dxin) std::fill(dxin, dxin + plane_in, 0.0);
        for (std::size_t m = 0; m < g.multiplier; ++m) {
            const std::size_t o = m * g.channels + c;
            const double* go = dy.data() + (n * oc + o) * plane_out;
            double sum = 0.0;
            for (std::size_t p = 0; p < plane_out; ++p) sum += go[p];
            db_parts[n * oc + o] = sum;
            double* dwo = dw_parts.data() + (n * oc + o) * kk;
            for (std::size_t ki = 0; ki < g.kernel; ++ki)
                for (std::size_t kj = 0; kj < g.kernel; ++kj) {
                    const double wv = w[o * kk + ki * g.kernel + kj];
                    // output columns whose tap lands inside the input row
                    const long lo_num = long(g.pad) - long(kj);
                    const std::size_t jlo = lo_num <= 0 ? 0 : std::size_t((lo_num + long(g.stride) - 1) / long(g.stride));
                    const long hi_num = long(g.width) + long(g.pad) - long(kj);
                    const std::size_t jhi =
                        hi_num <= 0 ? 0 : std::min(ow, std::size_t((hi_num + long(g.stride) - 1) / long(g.stride)));
                    double acc = 0.0;
                    for (std::size_t i = 0; i < oh; ++i) {
                        const long r = long(i * g.stride + ki) - long(g.pad);
                        if (r < 0 || r >= long(g.height) || jlo >= jhi) continue;
                        const double* src = xin + r * long(g.width) + long(kj) - long(g.pad);
                        const double* gi = go + i * ow;
                        if (g.stride == 1) {
                            for (std::size_t j = jlo; j < jhi; ++j) acc += gi[j] * src[j];
                            if (dxin) {
                                double* dsrc = dxin + r * long(g.width) + long(kj) - long(g.pad);
                                for (std::size_t j = jlo; j < jhi; ++j) dsrc[j] += gi[j] * wv;
                            }
                        } else {
                            for (std::size_t j = jlo; j < jhi; ++j) acc += gi[j] * src[j * g.stride];
                            if (dxin) {
                                double* dsrc = dxin + r * long(g.width) + long(kj) - long(g.pad);
                                for (std::size_t j = jlo; j < jhi; ++j) dsrc[j * g.stride] += gi[j] * wv;
                            }
                        }
                    }
                    dwo[ki * g.kernel + kj] = acc;
                }
        }
    }

    std::fill(dw.begin(), dw.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n) {
        for (std::size_t i = 0; i < oc * kk; ++i) dw[i] += dw_parts[n * oc * kk + i];
        if (!db.empty())
            for (std::size_t o = 0; o < oc; ++o) db[o] += db_parts[n * oc + o];
    }
}

void global_avg_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y)
{
#pragma omp parallel for schedule(static)
    for (long p = 0; p < long(planes); ++p) {
        const double* src = x.data() + p * area;
        double s = 0.0;
        for (std::size_t k = 0; k < area; ++k) s += src[k];
        y[p] = s / double(area);
    }
}

void global_max_pool(std::size_t planes, std::size_t area, std::span<const double> x, std::span<double> y,
                     std::span<std::size_t> argmax)
{
#pragma omp parallel for schedule(static)
    for (long p = 0; p < long(planes); ++p) {
        const double* src = x.data() + p * area;
        std::size_t best = 0;
        for (std::size_t k = 1; k < area; ++k)
            if (src[k] > src[best]) best = k;
        y[p] = src[best];
        argmax[p] = best;
    }
}

} // namespace cafo::kernels
