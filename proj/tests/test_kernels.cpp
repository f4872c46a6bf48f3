#include "doctest.h"
#include "gradcheck.hpp"

#include "cafo/kernels.hpp"

using namespace cafo;
namespace k = cafo::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, Rng& rng)
{
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

TEST_CASE("dense convolution matches the serial reference")
{
    Rng rng(11);
    for (std::size_t stride : {1, 2})
        for (std::size_t pad : {0, 1})
            for (std::size_t kern : {1, 3}) {
                k::ConvGeometry g{3, 4, 5, 9, 7, kern, stride, pad};
                auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.weight_size(), rng), b = rand_vec(5, rng);
                std::vector<double> y1(g.output_size()), y2(g.output_size());
                k::reference::conv2d_forward(g, x, w, b, y1);
                k::conv2d_forward(g, x, w, b, y2);
                CHECK(max_diff(y1, y2) < 1e-12);
                auto dy = rand_vec(g.output_size(), rng);
                std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(5), db2(5);
                k::reference::conv2d_backward(g, x, w, dy, dx1, dw1, db1);
                k::conv2d_backward(g, x, w, dy, dx2, dw2, db2);
                CHECK(max_diff(dx1, dx2) < 1e-12);
                CHECK(max_diff(dw1, dw2) < 1e-12);
                CHECK(max_diff(db1, db2) < 1e-12);
            }
}

TEST_CASE("depthwise convolution matches the serial reference")
{
    Rng rng(12);
    for (std::size_t stride : {1, 2})
        for (std::size_t pad : {0, 1, 2})
            for (std::size_t mult : {1, 3}) {
                k::DepthwiseGeometry g{2, 4, mult, 8, 8, 3, stride, pad};
                auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.weight_size(), rng);
                auto b = rand_vec(g.out_channels(), rng);
                std::vector<double> y1(g.output_size()), y2(g.output_size());
                k::reference::depthwise_forward(g, x, w, b, y1);
                k::depthwise_forward(g, x, w, b, y2);
                CHECK(max_diff(y1, y2) < 1e-12);
                auto dy = rand_vec(g.output_size(), rng);
                std::vector<double> dx1(x.size()), dx2(x.size()), dw1(w.size()), dw2(w.size()), db1(b.size()),
                    db2(b.size());
                k::reference::depthwise_backward(g, x, w, dy, dx1, dw1, db1);
                k::depthwise_backward(g, x, w, dy, dx2, dw2, db2);
                CHECK(max_diff(dx1, dx2) < 1e-12);
                CHECK(max_diff(dw1, dw2) < 1e-12);
                CHECK(max_diff(db1, db2) < 1e-12);
                // input gradient may be skipped
                std::vector<double> dw3(w.size()), db3(b.size());
                k::depthwise_backward(g, x, w, dy, {}, dw3, db3);
                CHECK(dw3 == dw2);
            }
}

TEST_CASE("global pooling matches the reference and keeps first argmax")
{
    Rng rng(13);
    auto x = rand_vec(6 * 25, rng);
    x[7] = x[9] = 5.0; // plane 0: tie
    std::vector<double> a1(6), a2(6), m1(6), m2(6);
    std::vector<std::size_t> i1(6), i2(6);
    k::reference::global_avg_pool(6, 25, x, a1);
    k::global_avg_pool(6, 25, x, a2);
    k::reference::global_max_pool(6, 25, x, m1, i1);
    k::global_max_pool(6, 25, x, m2, i2);
    CHECK(max_diff(a1, a2) < 1e-14);
    CHECK(m1 == m2);
    CHECK(i1 == i2);
    CHECK(i2[0] == 7);
}

TEST_CASE("parallel kernels are bit-identical across thread counts")
{
    Rng rng(14);
    k::ConvGeometry g{8, 6, 4, 10, 10, 3, 2, 1};
    auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.weight_size(), rng), dy = rand_vec(g.output_size(), rng);
    k::DepthwiseGeometry dg{8, 6, 3, 10, 10, 3, 1, 1};
    auto dwt = rand_vec(dg.weight_size(), rng), ddy = rand_vec(dg.output_size(), rng);
    auto run = [&](int threads) {
        k::set_threads(threads);
        std::vector<double> dx(x.size()), dw(w.size()), db(4), ddw(dwt.size()), ddb(dg.out_channels());
        k::conv2d_backward(g, x, w, dy, dx, dw, db);
        k::depthwise_backward(dg, x, dwt, ddy, {}, ddw, ddb);
        dw.insert(dw.end(), ddw.begin(), ddw.end());
        dw.insert(dw.end(), dx.begin(), dx.end());
        return dw;
    };
    const auto one = run(1);
    const auto four = run(4);
    k::set_threads(0);
    CHECK(one == four);
}
