// Times the reference kernels against the parallel ones on training-sized
// shapes and reports the largest disagreement.

#include "cafo/kernels.hpp"
#include "cafo/rng.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

using namespace cafo;
namespace k = cafo::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

double diff(const std::vector<double>& a, const std::vector<double>& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double time_ms(int reps, const std::function<void()>& f)
{
    f();
    const auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) f();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const char* name, double ref, double par, double err)
{
    std::printf("%-22s %10.2f %10.2f %8.2fx %10.3g\n", name, ref, par, ref / par, err);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"kernel benchmark: serial reference vs parallel"};
    std::size_t batch = 64;
    int reps = 3;
    int threads = 0;
    app.add_option("--batch", batch);
    app.add_option("--reps", reps);
    app.add_option("--threads", threads);
    CLI11_PARSE(app, argc, argv);
    k::set_threads(threads);

    Rng rng(7);
    std::printf("threads=%d batch=%zu\n", k::max_threads(), batch);
    std::printf("%-22s %10s %10s %9s %10s\n", "kernel", "ref ms", "par ms", "speedup", "max diff");

    k::DepthwiseGeometry dg{batch, 30, 3, 32, 32, 3, 1, 1};
    auto dx_in = random_vec(dg.input_size(), rng);
    auto dw = random_vec(dg.weight_size(), rng);
    auto db = random_vec(dg.out_channels(), rng);
    std::vector<double> y1(dg.output_size()), y2(dg.output_size());
    const double dr = time_ms(reps, [&] { k::reference::depthwise_forward(dg, dx_in, dw, db, y1); });
    const double dp = time_ms(reps, [&] { k::depthwise_forward(dg, dx_in, dw, db, y2); });
    row("depthwise forward", dr, dp, diff(y1, y2));

    auto dy = random_vec(dg.output_size(), rng);
    std::vector<double> gx1(dg.input_size()), gx2(dg.input_size()), gw1(dw.size()), gw2(dw.size()), gb1(db.size()),
        gb2(db.size());
    const double dbr = time_ms(reps, [&] { k::reference::depthwise_backward(dg, dx_in, dw, dy, gx1, gw1, gb1); });
    const double dbp = time_ms(reps, [&] { k::depthwise_backward(dg, dx_in, dw, dy, gx2, gw2, gb2); });
    row("depthwise backward", dbr, dbp, std::max({diff(gx1, gx2), diff(gw1, gw2), diff(gb1, gb2)}));

    for (auto [cin, cout, side] : {std::tuple<std::size_t, std::size_t, std::size_t>{30, 16, 32}, {16, 32, 16}}) {
        k::ConvGeometry g{batch, cin, cout, side, side, 3, 2, 1};
        auto x = random_vec(g.input_size(), rng);
        auto w = random_vec(g.weight_size(), rng);
        auto b = random_vec(cout, rng);
        std::vector<double> o1(g.output_size()), o2(g.output_size());
        char name[64];
        std::snprintf(name, sizeof name, "conv %zu->%zu forward", cin, cout);
        const double r = time_ms(reps, [&] { k::reference::conv2d_forward(g, x, w, b, o1); });
        const double p = time_ms(reps, [&] { k::conv2d_forward(g, x, w, b, o2); });
        row(name, r, p, diff(o1, o2));
        auto go = random_vec(g.output_size(), rng);
        std::vector<double> ax1(x.size()), ax2(x.size()), aw1(w.size()), aw2(w.size()), ab1(b.size()), ab2(b.size());
        std::snprintf(name, sizeof name, "conv %zu->%zu backward", cin, cout);
        const double rb = time_ms(reps, [&] { k::reference::conv2d_backward(g, x, w, go, ax1, aw1, ab1); });
        const double pb = time_ms(reps, [&] { k::conv2d_backward(g, x, w, go, ax2, aw2, ab2); });
        row(name, rb, pb, std::max({diff(ax1, ax2), diff(aw1, aw2), diff(ab1, ab2)}));
    }
    return 0;
}
