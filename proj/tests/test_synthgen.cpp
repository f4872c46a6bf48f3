#include "doctest.h"

#include "cafo/error.hpp"
#include "cafo/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace cafo;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("cafo_test_" + name);
    fs::remove_all(p);
    return p;
}

SquidGameConfig small(std::size_t n)
{
    SquidGameConfig c;
    c.n_per_class = n;
    return c;
}

} // namespace

TEST_CASE("squidgame shape, balance and determinism")
{
    const auto a = gen_squidgame(small(200));
    CHECK(a.data.size() == 600);
    CHECK(a.data.t == 32);
    CHECK(a.data.d == 30);
    CHECK(a.data.c == 3);
    std::vector<int> counts(3, 0);
    for (int y : a.data.labels) ++counts[std::size_t(y)];
    CHECK(counts == std::vector<int>{200, 200, 200});
    const auto b = gen_squidgame(small(200));
    CHECK(a.data.values == b.data.values);
    CHECK(a.data.folds == b.data.folds);
    CHECK(dataset_hash(a.data) == dataset_hash(b.data));
    auto other = small(200);
    other.seed = 7;
    CHECK(gen_squidgame(other).data.values != a.data.values);
    CHECK_THROWS_AS(gen_squidgame(small(0)), ShapeError);
}

TEST_CASE("full-size configuration gives N = 54000")
{
    SquidGameConfig c;
    CHECK(c.n_per_class * 3 == 54000);
}

TEST_CASE("signal only in the class group; noise elsewhere")
{
    auto cfg = small(300);
    cfg.noise_sigma = 1.0;
    const auto g = gen_squidgame(cfg);
    const auto& ds = g.data;
    const double s = cfg.noise_sigma;
    double total = 0.0, total2 = 0.0;
    std::size_t cells = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::size_t c = std::size_t(ds.labels[i]);
        double inst = 0.0;
        for (std::size_t t = 0; t < ds.t; ++t)
            for (std::size_t j = 0; j < ds.d; ++j) {
                if (j / 10 == c) continue;
                const double v = ds.at(i, t, j);
                inst += v;
                total += v;
                total2 += v * v;
                ++cells;
            }
        if (c == 0) CHECK(std::abs(inst / 640.0) < 4.0 * s / std::sqrt(640.0) * 1.5);
    }
    const double mean = total / double(cells);
    const double var = total2 / double(cells) - mean * mean;
    CHECK(std::abs(mean) < 4.0 * s / std::sqrt(double(cells)));
    CHECK(std::abs(var - s * s) < 0.02);
}

TEST_CASE("every instance carries a non-empty mask in its own group")
{
    auto cfg = small(100);
    cfg.noise_sigma = 0.0; // outside the mask everything is exactly zero
    const auto g = gen_squidgame(cfg);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const std::size_t c = std::size_t(g.data.labels[i]);
        std::size_t own = 0, other = 0;
        for (std::size_t t = 0; t < 32; ++t)
            for (std::size_t j = 0; j < 30; ++j)
                if (g.data.at(i, t, j) != 0.0) ++(j / 10 == c ? own : other);
        CHECK(own > 0);
        CHECK(other == 0);
    }
}

TEST_CASE("shape masks")
{
    const auto circle = shape_mask(0, 32, 10, 10.0, 5.0, 2.0);
    const auto square = shape_mask(2, 32, 10, 10.0, 5.0, 2.0);
    const auto tri = shape_mask(1, 32, 10, 10.0, 5.0, 2.0);
    const auto count = [](const std::vector<int>& m) { return std::accumulate(m.begin(), m.end(), 0); };
    CHECK(count(square) == 25);
    CHECK(count(circle) == 13);
    CHECK(count(tri) > 0);
    CHECK(count(tri) < count(square));
    // clipped at the block edge
    CHECK(count(shape_mask(2, 32, 10, 0.0, 0.0, 2.0)) == 9);
}

TEST_CASE("ground truth variants")
{
    const auto g = gen_squidgame(small(10));
    const auto& gt = g.truth;
    CHECK(gt.variant_a != gt.variant_b);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t j = 0; j < 30; ++j) {
            CHECK(gt.variant_a[c * 30 + j] == int(j / 10 == c));
            CHECK(gt.variant_b[c * 30 + j] == 1 - gt.variant_a[c * 30 + j]);
        }
    }
    const auto dir = scratch("gt");
    fs::create_directories(dir);
    write_ground_truth(gt, dir / "ground_truth.json");
    const auto back = read_ground_truth(dir / "ground_truth.json");
    CHECK(back.variant_a == gt.variant_a);
    CHECK(back.variant_b == gt.variant_b);
    fs::remove_all(dir);
}

TEST_CASE("splits: held-out test and round-robin folds")
{
    const auto g = gen_squidgame(small(100));
    const auto& ds = g.data;
    CHECK(ds.indices(Split::test).size() == 60);
    CHECK(ds.num_folds() == 5);
    std::set<std::size_t> seen;
    for (int f = 0; f < 5; ++f) {
        const auto idx = ds.fold_indices(f);
        CHECK(idx.size() == 48);
        for (auto i : idx) CHECK(seen.insert(i).second);
    }
}

TEST_CASE("pseudo signal generators")
{
    const auto wn = gen_pseudo_signal(PseudoKind::wn, 10000, 1);
    const double mean = std::accumulate(wn.begin(), wn.end(), 0.0) / 1e4;
    double var = 0.0;
    for (double v : wn) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / (1e4 - 1));
    CHECK(sd >= 0.29);
    CHECK(sd <= 0.31);

    const auto s = gen_pseudo_signal(PseudoKind::sin, 8, 1);
    for (std::size_t t = 0; t < 8; ++t) {
        CHECK(std::abs(s[t]) <= 1.0);
        if (t + 4 < 8) CHECK(s[t] == doctest::Approx(s[t + 4]).epsilon(1e-12));
    }
    CHECK(s[1] == doctest::Approx(1.0));
    CHECK(s == gen_pseudo_signal(PseudoKind::sin, 8, 99));

    // lag-0 variance of the GP ~ k(0) = 1, lag-1 covariance ~ k(1)
    double v0 = 0.0, v1 = 0.0;
    const int draws = 4000;
    for (int k = 0; k < draws; ++k) {
        const auto g = gen_pseudo_signal(PseudoKind::gp, 16, 1000 + std::uint64_t(k));
        v0 += g[5] * g[5];
        v1 += g[5] * g[6];
    }
    CHECK(std::abs(v0 / draws - 1.0) < 0.08);
    CHECK(std::abs(v1 / draws - matern32(1.0)) < 0.08);
    CHECK(matern32(0.0) == 1.0);
    CHECK_THROWS_AS(gen_pseudo_signal(PseudoKind::wn, 1, 1), ShapeError);
    CHECK_THROWS_AS(parse_pseudo_kind("pink"), ShapeError);
}

TEST_CASE("pseudo injection")
{
    const auto g = gen_squidgame(small(400));
    const auto aug = inject_pseudo(g.data, {PseudoKind::wn, PseudoKind::sin, PseudoKind::gp}, 5);
    CHECK(aug.d == 33);
    CHECK(aug.labels == g.data.labels);
    CHECK(pseudo_columns(aug) == std::vector<std::size_t>{30, 31, 32});
    for (std::size_t i = 0; i < 20; ++i)
        for (std::size_t t = 0; t < 32; ++t) CHECK(aug.at(i, t, 7) == g.data.at(i, t, 7));
    CHECK(inject_pseudo(g.data, {}, 5).values == g.data.values);

    // point-biserial correlation between label==c and the per-instance mean of
    // each injected column stays near zero
    for (std::size_t col : {30, 32})
        for (int c = 0; c < 3; ++c) {
            std::vector<double> m(aug.size());
            for (std::size_t i = 0; i < aug.size(); ++i) {
                double s = 0.0;
                for (std::size_t t = 0; t < 32; ++t) s += aug.at(i, t, col);
                m[i] = s / 32.0;
            }
            double mx = 0, my = 0;
            for (std::size_t i = 0; i < aug.size(); ++i) {
                mx += m[i];
                my += aug.labels[i] == c;
            }
            mx /= double(aug.size());
            my /= double(aug.size());
            double sxy = 0, sxx = 0, syy = 0;
            for (std::size_t i = 0; i < aug.size(); ++i) {
                const double y = (aug.labels[i] == c) - my;
                sxy += (m[i] - mx) * y;
                sxx += (m[i] - mx) * (m[i] - mx);
                syy += y * y;
            }
            CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 4.0 / std::sqrt(double(aug.size())));
        }
}

TEST_CASE("binary dataset round trip and validation")
{
    const auto g = gen_squidgame(small(20));
    const auto dir = scratch("ds");
    write_dataset(g.data, dir);
    const auto back = read_dataset(dir);
    CHECK(back.values == g.data.values);
    CHECK(back.labels == g.data.labels);
    CHECK(back.folds == g.data.folds);
    CHECK(back.split == g.data.split);
    CHECK(back.feature_names == g.data.feature_names);

    // payload shorter than the manifest declares
    fs::resize_file(dir / "data.bin", fs::file_size(dir / "data.bin") - 4);
    CHECK_THROWS_AS(read_dataset(dir), DataError);
    fs::remove_all(dir);
    CHECK_THROWS_AS(read_dataset(dir), DataError);
}

TEST_CASE("CSV ingestion")
{
    const auto dir = scratch("csv");
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "ok.csv");
        out << "instance_id,t,label,f0,f1\n";
        out << "a,0,1,0.5,1\na,1,1,0.25,2\nb,0,0,1,1\nb,1,0,2,2\n";
    }
    const auto ds = read_csv(dir / "ok.csv");
    CHECK(ds.size() == 2);
    CHECK(ds.t == 2);
    CHECK(ds.d == 2);
    CHECK(ds.c == 2);
    CHECK(ds.at(0, 1, 0) == 0.25);
    {
        std::ofstream out(dir / "missing.csv");
        out << "instance_id,t,label,f0,f2\n";
        out << "a,0,1,0.5,1\n";
    }
    try {
        read_csv(dir / "missing.csv");
        FAIL("expected an error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("f1") != std::string::npos);
    }
    {
        std::ofstream out(dir / "ragged.csv");
        out << "instance_id,t,label,f0\n";
        out << "a,0,1,0.5\na,1,1,0.5\nb,0,0,1\n";
    }
    CHECK_THROWS_AS(read_csv(dir / "ragged.csv"), DataError);
    CHECK_THROWS_AS(load_dataset(dir / "nope"), DataError);
    const auto loaded = load_dataset(dir / "ok.csv", 2, 1);
    CHECK(loaded.size() == 2);
    fs::remove_all(dir);
}
