#include "doctest.h"
#include "gradcheck.hpp"

#include "cafo/error.hpp"
#include "cafo/metrics.hpp"

#include <cmath>
#include <limits>

using namespace cafo;

namespace {

constexpr double kExact = 1e-12;

GroundTruthMask mask(std::size_t c, std::size_t d, std::vector<int> a)
{
    GroundTruthMask m;
    m.c = c;
    m.d = d;
    m.variant_a = a;
    for (int v : a) m.variant_b.push_back(1 - v);
    return m;
}

} // namespace

TEST_CASE("global importance")
{
    const auto r = global_importance(Tensor::matrix(2, 2, {0.2, 0.8, 0.4, 0.6}));
    CHECK(std::abs(r.gi[0] - 0.3) < kExact);
    CHECK(std::abs(r.gi[1] - 0.7) < kExact);
    CHECK(r.rank_desc == std::vector<std::size_t>{1, 0});
    const auto one = global_importance(Tensor::matrix(1, 3, {0.1, 0.5, 0.2}));
    CHECK(one.gi == std::vector<double>{0.1, 0.5, 0.2});
    CHECK(global_importance(Tensor({3, 4}, 0.5)).rank_desc == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(global_importance(Tensor({0, 3})), ShapeError);
}

TEST_CASE("GI is permutation-equivariant")
{
    Rng rng(1);
    const auto a = cafo::testing::random_tensor({7, 5}, rng, 0, 1);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    Tensor b({7, 5});
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 5; ++j) b.at(i, j) = a.at(i, perm[j]);
    const auto ga = global_importance(a).gi, gb = global_importance(b).gi;
    for (std::size_t j = 0; j < 5; ++j) CHECK(gb[j] == ga[perm[j]]);
}

TEST_CASE("CWRI")
{
    const auto two = cwri(Tensor::matrix(2, 3, {0.9, 0.2, 0.5, 0.1, 0.6, 0.5}));
    for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(two.scores[j] + two.scores[3 + j]) < kExact);
    const auto col = cwri(Tensor::matrix(3, 1, {0.9, 0.1, 0.2}));
    CHECK(std::abs(col.scores[0] - 0.75) < kExact);
    CHECK(std::abs(col.scores[1] + 0.45) < kExact);
    CHECK(std::abs(col.scores[2] + 0.30) < kExact);
    CHECK(col.binarized == std::vector<int>{1, 0, 0});
    CHECK_THROWS_AS(cwri(Tensor::matrix(1, 2, {0.1, 0.2})), ShapeError);

    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t c = 2 + std::size_t(trial % 4);
        const auto p = cafo::testing::random_tensor({c, 6}, rng, 0, 1);
        const auto m = cwri(p);
        for (std::size_t j = 0; j < 6; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < c; ++k) s += m.scores[k * 6 + j];
            CHECK(std::abs(s) < 1e-9);
        }
    }
}

TEST_CASE("ABC")
{
    const std::vector<double> same{0.9, 0.5, 0.3};
    CHECK(abc(same, same) == 0.0);
    CHECK(std::abs(abc(std::vector<double>{0, 0}, std::vector<double>{1, 1}) - 1.0) < kExact);
    CHECK(std::abs(abc(std::vector<double>{1, 0, 0}, std::vector<double>{1, 0.5, 0}) - 0.25) < kExact);
    const std::vector<double> t{0.9, 0.6, 0.4, 0.3}, i{0.9, 0.8, 0.7, 0.5};
    CHECK(std::abs(abc(t, i) + abc(i, t)) < kExact);
    CHECK_THROWS_AS(abc(std::vector<double>{1, 2}, std::vector<double>{1}), ShapeError);
}

TEST_CASE("DA and WDA")
{
    CHECK(std::abs(drop_in_accuracy(0.90, 0.72) - 20.0) < kExact);
    CHECK(drop_in_accuracy(0.8, 0.8) == 0.0);
    CHECK(drop_in_accuracy(0.8, 0.9) < 0.0);
    CHECK_THROWS_AS(drop_in_accuracy(0.0, 0.1), ShapeError);
    CHECK(removal_count(30) == 6);

    const auto w = wda_weights(14);
    CHECK(w[0] == 1.0);
    CHECK(std::abs(w[1] - 12.0 / 13.0) < kExact);
    CHECK(std::abs(w[2] - 11.0 / 13.0) < kExact);
    CHECK(std::round(w[1] * 1000) / 1000 == 0.923);
    CHECK(std::round(w[2] * 1000) / 1000 == 0.846);
    CHECK(weighted_drop(0.8, std::vector<double>(5, 0.8)) == 0.0);
    CHECK(weighted_drop(0.9, std::vector<double>{0.9, 0.8}) == 0.0);

    // linear in (base - acc_d)
    const std::vector<double> a1{0.7, 0.6, 0.5}, a2{0.65, 0.4, 0.3};
    std::vector<double> mix(3);
    for (int k = 0; k < 3; ++k) mix[k] = 0.5 * a1[k] + 0.5 * a2[k];
    CHECK(std::abs(weighted_drop(0.8, mix) - 0.5 * (weighted_drop(0.8, a1) + weighted_drop(0.8, a2))) < kExact);
}

TEST_CASE("rank correlations")
{
    const std::vector<double> a{0, 1, 2, 3}, b{0, 2, 1, 3}, rev{3, 2, 1, 0};
    const auto same = rank_correlations({a, a});
    CHECK(same.spearman == 1.0);
    CHECK(same.kendall == 1.0);
    const auto opp = rank_correlations({a, rev});
    CHECK(opp.spearman == -1.0);
    CHECK(opp.kendall == -1.0);
    const auto mid = rank_correlations({a, b});
    CHECK(std::abs(mid.spearman - 0.8) < kExact);
    CHECK(std::abs(mid.kendall - 2.0 / 3.0) < kExact);
    CHECK_THROWS_AS(rank_correlations({a, std::vector<double>{1, 2}}), ShapeError);

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> rs;
        for (int k = 0; k < 4; ++k) rs.push_back(positions_from_order(rank_descending(
            cafo::testing::random_tensor({9}, rng).data())));
        const auto r = rank_correlations(rs);
        CHECK(r.spearman >= -1.0);
        CHECK(r.spearman <= 1.0);
        CHECK(r.kendall >= -1.0);
        CHECK(r.kendall <= 1.0);
    }
}

TEST_CASE("ground-truth agreement")
{
    const auto gt = mask(2, 3, {1, 0, 0, 0, 1, 1});
    const auto exact = gt_agreement(gt.variant_a, gt);
    CHECK(exact.selected == 'A');
    CHECK(exact.best().f1 == 1.0);
    CHECK(exact.best().jaccard == 1.0);
    CHECK(exact.best().iacc == 1.0);
    const auto flipped = gt_agreement(gt.variant_b, gt);
    CHECK(flipped.selected == 'B');
    CHECK(flipped.best().f1 == 1.0);
    CHECK(flipped.best().iacc == 1.0);

    // TP=2 FP=1 FN=1 TN=2
    const auto a = agreement(std::vector<int>{1, 1, 1, 0, 0, 0}, std::vector<int>{1, 1, 0, 1, 0, 0});
    CHECK(std::abs(a.f1 - 2.0 / 3.0) < kExact);
    CHECK(std::abs(a.jaccard - 0.5) < kExact);
    CHECK(std::abs(a.iacc - 2.0 / 3.0) < kExact);
    CHECK_THROWS_AS(gt_agreement(std::vector<int>{1, 0}, gt), ShapeError);

    Rng rng(4);
    std::bernoulli_distribution coin(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<int> p(12), t(12);
        for (auto& v : p) v = coin(rng);
        for (auto& v : t) v = coin(rng);
        const auto r = agreement(p, t);
        CHECK(r.f1 >= r.jaccard - 1e-15);
        CHECK(std::abs(r.f1 - 2 * r.jaccard / (1 + r.jaccard)) < 1e-12);
    }
}

TEST_CASE("Calinski-Harabasz")
{
    const Tensor pts = Tensor::matrix(4, 1, {0, 0.2, 10, 10.2});
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(std::abs(calinski_harabasz(pts, labels) - 5000.0) < 1e-9);
    Tensor scaled = pts;
    for (double& v : scaled.data()) v *= 3.5;
    CHECK(std::abs(calinski_harabasz(scaled, labels) - 5000.0) < 1e-8);
    CHECK(calinski_harabasz(Tensor::matrix(4, 1, {0, 1, 0, 1}), labels) == 0.0);
    CHECK(calinski_harabasz(Tensor::matrix(4, 1, {1, 1, 2, 2}), labels) == std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(calinski_harabasz(Tensor::matrix(2, 1, {1, 2}), std::vector<int>{0, 1}), ShapeError);
}
