#include "doctest.h"
#include "gradcheck.hpp"

#include "cafo/error.hpp"

#include <cmath>

using namespace cafo;
using cafo::testing::gradcheck;
using cafo::testing::random_away_from_zero;
using cafo::testing::random_distinct;
using cafo::testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;
constexpr int kTrials = 10;

// Weighted sum so every output entry gets a distinct upstream gradient.
ag::Var probe(const ag::Var& y, std::uint64_t seed)
{
    Rng rng(seed);
    return ag::sum(ag::mul(y, ag::constant(random_tensor(y.shape(), rng))));
}

} // namespace

TEST_CASE("tensor basics")
{
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.at(1, 2) == 1.5);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(require_finite(Tensor::vector({1.0, NAN}), "t"), NonFiniteError);
    CHECK(Tensor::scalar(3.0).item() == 3.0);
}

TEST_CASE("forward examples")
{
    CHECK(ag::sigmoid(ag::constant(Tensor::scalar(0.0))).value().item() == 0.5);
    const Tensor a = Tensor::matrix(2, 2, {1.5, -2, 3, 4});
    const Tensor i2 = Tensor::matrix(2, 2, {1, 0, 0, 1});
    CHECK(ag::matmul(ag::constant(i2), ag::constant(a)).value() == a);
    const auto x = ag::constant(Tensor({1, 1, 3, 3}, 1.0));
    const auto w = ag::constant(Tensor({1, 3, 3}, 1.0));
    const auto y = ag::depthwise_conv2d(x, w, ag::Var(), 1, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.value().item() == 9.0);
}

TEST_CASE("backward examples")
{
    auto x = ag::parameter(Tensor::vector({1, 2, 3}));
    ag::backward(ag::sum(ag::mul(x, x)));
    CHECK(x.grad() == Tensor::vector({2, 4, 6}));

    auto w = ag::parameter(Tensor::scalar(0.0));
    ag::backward(ag::mul_scalar(ag::sigmoid(w), 4.0));
    CHECK(w.grad().item() == doctest::Approx(1.0).epsilon(1e-15));

    auto v = ag::parameter(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(ag::backward(ag::mul_scalar(v, 2.0)), ShapeError);
}

TEST_CASE("fan-out accumulates")
{
    auto x = ag::parameter(Tensor::scalar(3.0));
    ag::backward(ag::add(ag::mul(x, x), ag::mul_scalar(x, 5.0)));
    CHECK(x.grad().item() == 11.0);
}

TEST_CASE("errors at op boundaries")
{
    CHECK_THROWS_AS(ag::add(ag::constant(Tensor({2})), ag::constant(Tensor({3}))), ShapeError);
    CHECK_THROWS_AS(ag::div(ag::constant(Tensor::vector({1})), ag::constant(Tensor::vector({0}))), ShapeError);
    CHECK_THROWS_AS(ag::matmul(ag::constant(Tensor({2, 3})), ag::constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("finite-difference oracle: element-wise ops")
{
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng(100 + trial);
        const Shape s{3, 4};
        const auto a = random_tensor(s, rng), b = random_tensor(s, rng);
        const auto nz = random_away_from_zero(s, rng, 0.3);
        const std::uint64_t p = 1000 + trial;
        CHECK(gradcheck([&](auto& v) { return probe(ag::add(v[0], v[1]), p); }, {a, b}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::sub(v[0], v[1]), p); }, {a, b}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::mul(v[0], v[1]), p); }, {a, b}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::div(v[0], v[1]), p); }, {a, nz}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::add_scalar(v[0], 0.7), p); }, {a}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::mul_scalar(v[0], -1.3), p); }, {a}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::sigmoid(v[0]), p); }, {a}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::relu(v[0]), p); }, {nz}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::abs(v[0]), p); }, {nz}) < kTol);
    }
}

TEST_CASE("finite-difference oracle: broadcasting and linear algebra")
{
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng(200 + trial);
        const std::uint64_t p = 2000 + trial;
        const auto x = random_tensor({2, 3, 4, 4}, rng);
        const auto s = random_away_from_zero({1}, rng, 0.3);
        const auto b = random_tensor({3}, rng);
        const auto sc = random_tensor({2, 3}, rng);
        CHECK(gradcheck([&](auto& v) { return probe(ag::scale(v[0], v[1]), p); }, {x, s}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::divide(v[0], v[1]), p); }, {x, s}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::bias_add(v[0], v[1]), p); }, {x, b}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::scale_channels(v[0], v[1]), p); }, {x, sc}) < kTol);

        const auto m1 = random_tensor({3, 5}, rng), m2 = random_tensor({5, 2}, rng);
        CHECK(gradcheck([&](auto& v) { return probe(ag::matmul(v[0], v[1]), p); }, {m1, m2}) < kTol);
        const auto u = random_tensor({6}, rng), w = random_tensor({6}, rng);
        CHECK(gradcheck([&](auto& v) { return ag::mul_scalar(ag::dot(v[0], v[1]), 1.7); }, {u, w}) < kTol);
        CHECK(gradcheck([&](auto& v) { return ag::mul_scalar(ag::l2_norm(v[0]), 0.9); }, {u}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::column(v[0], 2), p); }, {m1}) < kTol);
        CHECK(gradcheck(
                  [&](auto& v) {
                      std::vector<ag::Var> parts{ag::dot(v[0], v[1]), ag::l2_norm(v[0]), ag::sum(v[1])};
                      return probe(ag::stack(parts), p);
                  },
                  {u, w}) < kTol);
    }
}

TEST_CASE("finite-difference oracle: reductions and shape")
{
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng(300 + trial);
        const std::uint64_t p = 3000 + trial;
        const auto x = random_tensor({2, 3, 4}, rng);
        CHECK(gradcheck([&](auto& v) { return ag::mul_scalar(ag::sum(v[0]), 1.1); }, {x}) < kTol);
        CHECK(gradcheck([&](auto& v) { return ag::mul_scalar(ag::mean(v[0]), 1.1); }, {x}) < kTol);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            CHECK(gradcheck([&](auto& v) { return probe(ag::sum_axis(v[0], axis), p); }, {x}) < kTol);
            CHECK(gradcheck([&](auto& v) { return probe(ag::mean_axis(v[0], axis), p); }, {x}) < kTol);
        }
        CHECK(gradcheck([&](auto& v) { return probe(ag::reshape(v[0], {6, 4}), p); }, {x}) < kTol);
    }
}

TEST_CASE("finite-difference oracle: convolution and pooling")
{
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng(400 + trial);
        const std::uint64_t p = 4000 + trial;
        const auto x = random_tensor({2, 3, 6, 6}, rng);
        const auto w = random_tensor({4, 3, 3, 3}, rng);
        const auto b = random_tensor({4}, rng);
        const std::size_t stride = 1 + std::size_t(trial % 2);
        CHECK(gradcheck([&](auto& v) { return probe(ag::conv2d(v[0], v[1], v[2], stride, 1), p); }, {x, w, b}) <
              kTol);
        const auto dw = random_tensor({6, 3, 3}, rng);
        const auto db = random_tensor({6}, rng);
        CHECK(gradcheck([&](auto& v) { return probe(ag::depthwise_conv2d(v[0], v[1], v[2], 2, stride, 1), p); },
                        {x, dw, db}) < kTol);
        const auto xd = random_distinct({2, 3, 6, 6}, rng);
        CHECK(gradcheck([&](auto& v) { return probe(ag::avg_pool2d(v[0], 2), p); }, {x}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::max_pool2d(v[0], 2), p); }, {xd}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::global_avg_pool(v[0]), p); }, {x}) < kTol);
        CHECK(gradcheck([&](auto& v) { return probe(ag::global_max_pool(v[0]), p); }, {xd}) < kTol);
    }
}

TEST_CASE("finite-difference oracle: softmax cross-entropy")
{
    for (int trial = 0; trial < kTrials; ++trial) {
        Rng rng(500 + trial);
        const auto logits = random_tensor({5, 3}, rng, -2, 2);
        const std::vector<int> labels{0, 2, 1, 1, 0};
        CHECK(gradcheck([&](auto& v) { return ag::softmax_cross_entropy(v[0], labels); }, {logits}) < kTol);
    }
}

TEST_CASE("softmax cross-entropy properties")
{
    Rng rng(9);
    for (int trial = 0; trial < kTrials; ++trial) {
        const auto logits = random_tensor({4, 3}, rng, -3, 3);
        const std::vector<int> labels{2, 0, 1, 2};
        auto l = ag::parameter(logits);
        const auto loss = ag::softmax_cross_entropy(l, labels);
        CHECK(loss.value().item() >= 0.0);
        double expect = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            double z = 0.0;
            for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(r, c));
            expect += -std::log(std::exp(logits.at(r, std::size_t(labels[r]))) / z);
        }
        CHECK(loss.value().item() == doctest::Approx(expect / 4.0).epsilon(1e-12));
        ag::backward(loss);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) s += l.grad().at(r, c);
            CHECK(std::abs(s) < 1e-15);
        }
    }
}

TEST_CASE("max pooling ties route to the lowest index")
{
    auto x = ag::parameter(Tensor({1, 1, 2, 2}, 1.0));
    ag::backward(ag::sum(ag::max_pool2d(x, 2)));
    CHECK(x.grad() == Tensor({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 0}));
    auto y = ag::parameter(Tensor({1, 1, 2, 2}, std::vector<double>{0, 3, 3, 1}));
    ag::backward(ag::sum(ag::global_max_pool(y)));
    CHECK(y.grad() == Tensor({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 0}));
}

TEST_CASE("no graph under NoGradGuard")
{
    auto x = ag::parameter(Tensor::vector({1, 2}));
    ag::NoGradGuard ng;
    const auto y = ag::mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("evaluation is deterministic")
{
    Rng r1(5), r2(5);
    const auto x1 = random_tensor({2, 3, 8, 8}, r1), x2 = random_tensor({2, 3, 8, 8}, r2);
    const auto w = random_tensor({4, 3, 3, 3}, r1);
    auto run = [&](const Tensor& x) {
        auto wv = ag::parameter(w);
        const auto loss = ag::sum(ag::relu(ag::conv2d(ag::constant(x), wv, ag::Var(), 2, 1)));
        ag::backward(loss);
        return std::make_pair(loss.value(), wv.grad());
    };
    CHECK(x1 == x2);
    CHECK(run(x1) == run(x2));
}
