#include "doctest.h"

#include "cafo/optim.hpp"

#include <cmath>

using namespace cafo;

TEST_CASE("zero gradient and no decay leave parameters alone")
{
    std::vector<ag::Var> p{ag::parameter(Tensor::vector({1.0, -2.0}))};
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    p[0].zero_grad();
    opt.step(p);
    CHECK(p[0].value() == Tensor::vector({1.0, -2.0}));
    CHECK(opt.first_moments()[0] == Tensor::vector({0.0, 0.0}));
    CHECK(opt.second_moments()[0] == Tensor::vector({0.0, 0.0}));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("first bias-corrected step moves by about lr")
{
    auto w = ag::parameter(Tensor::scalar(0.5));
    std::vector<ag::Var> p{w};
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    ag::backward(w); // d w / d w = 1
    opt.step(p);
    CHECK(p[0].value().item() == doctest::Approx(0.5 - 0.1).epsilon(1e-6));
}

TEST_CASE("decoupled weight decay")
{
    auto w = ag::parameter(Tensor::scalar(2.0));
    std::vector<ag::Var> p{w};
    AdamW opt({0.01, 0.9, 0.999, 1e-8, 0.5});
    p[0].zero_grad();
    opt.step(p);
    CHECK(p[0].value().item() == doctest::Approx(2.0 - 0.01 * 0.5 * 2.0).epsilon(1e-14));
}

TEST_CASE("defaults")
{
    const AdamWConfig c;
    CHECK(c.lr == 0.002);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.999);
}
