#include "doctest.h"
#include "gradcheck.hpp"

#include "cafo/error.hpp"
#include "cafo/model.hpp"

#include <cmath>
#include <filesystem>

using namespace cafo;
using cafo::testing::gradcheck;
using cafo::testing::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t d, std::size_t side)
{
    ModelConfig c;
    c.channels = d;
    c.side = side;
    c.backbone.blocks = {{4, 3, 2}};
    c.backbone.classes = 3;
    return c;
}

void zero_all(CafoModel& m)
{
    for (auto& p : m.params()) p.mutable_value().fill(0.0);
}

} // namespace

TEST_CASE("zero DepCA weights give attention 0.5")
{
    CafoModel m(tiny_config(5, 8), 1);
    m.params()[0].mutable_value().fill(0.0);
    m.params()[1].mutable_value().fill(0.0);
    Rng rng(1);
    const auto a = depca_forward(m, random_tensor({5, 8, 8}, rng));
    CHECK(a == Tensor({5}, 0.5));
}

TEST_CASE("single 1x1 unit filter on an all-ones image")
{
    ModelConfig c = tiny_config(1, 4);
    c.depca.gamma = 1;
    c.depca.kernel = 1;
    CafoModel m(c, 1);
    m.params()[0].mutable_value().fill(1.0);
    m.params()[1].mutable_value().fill(0.0);
    const auto a = depca_forward(m, Tensor({1, 4, 4}, 1.0));
    CHECK(a[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
    CHECK(a[0] == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("SquidGame-sized DepCA shapes")
{
    CafoModel m(ModelConfig{}, 42);
    CHECK(m.params()[0].shape() == Shape{90, 3, 3});
    Rng rng(2);
    const auto x = ag::constant(random_tensor({2, 30, 32, 32}, rng));
    const auto out = m.forward(x);
    CHECK(out.attention.shape() == Shape{2, 30});
    CHECK(out.logits.shape() == Shape{2, 3});
    for (double v : out.attention.value().data()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("apply_attention")
{
    Rng rng(3);
    const auto x = random_tensor({2, 3, 4, 4}, rng);
    CHECK(apply_attention(ag::constant(x), ag::constant(Tensor({2, 3}, 1.0))).value() == x);
    Tensor a({2, 3}, 1.0);
    a.at(1, 2) = 0.0;
    const auto y = apply_attention(ag::constant(x), ag::constant(a)).value();
    for (std::size_t p = 0; p < 16; ++p) CHECK(y[(1 * 3 + 2) * 16 + p] == 0.0);
    const auto h = apply_attention(ag::constant(Tensor({1, 1, 2, 2}, 2.0)), ag::constant(Tensor({1, 1}, 0.5)));
    CHECK(h.value() == Tensor({1, 1, 2, 2}, 1.0));
    CHECK_THROWS_AS(apply_attention(ag::constant(x), ag::constant(Tensor({2, 2}))), ShapeError);

    // linear in a and in the stack
    const auto a1 = random_tensor({2, 3}, rng), a2 = random_tensor({2, 3}, rng);
    Tensor sum_a({2, 3});
    for (std::size_t i = 0; i < 6; ++i) sum_a[i] = a1[i] + a2[i];
    const auto lhs = apply_attention(ag::constant(x), ag::constant(sum_a)).value();
    const auto r1 = apply_attention(ag::constant(x), ag::constant(a1)).value();
    const auto r2 = apply_attention(ag::constant(x), ag::constant(a2)).value();
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(r1[i] + r2[i]).epsilon(1e-12));
}

TEST_CASE("zeroed classifier gives a uniform softmax")
{
    CafoModel m(tiny_config(3, 8), 4);
    m.params()[m.param_index("fc.weight")].mutable_value().fill(0.0);
    m.params()[m.param_index("fc.bias")].mutable_value().fill(0.0);
    Rng rng(4);
    const auto logits = model_forward(m, random_tensor({3, 8, 8}, rng));
    CHECK(logits == Tensor({3}, 0.0));
    zero_all(m);
    CHECK(model_forward(m, random_tensor({3, 8, 8}, rng)) == Tensor({3}, 0.0));
}

TEST_CASE("initialisation: seeded, fan-in scaled, zero biases")
{
    const CafoModel a(ModelConfig{}, 42), b(ModelConfig{}, 42), c(ModelConfig{}, 43);
    for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value() == b.params()[i].value());
    CHECK(a.params()[0].value() != c.params()[0].value());
    CHECK(a.params()[1].value() == Tensor({90}, 0.0));

    auto sd = [](const Tensor& t) {
        double s = 0, s2 = 0;
        for (double v : t.data()) {
            s += v;
            s2 += v * v;
        }
        const double n = double(t.size());
        return std::sqrt(s2 / n - (s / n) * (s / n));
    };
    ModelConfig small = tiny_config(30, 32), large = tiny_config(30, 32);
    large.depca.kernel = 7;
    const CafoModel ms(small, 1), ml(large, 1);
    CHECK(sd(ml.params()[0].value()) < sd(ms.params()[0].value()));
    CHECK(sd(ms.params()[0].value()) == doctest::Approx(1.0 / 3.0 / std::sqrt(3.0)).epsilon(0.05));
}

TEST_CASE("gradient of the full model matches finite differences")
{
    for (int trial = 0; trial < 10; ++trial) {
        Rng rng(50 + trial);
        ModelConfig cfg = tiny_config(3, 6);
        cfg.depca.gamma = 2;
        cfg.backbone.hidden = trial % 2 == 0 ? 0 : 4;
        CafoModel m(cfg, 60 + trial);
        const auto x = random_tensor({4, 3, 6, 6}, rng);
        const std::vector<int> labels{0, 1, 2, 1};
        std::vector<Tensor> values;
        for (const auto& p : m.params()) values.push_back(p.value());
        const double err = gradcheck(
            [&](const std::vector<ag::Var>& ps) {
                CafoModel local = m;
                for (std::size_t i = 0; i < ps.size(); ++i) local.params()[i] = ps[i];
                const auto out = local.forward(ag::constant(x));
                return ag::softmax_cross_entropy(out.logits, labels);
            },
            values);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("permuting channels permutes attention")
{
    Rng rng(8);
    const std::size_t d = 4;
    CafoModel m(tiny_config(d, 6), 9);
    const auto x = random_tensor({d, 6, 6}, rng);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor xp({d, 6, 6});
    for (std::size_t j = 0; j < d; ++j) std::copy_n(x.ptr() + perm[j] * 36, 36, xp.ptr() + j * 36);
    CafoModel mp = m;
    mp.params()[0] = ag::parameter(m.params()[0].value());
    mp.params()[1] = ag::parameter(m.params()[1].value());
    Tensor& w = mp.params()[0].mutable_value();
    Tensor& b = mp.params()[1].mutable_value();
    const std::size_t gamma = m.config().depca.gamma;
    for (std::size_t g = 0; g < gamma; ++g)
        for (std::size_t j = 0; j < d; ++j) {
            std::copy_n(m.params()[0].value().ptr() + (g * d + perm[j]) * 9, 9, w.ptr() + (g * d + j) * 9);
            b[g * d + j] = m.params()[1].value()[g * d + perm[j]];
        }
    const auto a = depca_forward(m, x);
    const auto ap = depca_forward(mp, xp);
    for (std::size_t j = 0; j < d; ++j) CHECK(ap[j] == a[perm[j]]);
}

TEST_CASE("checkpoint round trip")
{
    CafoModel m(tiny_config(3, 8), 5);
    const auto file = std::filesystem::temp_directory_path() / "cafo_test_ckpt.bin";
    save_checkpoint(m, file, {{"epoch", 3}, {"seed", 5}});
    nlohmann::json header;
    const CafoModel back = load_checkpoint(file, &header);
    CHECK(header["epoch"] == 3);
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params()[i].value() == m.params()[i].value());
    std::filesystem::resize_file(file, std::filesystem::file_size(file) - 8);
    CHECK_THROWS_AS(load_checkpoint(file), DataError);
    std::filesystem::remove(file);
}
