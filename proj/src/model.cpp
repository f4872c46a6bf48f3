#include "cafo/model.hpp"

#include "cafo/error.hpp"
#include "cafo/rng.hpp"

#include <cmath>

namespace cafo {

using json = nlohmann::json;

void DepCaConfig::validate() const
{
    if (gamma < 1) throw ShapeError("depca gamma must be >= 1");
    if (kernel < 1) throw ShapeError("depca kernel must be >= 1");
    if (stride < 1) throw ShapeError("depca stride must be >= 1");
}

json to_json(const ModelConfig& cfg)
{
    json blocks = json::array();
    for (const auto& b : cfg.backbone.blocks)
        blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel}, {"stride", b.stride}});
    return {{"channels", cfg.channels},
            {"side", cfg.side},
            {"depca", {{"gamma", cfg.depca.gamma}, {"kernel", cfg.depca.kernel}, {"stride", cfg.depca.stride},
                       {"pad", cfg.depca.pad}}},
            {"backbone", {{"blocks", blocks}, {"hidden", cfg.backbone.hidden}, {"classes", cfg.backbone.classes}}}};
}

ModelConfig model_config_from_json(const json& j)
{
    ModelConfig cfg;
    cfg.channels = j.at("channels").get<std::size_t>();
    cfg.side = j.at("side").get<std::size_t>();
    const auto& d = j.at("depca");
    cfg.depca.gamma = d.at("gamma").get<std::size_t>();
    cfg.depca.kernel = d.at("kernel").get<std::size_t>();
    cfg.depca.stride = d.at("stride").get<std::size_t>();
    cfg.depca.pad = d.at("pad").get<long>();
    const auto& b = j.at("backbone");
    cfg.backbone.blocks.clear();
    for (const auto& blk : b.at("blocks"))
        cfg.backbone.blocks.push_back({blk.at("out_channels").get<std::size_t>(), blk.at("kernel").get<std::size_t>(),
                                       blk.at("stride").get<std::size_t>()});
    cfg.backbone.hidden = b.at("hidden").get<std::size_t>();
    cfg.backbone.classes = b.at("classes").get<std::size_t>();
    return cfg;
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    // PyTorch's default layer init: bound = 1 / sqrt(fan_in)
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

} // namespace

CafoModel::CafoModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
{
    cfg_.depca.validate();
    if (cfg_.channels == 0 || cfg_.side == 0) throw ShapeError("model needs at least one channel and pixel");
    if (cfg_.backbone.classes < 2) throw ShapeError("model needs at least two classes");
    Rng rng(derive_seed(seed, 0x1417));
    auto add = [&](std::string name, Tensor t) {
        names_.push_back(std::move(name));
        params_.push_back(ag::parameter(std::move(t)));
    };
    const auto& dc = cfg_.depca;
    add("depca.weight", kaiming_uniform({dc.gamma * cfg_.channels, dc.kernel, dc.kernel}, dc.kernel * dc.kernel, rng));
    add("depca.bias", Tensor({dc.gamma * cfg_.channels}));

    std::size_t in = cfg_.channels;
    std::size_t side = cfg_.side;
    for (std::size_t i = 0; i < cfg_.backbone.blocks.size(); ++i) {
        const auto& b = cfg_.backbone.blocks[i];
        if (b.kernel < 1 || b.stride < 1 || b.out_channels < 1) throw ShapeError("invalid conv block");
        const std::string p = "conv" + std::to_string(i);
        add(p + ".weight", kaiming_uniform({b.out_channels, in, b.kernel, b.kernel}, in * b.kernel * b.kernel, rng));
        add(p + ".bias", Tensor({b.out_channels}));
        side = (side + 2 * (b.kernel / 2) - b.kernel) / b.stride + 1;
        in = b.out_channels;
    }
    if (cfg_.backbone.hidden > 0) {
        add("hidden.weight", kaiming_uniform({in, cfg_.backbone.hidden}, in, rng));
        add("hidden.bias", Tensor({cfg_.backbone.hidden}));
        in = cfg_.backbone.hidden;
    }
    add("fc.weight", kaiming_uniform({in, cfg_.backbone.classes}, in, rng));
    add("fc.bias", Tensor({cfg_.backbone.classes}));
}

std::size_t CafoModel::num_values() const
{
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
}

std::size_t CafoModel::param_index(const std::string& name) const
{
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return i;
    throw std::out_of_range("no parameter named " + name);
}

ag::Var CafoModel::depca(const ag::Var& x) const
{
    if (x.value().rank() != 4 || x.shape()[1] != cfg_.channels)
        throw ShapeError("depca expects [n, " + std::to_string(cfg_.channels) + ", L, L], got " +
                         shape_str(x.shape()));
    const auto& dc = cfg_.depca;
    const std::size_t n = x.shape()[0];
    const std::size_t d = cfg_.channels;
    ag::Var f = ag::depthwise_conv2d(x, params_[0], params_[1], dc.gamma, dc.stride, dc.padding());
    // [n, gamma*D] -> [n, gamma, D] -> mean over gamma
    ag::Var avg = ag::mean_axis(ag::reshape(ag::global_avg_pool(f), {n, dc.gamma, d}), 1);
    ag::Var mx = ag::mean_axis(ag::reshape(ag::global_max_pool(f), {n, dc.gamma, d}), 1);
    return ag::sigmoid(ag::add(avg, mx));
}

CafoModel::Output CafoModel::forward(const ag::Var& x) const
{
    Output out;
    out.attention = depca(x);
    ag::Var h = apply_attention(x, out.attention);
    std::size_t k = 2;
    for (const auto& b : cfg_.backbone.blocks) {
        h = ag::relu(ag::conv2d(h, params_[k], params_[k + 1], b.stride, b.kernel / 2));
        k += 2;
    }
    h = ag::global_avg_pool(h);
    if (cfg_.backbone.hidden > 0) {
        h = ag::relu(ag::bias_add(ag::matmul(h, params_[k]), params_[k + 1]));
        k += 2;
    }
    out.logits = ag::bias_add(ag::matmul(h, params_[k]), params_[k + 1]);
    return out;
}

ag::Var apply_attention(const ag::Var& x, const ag::Var& a) { return ag::scale_channels(x, a); }

namespace {

ag::Var as_batch(const Tensor& stack)
{
    if (stack.rank() != 3) throw ShapeError("expected a D x L x L stack, got " + shape_str(stack.shape()));
    Shape s{1};
    s.insert(s.end(), stack.shape().begin(), stack.shape().end());
    return ag::constant(stack.reshaped(s));
}

} // namespace

Tensor depca_forward(const CafoModel& model, const Tensor& stack)
{
    ag::NoGradGuard ng;
    const Tensor a = model.depca(as_batch(stack)).value();
    return a.reshaped({a.size()});
}

Tensor model_forward(const CafoModel& model, const Tensor& stack)
{
    ag::NoGradGuard ng;
    const Tensor l = model.forward(as_batch(stack)).logits.value();
    return l.reshaped({l.size()});
}

} // namespace cafo
