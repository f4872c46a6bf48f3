#include "cafo/optim.hpp"

#include "cafo/error.hpp"

#include <cmath>

namespace cafo {

void AdamW::step(std::vector<ag::Var>& params)
{
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.shape(), 0.0);
            v_.emplace_back(p.shape(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(steps_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& w = params[k].mutable_value();
        if (m_[k].shape() != w.shape()) throw ShapeError("AdamW: parameter shape changed between steps");
        const Tensor& g = params[k].grad();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void AdamW::zero_grad(std::vector<ag::Var>& params) const
{
    for (auto& p : params) p.zero_grad();
}

} // namespace cafo
