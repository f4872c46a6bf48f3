#pragma once

#include "cafo/autograd.hpp"

#include <vector>

namespace cafo {

struct AdamWConfig {
    double lr = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. Moments are per-parameter, allocated on the
/// first step. Parameters without a gradient are treated as having a zero one.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(std::vector<ag::Var>& params);
    void zero_grad(std::vector<ag::Var>& params) const;

    long step_count() const { return steps_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    long steps_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

} // namespace cafo
