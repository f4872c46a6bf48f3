#pragma once

#include "cafo/autograd.hpp"
#include "cafo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace cafo::testing {

using Fn = std::function<ag::Var(const std::vector<ag::Var>&)>;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = u(rng);
    return t;
}

/// Values bounded away from zero (for relu / abs kinks).
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double margin = 0.1)
{
    std::uniform_real_distribution<double> u(margin, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
    return t;
}

/// Distinct values spaced well apart (for max kinks).
inline Tensor random_distinct(Shape shape, Rng& rng)
{
    Tensor t(std::move(shape));
    std::vector<double> vals(t.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 2.0 * double(i) / double(vals.size());
    std::shuffle(vals.begin(), vals.end(), rng);
    for (std::size_t i = 0; i < vals.size(); ++i) t[i] = vals[i];
    return t;
}

/// Largest norm-wise relative error ||analytic - numeric|| / max(||a||, ||n||)
/// over all inputs, central differences with step h.
inline double gradcheck(const Fn& f, const std::vector<Tensor>& inputs, double h = 1e-5)
{
    std::vector<ag::Var> vars;
    for (const auto& t : inputs) vars.push_back(ag::parameter(t));
    ag::backward(f(vars));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor analytic = vars[k].grad();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                ag::NoGradGuard ng;
                std::vector<ag::Var> shifted;
                for (std::size_t m = 0; m < inputs.size(); ++m) {
                    Tensor t = inputs[m];
                    if (m == k) t[i] += delta;
                    shifted.push_back(ag::constant(std::move(t)));
                }
                return f(shifted).value().item();
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
        const double denom = std::sqrt(std::max(a2, n2));
        if (denom > 0.0) worst = std::max(worst, std::sqrt(diff2) / denom);
    }
    return worst;
}

} // namespace cafo::testing
