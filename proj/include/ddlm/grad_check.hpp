#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ddlm/tensor.hpp"

namespace ddlm {

// Compares the analytic gradient of f (a deterministic closure over the given
// parameter tensors) against central differences (f(x+eps) - f(x-eps)) / (2 eps),
// element-wise. Differences are judged relative to the gradient's own scale:
// for each parameter tensor the error is
//     max_i |ga_i - gn_i| / max(||ga||_inf, ||gn||_inf, 1e-8)
// and the worst over all tensors is returned. The 1e-8 denominator floor
// covers the degenerate all-zero-gradient case. Scalar reductions feed their
// double-precision accumulator into the quotient so the difference is limited
// by forward rounding, not the final sum.
inline double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                         double eps) {
    for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = f();
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        std::vector<double> g(p.numel(), 0.0);
        if (p.has_grad())
            for (size_t i = 0; i < g.size(); ++i) g[i] = double(p.impl()->grad[i]);
        analytic.push_back(std::move(g));
    }

    double worst = 0.0;
    autograd::NoGradGuard ng;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = const_cast<Tensor&>(params[pi]);
        double max_diff = 0.0, scale = 0.0;
        for (size_t i = 0; i < p.numel(); ++i) {
            const Real orig = p.data()[i];
            p.data()[i] = Real(double(orig) + eps);
            const double fp = f().item_f64();
            p.data()[i] = Real(double(orig) - eps);
            const double fm = f().item_f64();
            p.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double ga = analytic[pi][i];
            max_diff = std::max(max_diff, std::abs(ga - numeric));
            scale = std::max({scale, std::abs(ga), std::abs(numeric)});
        }
        worst = std::max(worst, max_diff / std::max(scale, 1e-8));
    }
    return worst;
}

}  // namespace ddlm
