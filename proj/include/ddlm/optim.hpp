#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ddlm/tensor.hpp"

namespace ddlm {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction. Moment buffers mirror
// the parameter shapes; the step counter strictly increases.
class AdamW {
public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].second.numel(), 0.0);
            v_[i].assign(params_[i].second.numel(), 0.0);
        }
    }

    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi].second;
            if (!p.has_grad()) continue;
            const std::vector<Real>& g = p.grad();
            std::vector<Real>& w = p.data();
            std::vector<double>& m = m_[pi];
            std::vector<double>& v = v_[pi];
            for (size_t i = 0; i < w.size(); ++i) {
                const double gi = double(g[i]);
                if (!std::isfinite(gi))
                    throw TrainingError("adamw_step: non-finite gradient in parameter '" +
                                        params_[pi].first + "' at element " + std::to_string(i));
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                double wi = double(w[i]);
                wi -= cfg_.lr * cfg_.weight_decay * wi;  // decoupled decay
                wi -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                w[i] = Real(wi);
            }
        }
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    // Moment access for checkpoint/inspection.
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    int64_t step_ = 0;
};

}  // namespace ddlm
