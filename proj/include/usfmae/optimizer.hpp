#pragma once

// AdamW with decoupled weight decay and the warm-up + cosine schedule.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/tensor.hpp"

namespace usfmae {

// biases, norm affines, tokens, and position tables take no decay
inline bool is_decay_exempt(const std::string& name) {
    auto ends_with = [&](const std::string& s) {
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    auto contains = [&](const std::string& s) { return name.find(s) != std::string::npos; };
    return ends_with(".bias") || ends_with(".gain") || contains("ln1.") || contains("ln2.") ||
           contains("_norm.") || contains("cls_token") || contains("mask_token") || contains("pos");
}

// linear ramp to base_lr over warmup_steps, then half-cosine decay to 0
inline double lr_at(long step, long total_steps, double base_lr, double warmup_fraction) {
    if (step < 0 || step >= total_steps)
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0," + std::to_string(total_steps) + ")");
    const long warmup_steps = std::lround(warmup_fraction * total_steps);
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / warmup_steps;
    const long span = total_steps - 1 - warmup_steps;
    if (span <= 0) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) / span;
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class Real>
class AdamW {
public:
    struct ParamRef {
        std::string name;
        Tensor<Real> tensor;
        bool decay_exempt;
    };

    AdamW(Real weight_decay, Real beta1 = Real(0.9), Real beta2 = Real(0.999), Real eps = Real(1e-8))
        : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void add_param(const std::string& name, Tensor<Real> t) {
        params_.push_back({name, std::move(t), is_decay_exempt(name)});
        m_.emplace_back(params_.back().tensor.numel(), Real(0));
        v_.emplace_back(params_.back().tensor.numel(), Real(0));
    }

    const std::vector<ParamRef>& params() const { return params_; }
    long step_count() const { return step_count_; }

    void step(Real lr) {
        ++step_count_;
        const Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(step_count_));
        const Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(step_count_));
        for (size_t p = 0; p < params_.size(); ++p) {
            auto& ref = params_[p];
            auto& theta = ref.tensor.data();
            const auto& g = ref.tensor.grad();
            for (size_t i = 0; i < theta.size(); ++i) {
                if (!std::isfinite(g[i]))
                    throw NumericalError("non-finite gradient in parameter '" + ref.name + "'");
                m_[p][i] = beta1_ * m_[p][i] + (Real(1) - beta1_) * g[i];
                v_[p][i] = beta2_ * v_[p][i] + (Real(1) - beta2_) * g[i] * g[i];
                const Real mhat = m_[p][i] / bc1;
                const Real vhat = v_[p][i] / bc2;
                Real update = mhat / (std::sqrt(vhat) + eps_);
                if (!ref.decay_exempt) update += weight_decay_ * theta[i];
                theta[i] -= lr * update;
            }
        }
    }

    // optimizer-step boundary: gradients accumulate between calls
    void zero_grad() {
        for (auto& ref : params_) ref.tensor.zero_grad();
    }

private:
    Real weight_decay_;
    Real beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<ParamRef> params_;
    std::vector<std::vector<Real>> m_, v_;
};

}  // namespace usfmae
