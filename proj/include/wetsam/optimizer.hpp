#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wetsam/errors.hpp"
#include "wetsam/nn.hpp"

namespace wetsam {

struct AdamWConfig {
    double lr = 1e-3;
    double weight_decay = 4e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // 0 disables clipping

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
        if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0,1)");
        if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
        if (clip_norm < 0.0) throw ConfigError("clip norm must be non-negative");
    }
};

/// Outcome of one optimizer step.
struct StepInfo {
    bool applied = false;
    bool clipped = false;
    double grad_norm = 0.0;
};

/// Adaptive moments with bias correction and weight decay applied directly to the weights.
/// Frozen parameters are never touched. Moments are kept in double.
template <class Real>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const AdamWConfig& config() const noexcept { return cfg_; }
    std::size_t steps() const noexcept { return t_; }
    std::size_t skipped() const noexcept { return skipped_; }
    std::size_t clipped() const noexcept { return clipped_; }

    /// Updates every trainable parameter from its accumulated gradient, then clears the gradients.
    StepInfo step(ParameterStore<Real>& store) {
        auto& params = store.all();
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
        }
        if (m_.size() != params.size()) throw ConfigError("optimizer bound to a different parameter set");

        StepInfo info;
        double sq = 0.0;
        for (auto& p : params) {
            if (!p.trainable || !p.tensor.has_grad()) continue;
            for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        }
        info.grad_norm = std::sqrt(sq);
        if (!std::isfinite(info.grad_norm)) {
            ++skipped_;
            store.zero_grad();
            return info;
        }
        double factor = 1.0;
        if (cfg_.clip_norm > 0.0 && info.grad_norm > cfg_.clip_norm) {
            factor = cfg_.clip_norm / info.grad_norm;
            info.clipped = true;
            ++clipped_;
        }

        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.trainable) continue;
            auto w = p.tensor.mutable_values();
            auto& m = m_[i];
            auto& v = v_[i];
            if (m.size() != w.size()) {
                m.assign(w.size(), 0.0);
                v.assign(w.size(), 0.0);
            }
            const bool has = p.tensor.has_grad();
            std::span<const Real> grad;
            if (has) grad = p.tensor.grad();
            for (std::size_t j = 0; j < w.size(); ++j) {
                const double g = has ? static_cast<double>(grad[j]) * factor : 0.0;
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[j] / bc1, vhat = v[j] / bc2;
                double x = static_cast<double>(w[j]);
                x -= cfg_.lr * cfg_.weight_decay * x;
                x -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                w[j] = static_cast<Real>(x);
            }
        }
        store.zero_grad();
        info.applied = true;
        return info;
    }

    /// Raw moment state, for checkpointing.
    const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
    const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }

private:
    AdamWConfig cfg_;
    std::size_t t_ = 0, skipped_ = 0, clipped_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace wetsam
