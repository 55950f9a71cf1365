#pragma once

#include <cmath>

#include "dpfa/mlp.hpp"

namespace dpfa {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double decay = 0.7;        // staircase multiplier
    int64_t decay_every = 20;  // epochs
};

// base_lr * decay^floor(epoch / decay_every)
inline double lr_at(int64_t epoch, const AdamConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
    if (cfg.decay_every <= 0) return cfg.lr;
    return cfg.lr * std::pow(cfg.decay, static_cast<double>(epoch / cfg.decay_every));
}

template <typename T>
struct AdamState {
    struct Slot {
        std::vector<T> m, v;
    };
    std::vector<Slot> slots;  // aligned with the parameter list
    int64_t step = 0;

    void init(const std::vector<ParamRef<T>>& params) {
        slots.clear();
        slots.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            slots[i].m.assign(params[i].tensor->data.size(), T(0));
            slots[i].v.assign(params[i].tensor->data.size(), T(0));
        }
        step = 0;
    }
};

// One bias-corrected moment update over the full parameter list.
// `grads` is aligned with `params`; non-finite gradients abort with the
// offending parameter's name.
template <typename T>
void adam_step(const std::vector<ParamRef<T>>& params, const std::vector<std::vector<T>>& grads,
               AdamState<T>& state, const AdamConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != state.slots.size())
        throw std::invalid_argument("adam_step: params, grads and state must align");
    ++state.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t p = 0; p < params.size(); ++p) {
        Tensor<T>& t = *params[p].tensor;
        const std::vector<T>& g = grads[p];
        if (g.size() != t.data.size())
            throw std::invalid_argument("adam_step: gradient size mismatch for " + params[p].name);
        auto& slot = state.slots[p];
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            if (!std::isfinite(gi))
                throw std::runtime_error("adam_step: non-finite gradient in " + params[p].name);
            const double m = b1 * static_cast<double>(slot.m[i]) + (1.0 - b1) * gi;
            const double v = b2 * static_cast<double>(slot.v[i]) + (1.0 - b2) * gi * gi;
            slot.m[i] = static_cast<T>(m);
            slot.v[i] = static_cast<T>(v);
            const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
            t.data[i] = static_cast<T>(static_cast<double>(t.data[i]) - update);
        }
    }
}

}  // namespace dpfa
