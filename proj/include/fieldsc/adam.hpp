#pragma once

// Adam with bias correction over an ordered parameter list. The caller keeps
// the parameter order fixed across steps; moments are addressed by position.

#include <cmath>
#include <cstdint>
#include <vector>

#include "fieldsc/error.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::ad {

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::int64_t step = 0;
    std::vector<std::vector<float>> m, v;
};

inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const std::vector<float>*>& grads, AdamState& state,
                      const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw ShapeError("adam_step: parameter/gradient count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p]->size(), 0.0f);
            state.v[p].assign(params[p]->size(), 0.0f);
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state was initialized for a different parameter list");

    state.step += 1;
    double t = static_cast<double>(state.step);
    float corr1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta1), t));
    float corr2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta2), t));

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& value = params[p]->mutable_values();
        const auto& g = *grads[p];
        if (g.size() != value.size())
            throw ShapeError("adam_step: gradient size mismatch on parameter " + std::to_string(p));
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
            float mhat = m[i] / corr1;
            float vhat = v[i] / corr2;
            value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace fieldsc::ad
