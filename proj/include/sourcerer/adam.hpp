#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sourcerer/param_set.hpp"

namespace sourcerer {

/// Adam optimizer state. First/second moments are kept per covered entry,
/// aligned by index with the ParamSet the state was built for. Entries not
/// covered (non-trainable ones, or ones masked out for finetuning) are never
/// touched by adam_step.
struct AdamState {
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::vector<char> active;

    static AdamState for_params(const ParamSet& params, double lr = 1e-3, double beta1 = 0.9,
                                double beta2 = 0.999, double epsilon = 1e-8) {
        std::vector<char> mask(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) mask[i] = params.entry(i).trainable;
        return masked(params, mask, lr, beta1, beta2, epsilon);
    }

    static AdamState masked(const ParamSet& params, const std::vector<char>& mask,
                            double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                            double epsilon = 1e-8) {
        if (mask.size() != params.size())
            throw std::invalid_argument("AdamState: mask size does not match parameter count");
        AdamState s;
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        s.active = mask;
        s.m.resize(params.size());
        s.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!mask[i]) continue;
            if (!params.entry(i).trainable)
                throw std::invalid_argument("AdamState: cannot optimize non-trainable entry " +
                                            params.entry(i).name);
            s.m[i] = Tensor(params.entry(i).tensor.shape);
            s.v[i] = Tensor(params.entry(i).tensor.shape);
        }
        return s;
    }
};

/// One Adam update with bias correction. Gradients are a ParamSet mirroring
/// `params`; non-finite gradient values abort with the parameter's name.
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
    params.require_aligned(grads, "adam_step");
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter count");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!state.active[i]) continue;
        auto& p = params.entry(i).tensor;
        const auto& g = grads.entry(i).tensor;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            if (!std::isfinite(gj))
                throw std::runtime_error("adam_step: non-finite gradient for parameter " +
                                         params.entry(i).name + " at index " +
                                         std::to_string(j));
            const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = static_cast<float>(p[j] - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
        }
    }
}

}  // namespace sourcerer
