#pragma once

#include <array>
#include <string>

#include "sourcerer/layers.hpp"
#include "sourcerer/param_set.hpp"
#include "sourcerer/tempcnn.hpp"

namespace sourcerer::detail {

// Shared building blocks for models that reuse the convolutional trunk with
// extra heads (domain classifier, prototype classifier). Parameter names
// follow the TempCNN registry so a trained class pathway can be lifted back
// into a plain model.

struct ConvBlockTrace {
    Tensor input;
    Tensor pre_bn;
    BatchNorm1dResult bn;
    DropoutResult drop;
};

struct TrunkForward {
    std::array<ConvBlockTrace, 3> blocks;
    Tensor features;  // N x (filters * timesteps)
};

inline TrunkForward trunk_forward(const ParamSet& params, const TempCNNConfig& cfg,
                                  const Tensor& batch, RunMode mode, RngStream& rng,
                                  BnMode bn_mode) {
    TrunkForward r;
    Tensor x = batch;
    for (int i = 0; i < 3; ++i) {
        const std::string conv = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        auto& blk = r.blocks[i];
        blk.input = std::move(x);
        blk.pre_bn = conv1d(blk.input, params.at(conv + ".weight"), params.at(conv + ".bias"));
        blk.bn = batch_norm1d(blk.pre_bn, params.at(bn + ".gamma"), params.at(bn + ".beta"),
                              params.at(bn + ".running_mean"), params.at(bn + ".running_var"),
                              bn_mode);
        blk.drop = dropout(blk.bn.output, cfg.dropout_rate, mode, rng);
        x = relu(blk.drop.output);
    }
    x.shape = {batch.shape[0], cfg.flat_features()};
    r.features = std::move(x);
    return r;
}

inline void trunk_backward(const ParamSet& params, const TempCNNConfig& cfg,
                           const TrunkForward& fwd, BnMode bn_mode, Tensor grad_features,
                           ParamSet& grads) {
    Tensor g = std::move(grad_features);
    g.shape = {fwd.blocks[0].input.shape[0], static_cast<std::size_t>(cfg.conv_filters),
               static_cast<std::size_t>(cfg.n_timesteps)};
    for (int i = 2; i >= 0; --i) {
        const std::string conv = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        const auto& blk = fwd.blocks[i];
        g = relu_backward(blk.drop.output, g);
        g = dropout_backward(blk.drop, g);
        BatchNorm1dGrads bn_g =
            batch_norm1d_backward(blk.pre_bn, params.at(bn + ".gamma"), blk.bn, bn_mode, g);
        grads.at(bn + ".gamma") = std::move(bn_g.gamma);
        grads.at(bn + ".beta") = std::move(bn_g.beta);
        Conv1dGrads conv_g =
            conv1d_backward(blk.input, params.at(conv + ".weight"), bn_g.input);
        grads.at(conv + ".weight") = std::move(conv_g.weights);
        grads.at(conv + ".bias") = std::move(conv_g.bias);
        g = std::move(conv_g.input);
    }
}

inline void trunk_apply_bn(ParamSet& params, const TrunkForward& fwd) {
    for (int i = 0; i < 3; ++i) {
        const std::string bn = "bn" + std::to_string(i + 1);
        params.at(bn + ".running_mean") = fwd.blocks[i].bn.new_running_mean;
        params.at(bn + ".running_var") = fwd.blocks[i].bn.new_running_var;
    }
}

/// dense -> batch norm -> dropout -> ReLU, the fully-connected block shape
/// both the class pathway and extra heads use.
struct HeadTrace {
    Tensor input;
    Tensor pre_bn;
    BatchNorm1dResult bn;
    DropoutResult drop;
    Tensor output;
};

inline HeadTrace head_forward(const ParamSet& params, const std::string& dense_name,
                              const std::string& bn_name, const Tensor& input, RunMode mode,
                              float dropout_rate, RngStream& rng, BnMode bn_mode) {
    HeadTrace t;
    t.input = input;
    t.pre_bn = dense(t.input, params.at(dense_name + ".weight"), params.at(dense_name + ".bias"));
    t.bn = batch_norm1d(t.pre_bn, params.at(bn_name + ".gamma"), params.at(bn_name + ".beta"),
                        params.at(bn_name + ".running_mean"), params.at(bn_name + ".running_var"),
                        bn_mode);
    t.drop = dropout(t.bn.output, dropout_rate, mode, rng);
    t.output = relu(t.drop.output);
    return t;
}

inline Tensor head_backward(const ParamSet& params, const std::string& dense_name,
                            const std::string& bn_name, const HeadTrace& t, BnMode bn_mode,
                            const Tensor& grad_out, ParamSet& grads) {
    Tensor g = relu_backward(t.drop.output, grad_out);
    g = dropout_backward(t.drop, g);
    BatchNorm1dGrads bn_g =
        batch_norm1d_backward(t.pre_bn, params.at(bn_name + ".gamma"), t.bn, bn_mode, g);
    grads.at(bn_name + ".gamma") = std::move(bn_g.gamma);
    grads.at(bn_name + ".beta") = std::move(bn_g.beta);
    DenseGrads dense_g = dense_backward(t.input, params.at(dense_name + ".weight"), bn_g.input);
    grads.at(dense_name + ".weight") = std::move(dense_g.weights);
    grads.at(dense_name + ".bias") = std::move(dense_g.bias);
    return std::move(dense_g.input);
}

inline void head_apply_bn(ParamSet& params, const std::string& bn_name, const HeadTrace& t) {
    params.at(bn_name + ".running_mean") = t.bn.new_running_mean;
    params.at(bn_name + ".running_var") = t.bn.new_running_var;
}

inline ParamSet zero_grads_like(const ParamSet& params) {
    ParamSet grads;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry(i);
        grads.add(e.name, Tensor(e.tensor.shape), e.trainable);
    }
    return grads;
}

/// Cycles through a dataset in shuffled order, reshuffling at each wrap.
class CycleSampler {
public:
    CycleSampler(std::size_t n, RngStream rng) : n_(n), rng_(rng) { reshuffle(); }

    bool empty() const { return n_ == 0; }

    std::size_t next() {
        if (pos_ == order_.size()) reshuffle();
        return order_[pos_++];
    }

private:
    void reshuffle() {
        order_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.uniform_index(i)]);
        pos_ = 0;
    }

    std::size_t n_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
    RngStream rng_;
};

}  // namespace sourcerer::detail
