#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sourcerer/layers.hpp"
#include "sourcerer/param_set.hpp"
#include "sourcerer/rng.hpp"
#include "sourcerer/tensor.hpp"

namespace sourcerer {

/// Architecture hyperparameters. Defaults give the full-size classifier:
/// three conv blocks of 64 length-5 filters, a 256-unit fully-connected
/// block and a 30-way softmax over 10-band series of 37 timesteps.
struct TempCNNConfig {
    int n_bands = 10;
    int n_timesteps = 37;
    int n_classes = 30;
    int conv_filters = 64;
    int kernel_len = 5;
    int fc_units = 256;
    float dropout_rate = 0.5f;

    void validate() const {
        if (n_bands <= 0 || n_timesteps <= 0 || n_classes <= 0 || conv_filters <= 0 ||
            kernel_len <= 0 || fc_units <= 0)
            throw std::invalid_argument("TempCNNConfig: all counts must be positive");
        if (kernel_len % 2 == 0)
            throw std::invalid_argument("TempCNNConfig: kernel_len must be odd");
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
            throw std::invalid_argument("TempCNNConfig: dropout_rate must be in [0, 1)");
    }

    std::size_t flat_features() const {
        return static_cast<std::size_t>(conv_filters) * static_cast<std::size_t>(n_timesteps);
    }

    bool operator==(const TempCNNConfig&) const = default;
};

/// The classifier: block order is conv -> batch norm -> dropout -> ReLU,
/// three times, then flatten -> dense -> batch norm -> dropout -> ReLU ->
/// output dense -> softmax. All tensors live in one ParamSet; BN running
/// statistics are the non-trainable entries. `bn_frozen` makes train-mode
/// forwards normalize with the stored running statistics (gamma/beta stay
/// trainable), which is how a source-trained model is carried into
/// adaptation.
struct TempCNNModel {
    TempCNNConfig config;
    ParamSet params;
    bool bn_frozen = false;

    static constexpr int kConvBlocks = 3;
    static constexpr int kBnLayers = 4;
};

namespace detail {

inline void he_uniform_fill(Tensor& t, std::size_t fan_in, RngStream& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
}

inline void add_bn_params(ParamSet& p, const std::string& prefix, std::size_t c) {
    p.add(prefix + ".gamma", Tensor::full({c}, 1.0f), true);
    p.add(prefix + ".beta", Tensor({c}), true);
    p.add(prefix + ".running_mean", Tensor({c}), false);
    p.add(prefix + ".running_var", Tensor::full({c}, 1.0f), false);
}

}  // namespace detail

inline TempCNNModel build_tempcnn(const TempCNNConfig& config, RngStream& rng) {
    config.validate();
    TempCNNModel m;
    m.config = config;
    const auto f = static_cast<std::size_t>(config.conv_filters);
    const auto b = static_cast<std::size_t>(config.n_bands);
    const auto k = static_cast<std::size_t>(config.kernel_len);
    const auto h = static_cast<std::size_t>(config.fc_units);
    const auto c = static_cast<std::size_t>(config.n_classes);
    const std::size_t d = config.flat_features();

    auto add_conv = [&](const std::string& name, std::size_t c_in) {
        Tensor w({f, c_in, k});
        detail::he_uniform_fill(w, c_in * k, rng);
        m.params.add(name + ".weight", std::move(w), true);
        m.params.add(name + ".bias", Tensor({f}), true);
    };
    add_conv("conv1", b);
    detail::add_bn_params(m.params, "bn1", f);
    add_conv("conv2", f);
    detail::add_bn_params(m.params, "bn2", f);
    add_conv("conv3", f);
    detail::add_bn_params(m.params, "bn3", f);

    Tensor dw({d, h});
    detail::he_uniform_fill(dw, d, rng);
    m.params.add("dense.weight", std::move(dw), true);
    m.params.add("dense.bias", Tensor({h}), true);
    detail::add_bn_params(m.params, "bn4", h);

    Tensor ow({h, c});
    detail::he_uniform_fill(ow, h, rng);
    m.params.add("output.weight", std::move(ow), true);
    m.params.add("output.bias", Tensor({c}), true);
    return m;
}

/// Everything the backward pass needs from one forward evaluation, plus the
/// pending running-stat updates (only populated by unfrozen train forwards).
struct TempCNNForward {
    Tensor logits;
    RunMode mode = RunMode::Eval;
    BnMode bn_mode = BnMode::FrozenStats;

    struct Block {
        Tensor input;  // into the conv / dense layer
        Tensor pre_bn;
        BatchNorm1dResult bn;
        DropoutResult drop;
    };
    std::array<Block, 3> conv_blocks;
    Block dense_block;
    Tensor output_input;  // features entering the output layer
};

/// Forward pass as a pure function of (params, input). Train mode draws the
/// dropout masks from `rng`; running statistics are returned inside the trace
/// and must be applied by the caller (see apply_bn_updates) so that model
/// state never changes behind the caller's back.
inline TempCNNForward tempcnn_forward(const TempCNNModel& m, const Tensor& batch, RunMode mode,
                                      RngStream& rng) {
    require_rank(batch, 3, "tempcnn forward input");
    const auto& cfg = m.config;
    if (batch.shape[1] != static_cast<std::size_t>(cfg.n_bands) ||
        batch.shape[2] != static_cast<std::size_t>(cfg.n_timesteps))
        throw ShapeError("tempcnn forward: input " + shape_string(batch) + " does not match " +
                         std::to_string(cfg.n_bands) + " bands x " +
                         std::to_string(cfg.n_timesteps) + " timesteps");

    TempCNNForward r;
    r.mode = mode;
    r.bn_mode = (mode == RunMode::Train && !m.bn_frozen) ? BnMode::BatchStats
                                                         : BnMode::FrozenStats;
    const std::size_t n = batch.shape[0];

    Tensor x = batch;
    for (int i = 0; i < TempCNNModel::kConvBlocks; ++i) {
        const std::string conv = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        auto& blk = r.conv_blocks[i];
        blk.input = std::move(x);
        blk.pre_bn = conv1d(blk.input, m.params.at(conv + ".weight"), m.params.at(conv + ".bias"));
        blk.bn = batch_norm1d(blk.pre_bn, m.params.at(bn + ".gamma"), m.params.at(bn + ".beta"),
                              m.params.at(bn + ".running_mean"), m.params.at(bn + ".running_var"),
                              r.bn_mode);
        blk.drop = dropout(blk.bn.output, cfg.dropout_rate, mode, rng);
        x = relu(blk.drop.output);
    }

    // flatten N x F x T -> N x (F*T); row-major keeps channel-major order
    x.shape = {n, cfg.flat_features()};

    auto& dblk = r.dense_block;
    dblk.input = std::move(x);
    dblk.pre_bn = dense(dblk.input, m.params.at("dense.weight"), m.params.at("dense.bias"));
    dblk.bn = batch_norm1d(dblk.pre_bn, m.params.at("bn4.gamma"), m.params.at("bn4.beta"),
                           m.params.at("bn4.running_mean"), m.params.at("bn4.running_var"),
                           r.bn_mode);
    dblk.drop = dropout(dblk.bn.output, cfg.dropout_rate, mode, rng);
    r.output_input = relu(dblk.drop.output);

    r.logits = dense(r.output_input, m.params.at("output.weight"), m.params.at("output.bias"));
    return r;
}

/// Copies the EMA-updated running statistics out of a batch-stats forward.
inline void apply_bn_updates(TempCNNModel& m, const TempCNNForward& fwd) {
    if (fwd.bn_mode != BnMode::BatchStats) return;
    for (int i = 0; i < TempCNNModel::kConvBlocks; ++i) {
        const std::string bn = "bn" + std::to_string(i + 1);
        m.params.at(bn + ".running_mean") = fwd.conv_blocks[i].bn.new_running_mean;
        m.params.at(bn + ".running_var") = fwd.conv_blocks[i].bn.new_running_var;
    }
    m.params.at("bn4.running_mean") = fwd.dense_block.bn.new_running_mean;
    m.params.at("bn4.running_var") = fwd.dense_block.bn.new_running_var;
}

/// Convenience forward: returns the logits; train mode consumes dropout draws
/// and (when statistics are not frozen) folds the batch statistics into the
/// model's running estimates.
inline Tensor forward(TempCNNModel& m, const Tensor& batch, RunMode mode, RngStream& rng) {
    TempCNNForward r = tempcnn_forward(m, batch, mode, rng);
    apply_bn_updates(m, r);
    return std::move(r.logits);
}

inline Tensor forward_eval(const TempCNNModel& m, const Tensor& batch) {
    RngStream unused(0);
    return tempcnn_forward(m, batch, RunMode::Eval, unused).logits;
}

/// Gradients of a scalar loss w.r.t. every parameter, given the upstream
/// gradient on the logits. The result mirrors the model's ParamSet entry for
/// entry; running-stat entries carry zero tensors.
inline ParamSet tempcnn_backward(const TempCNNModel& m, const TempCNNForward& fwd,
                                 const Tensor& grad_logits) {
    ParamSet grads;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const auto& e = m.params.entry(i);
        grads.add(e.name, Tensor(e.tensor.shape), e.trainable);
    }

    DenseGrads out_g = dense_backward(fwd.output_input, m.params.at("output.weight"), grad_logits);
    grads.at("output.weight") = std::move(out_g.weights);
    grads.at("output.bias") = std::move(out_g.bias);

    const auto& dblk = fwd.dense_block;
    Tensor g = relu_backward(dblk.drop.output, out_g.input);
    g = dropout_backward(dblk.drop, g);
    BatchNorm1dGrads bn4_g =
        batch_norm1d_backward(dblk.pre_bn, m.params.at("bn4.gamma"), dblk.bn, fwd.bn_mode, g);
    grads.at("bn4.gamma") = std::move(bn4_g.gamma);
    grads.at("bn4.beta") = std::move(bn4_g.beta);
    DenseGrads dense_g = dense_backward(dblk.input, m.params.at("dense.weight"), bn4_g.input);
    grads.at("dense.weight") = std::move(dense_g.weights);
    grads.at("dense.bias") = std::move(dense_g.bias);

    // unflatten N x (F*T) -> N x F x T
    g = std::move(dense_g.input);
    g.shape = {fwd.conv_blocks[0].input.shape[0], static_cast<std::size_t>(m.config.conv_filters),
               static_cast<std::size_t>(m.config.n_timesteps)};

    for (int i = TempCNNModel::kConvBlocks - 1; i >= 0; --i) {
        const std::string conv = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        const auto& blk = fwd.conv_blocks[i];
        g = relu_backward(blk.drop.output, g);
        g = dropout_backward(blk.drop, g);
        BatchNorm1dGrads bn_g =
            batch_norm1d_backward(blk.pre_bn, m.params.at(bn + ".gamma"), blk.bn, fwd.bn_mode, g);
        grads.at(bn + ".gamma") = std::move(bn_g.gamma);
        grads.at(bn + ".beta") = std::move(bn_g.beta);
        Conv1dGrads conv_g = conv1d_backward(blk.input, m.params.at(conv + ".weight"), bn_g.input);
        grads.at(conv + ".weight") = std::move(conv_g.weights);
        grads.at(conv + ".bias") = std::move(conv_g.bias);
        g = std::move(conv_g.input);
    }
    return grads;
}

}  // namespace sourcerer
