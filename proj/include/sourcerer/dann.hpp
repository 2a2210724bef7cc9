#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "sourcerer/methods.hpp"
#include "sourcerer/trunk.hpp"

namespace sourcerer {

/// Domain-adversarial model: the convolutional trunk feeds two
/// fully-connected-plus-softmax heads, one for the land cover class and one
/// for the binary domain label. The domain head is attached through a
/// gradient-reversal connection with coefficient alpha, so the trunk learns
/// features the domain classifier cannot separate. Class-pathway parameter
/// names match the plain model, which lets prediction run on the class head
/// alone.
struct DannModel {
    TempCNNConfig config;
    ParamSet params;
};

inline DannModel build_dann(const TempCNNConfig& config, RngStream& rng) {
    DannModel m;
    m.config = config;
    m.params = build_tempcnn(config, rng).params;
    const std::size_t d = config.flat_features();
    const std::size_t h = static_cast<std::size_t>(config.fc_units);
    Tensor dw({d, h});
    detail::he_uniform_fill(dw, d, rng);
    m.params.add("domain_dense.weight", std::move(dw), true);
    m.params.add("domain_dense.bias", Tensor({h}), true);
    detail::add_bn_params(m.params, "domain_bn", h);
    Tensor ow({h, 2});
    detail::he_uniform_fill(ow, h, rng);
    m.params.add("domain_output.weight", std::move(ow), true);
    m.params.add("domain_output.bias", Tensor({2}), true);
    return m;
}

/// Lifts the class pathway out as a plain model; prediction ignores the
/// domain head entirely.
inline TempCNNModel dann_class_model(const DannModel& m) {
    RngStream rng(0);
    TempCNNModel out = build_tempcnn(m.config, rng);
    for (auto& e : out.params) e.tensor = m.params.at(e.name);
    return out;
}

/// One batch worth of gradients. Class labels use -1 for unlabelled rows
/// (they contribute to the domain loss only). The trunk receives the class
/// gradients plus -alpha times the domain head's feature gradient.
struct DannStep {
    ParamSet grads;
    double class_loss = 0.0;
    double domain_loss = 0.0;
    detail::TrunkForward trunk;
    detail::HeadTrace class_head;
    detail::HeadTrace domain_head;
    bool class_pathway = false;
    bool domain_pathway = false;
};

inline DannStep dann_step(const DannModel& m, const Tensor& batch,
                          const std::vector<int>& class_labels,
                          const std::vector<int>& domain_labels, double alpha,
                          RngStream& dropout_rng, RngStream& domain_dropout_rng,
                          bool domain_pathway = true) {
    const std::size_t n = batch.shape[0];
    DannStep step;
    step.grads = detail::zero_grads_like(m.params);
    step.trunk = detail::trunk_forward(m.params, m.config, batch, RunMode::Train, dropout_rng,
                                       BnMode::BatchStats);

    Tensor grad_features({n, m.config.flat_features()});

    std::vector<std::size_t> labelled_rows;
    for (std::size_t i = 0; i < class_labels.size(); ++i)
        if (class_labels[i] >= 0) labelled_rows.push_back(i);

    if (labelled_rows.size() >= 2) {
        step.class_pathway = true;
        const std::size_t d = m.config.flat_features();
        Tensor sub({labelled_rows.size(), d});
        std::vector<int> sub_labels(labelled_rows.size());
        for (std::size_t i = 0; i < labelled_rows.size(); ++i) {
            std::copy_n(&step.trunk.features.data[labelled_rows[i] * d], d, &sub.data[i * d]);
            sub_labels[i] = class_labels[labelled_rows[i]];
        }
        step.class_head = detail::head_forward(m.params, "dense", "bn4", sub, RunMode::Train,
                                               m.config.dropout_rate, dropout_rng,
                                               BnMode::BatchStats);
        Tensor logits = dense(step.class_head.output, m.params.at("output.weight"),
                              m.params.at("output.bias"));
        auto ce = softmax_cross_entropy(logits, sub_labels);
        step.class_loss = ce.loss;
        DenseGrads out_g = dense_backward(step.class_head.output, m.params.at("output.weight"),
                                          softmax_cross_entropy_backward(ce.probs, sub_labels));
        step.grads.at("output.weight") = std::move(out_g.weights);
        step.grads.at("output.bias") = std::move(out_g.bias);
        Tensor sub_grad = detail::head_backward(m.params, "dense", "bn4", step.class_head,
                                                BnMode::BatchStats, out_g.input, step.grads);
        for (std::size_t i = 0; i < labelled_rows.size(); ++i)
            std::copy_n(&sub_grad.data[i * d], d, &grad_features.data[labelled_rows[i] * d]);
    }

    if (domain_pathway) {
        step.domain_pathway = true;
        step.domain_head = detail::head_forward(m.params, "domain_dense", "domain_bn",
                                                step.trunk.features, RunMode::Train,
                                                m.config.dropout_rate, domain_dropout_rng,
                                                BnMode::BatchStats);
        Tensor logits = dense(step.domain_head.output, m.params.at("domain_output.weight"),
                              m.params.at("domain_output.bias"));
        auto ce = softmax_cross_entropy(logits, domain_labels);
        step.domain_loss = ce.loss;
        DenseGrads out_g =
            dense_backward(step.domain_head.output, m.params.at("domain_output.weight"),
                           softmax_cross_entropy_backward(ce.probs, domain_labels));
        step.grads.at("domain_output.weight") = std::move(out_g.weights);
        step.grads.at("domain_output.bias") = std::move(out_g.bias);
        Tensor dom_grad =
            detail::head_backward(m.params, "domain_dense", "domain_bn", step.domain_head,
                                  BnMode::BatchStats, out_g.input, step.grads);
        // the reversal: the domain head itself descends its loss, the trunk
        // ascends it, scaled by alpha
        const float neg_alpha = static_cast<float>(-alpha);
        for (std::size_t i = 0; i < grad_features.numel(); ++i)
            grad_features[i] += neg_alpha * dom_grad[i];
    }

    detail::trunk_backward(m.params, m.config, step.trunk, BnMode::BatchStats,
                           std::move(grad_features), step.grads);
    return step;
}

inline void dann_apply_bn(DannModel& m, const DannStep& step) {
    detail::trunk_apply_bn(m.params, step.trunk);
    if (step.class_pathway) detail::head_apply_bn(m.params, "bn4", step.class_head);
    if (step.domain_pathway) detail::head_apply_bn(m.params, "domain_bn", step.domain_head);
}

struct DannResult {
    DannModel model;
    TempCNNModel class_model;
    TrainHistory history;
};

/// Trains on pooled data: every batch is half labelled source, half target.
/// Labelled target instances take the target half first; unlabelled ones fill
/// what remains. Runs one epoch of the pooled labelled data, so the update
/// count is driven by the source size, not the target quantity.
inline DannResult train_dann(const Dataset& source, const Dataset& target_labelled,
                             const Dataset& target_unlabelled, const MethodConfig& config) {
    if (source.empty())
        throw std::invalid_argument("train_dann: source domain is empty");
    if (target_labelled.empty() && target_unlabelled.empty())
        throw std::invalid_argument("train_dann: target domain is empty");

    const TempCNNConfig arch = detail::arch_for(source, config);
    RngStream init_rng = RngStream(config.seed).substream("init");
    DannResult out{build_dann(arch, init_rng), {}, {}};

    detail::Timer timer;
    const std::size_t batch_size = static_cast<std::size_t>(config.budget.batch_size);
    const std::size_t half = std::max<std::size_t>(1, batch_size / 2);
    const std::size_t pooled_labelled = source.size() + target_labelled.size();
    const std::size_t updates = (pooled_labelled + batch_size - 1) / batch_size;

    detail::CycleSampler src_sampler(source.size(),
                                     RngStream(config.seed).substream("batch_src"));
    // labelled-first target order, reshuffled per wrap
    const std::size_t n_lab = target_labelled.size(), n_unlab = target_unlabelled.size();
    detail::CycleSampler lab_sampler(n_lab, RngStream(config.seed).substream("batch_tgt_lab"));
    detail::CycleSampler unlab_sampler(n_unlab,
                                       RngStream(config.seed).substream("batch_tgt_unlab"));
    std::size_t target_cursor = 0;  // position within one pass over the target pool

    RngStream dropout_rng = RngStream(config.seed).substream("dropout");
    RngStream domain_dropout_rng = RngStream(config.seed).substream("dropout_domain");
    AdamState adam = AdamState::for_params(out.model.params, config.lr);

    const std::size_t bands = source.n_bands, steps = source.n_timesteps;
    for (std::size_t u = 0; u < updates; ++u) {
        const std::size_t n = 2 * half;
        Tensor batch({n, bands, steps});
        std::vector<int> class_labels(n, -1), domain_labels(n, 0);
        const std::size_t stride = bands * steps;
        for (std::size_t i = 0; i < half; ++i) {
            const Instance& inst = source.instances[src_sampler.next()];
            std::copy(inst.values.data.begin(), inst.values.data.end(),
                      batch.data.begin() + i * stride);
            class_labels[i] = inst.class_id;
            domain_labels[i] = 0;
        }
        for (std::size_t i = half; i < n; ++i) {
            const bool use_labelled = target_cursor < n_lab;
            target_cursor = (target_cursor + 1) % std::max<std::size_t>(1, n_lab + n_unlab);
            const Instance& inst = (use_labelled || n_unlab == 0)
                                       ? target_labelled.instances[lab_sampler.next()]
                                       : target_unlabelled.instances[unlab_sampler.next()];
            std::copy(inst.values.data.begin(), inst.values.data.end(),
                      batch.data.begin() + i * stride);
            class_labels[i] = (use_labelled || n_unlab == 0) ? inst.class_id : -1;
            domain_labels[i] = 1;
        }

        DannStep step = dann_step(out.model, batch, class_labels, domain_labels,
                                  config.dann_alpha, dropout_rng, domain_dropout_rng,
                                  config.dann_domain_head);
        dann_apply_bn(out.model, step);
        adam_step(out.model.params, step.grads, adam);
        out.history.losses.push_back(step.class_loss + step.domain_loss);
        ++out.history.updates;
    }
    out.history.seconds = timer.seconds();
    out.class_model = dann_class_model(out.model);
    return out;
}

}  // namespace sourcerer
