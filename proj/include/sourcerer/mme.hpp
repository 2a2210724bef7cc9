#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sourcerer/methods.hpp"
#include "sourcerer/trunk.hpp"

namespace sourcerer {

/// Minimax-entropy model: the trunk plus fully-connected block produce a
/// feature vector; classification happens through class prototypes compared
/// to the L2-normalized features under a temperature. The adversarial part
/// alternates supervised updates on pooled labelled batches with entropy
/// updates on unlabelled target batches, where the prototypes ascend the
/// entropy and the feature extractor descends it (sign flip, coefficient
/// mme_lambda).
struct MmeModel {
    TempCNNConfig config;
    ParamSet params;  // tempcnn trunk + dense/bn4 + prototypes
    double temperature = 0.05;
};

inline MmeModel build_mme(const TempCNNConfig& config, double temperature, RngStream& rng) {
    MmeModel m;
    m.config = config;
    m.temperature = temperature;
    const auto f = static_cast<std::size_t>(config.conv_filters);
    const auto b = static_cast<std::size_t>(config.n_bands);
    const auto k = static_cast<std::size_t>(config.kernel_len);
    const auto h = static_cast<std::size_t>(config.fc_units);
    const auto c = static_cast<std::size_t>(config.n_classes);

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
    Tensor dw({config.flat_features(), h});
    detail::he_uniform_fill(dw, config.flat_features(), rng);
    m.params.add("dense.weight", std::move(dw), true);
    m.params.add("dense.bias", Tensor({h}), true);
    detail::add_bn_params(m.params, "bn4", h);
    Tensor pw({c, h});
    detail::he_uniform_fill(pw, h, rng);
    m.params.add("prototypes.weight", std::move(pw), true);
    return m;
}

namespace detail {

inline double smooth_norm(const float* v, std::size_t n) {
    double s = 1e-12;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(v[i]) * v[i];
    return std::sqrt(s);
}

struct CosineForward {
    Tensor logits;      // N x C
    Tensor fhat;        // N x H, normalized features
    Tensor phat;        // C x H, normalized prototypes
    std::vector<double> fnorm;
    std::vector<double> pnorm;
};

inline CosineForward cosine_logits(const Tensor& features, const Tensor& prototypes,
                                   double temperature) {
    const std::size_t n = features.shape[0], h = features.shape[1], c = prototypes.shape[0];
    CosineForward r;
    r.fhat = Tensor({n, h});
    r.phat = Tensor({c, h});
    r.fnorm.resize(n);
    r.pnorm.resize(c);
    for (std::size_t i = 0; i < n; ++i) {
        r.fnorm[i] = smooth_norm(&features.data[i * h], h);
        for (std::size_t j = 0; j < h; ++j)
            r.fhat.at(i, j) = static_cast<float>(features.at(i, j) / r.fnorm[i]);
    }
    for (std::size_t i = 0; i < c; ++i) {
        r.pnorm[i] = smooth_norm(&prototypes.data[i * h], h);
        for (std::size_t j = 0; j < h; ++j)
            r.phat.at(i, j) = static_cast<float>(prototypes.at(i, j) / r.pnorm[i]);
    }
    r.logits = Tensor({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < h; ++j)
                acc += static_cast<double>(r.fhat.at(i, j)) * r.phat.at(k, j);
            r.logits.at(i, k) = static_cast<float>(acc / temperature);
        }
    return r;
}

struct CosineGrads {
    Tensor features;
    Tensor prototypes;
};

inline CosineGrads cosine_backward(const CosineForward& fwd, const Tensor& grad_logits,
                                   double temperature) {
    const std::size_t n = fwd.fhat.shape[0], h = fwd.fhat.shape[1], c = fwd.phat.shape[0];
    CosineGrads g{Tensor({n, h}), Tensor({c, h})};
    // d fhat = grad_logits . phat / T, then project through the normalization
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> dfhat(h, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            const double gl = grad_logits.at(i, k) / temperature;
            for (std::size_t j = 0; j < h; ++j) dfhat[j] += gl * fwd.phat.at(k, j);
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < h; ++j) dot += dfhat[j] * fwd.fhat.at(i, j);
        for (std::size_t j = 0; j < h; ++j)
            g.features.at(i, j) =
                static_cast<float>((dfhat[j] - dot * fwd.fhat.at(i, j)) / fwd.fnorm[i]);
    }
    for (std::size_t k = 0; k < c; ++k) {
        std::vector<double> dphat(h, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double gl = grad_logits.at(i, k) / temperature;
            for (std::size_t j = 0; j < h; ++j) dphat[j] += gl * fwd.fhat.at(i, j);
        }
        double dot = 0.0;
        for (std::size_t j = 0; j < h; ++j) dot += dphat[j] * fwd.phat.at(k, j);
        for (std::size_t j = 0; j < h; ++j)
            g.prototypes.at(k, j) =
                static_cast<float>((dphat[j] - dot * fwd.phat.at(k, j)) / fwd.pnorm[k]);
    }
    return g;
}

}  // namespace detail

/// Mean per-sample entropy of softmax rows. Uniform rows give ln C.
inline double mean_entropy(const Tensor& probs) {
    const std::size_t n = probs.shape[0], c = probs.shape[1];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double p = probs.at(i, j);
            if (p > 0.0) total -= p * std::log(p);
        }
    return total / static_cast<double>(n);
}

struct MmeStep {
    ParamSet grads;
    double loss = 0.0;
    detail::TrunkForward trunk;
    detail::HeadTrace head;
};

inline Tensor mme_features(const MmeModel& m, const Tensor& batch, RunMode mode, RngStream& rng,
                           BnMode bn_mode, MmeStep* step) {
    auto trunk = detail::trunk_forward(m.params, m.config, batch, mode, rng, bn_mode);
    auto head = detail::head_forward(m.params, "dense", "bn4", trunk.features, mode,
                                     m.config.dropout_rate, rng, bn_mode);
    Tensor out = head.output;
    if (step) {
        step->trunk = std::move(trunk);
        step->head = std::move(head);
    }
    return out;
}

/// Cross-entropy step on a labelled batch through the prototype classifier.
inline MmeStep mme_supervised_step(const MmeModel& m, const Tensor& batch,
                                   const std::vector<int>& labels, RngStream& rng) {
    MmeStep step;
    step.grads = detail::zero_grads_like(m.params);
    Tensor features = mme_features(m, batch, RunMode::Train, rng, BnMode::BatchStats, &step);
    auto cos = detail::cosine_logits(features, m.params.at("prototypes.weight"), m.temperature);
    auto ce = softmax_cross_entropy(cos.logits, labels);
    step.loss = ce.loss;
    auto cos_g = detail::cosine_backward(cos, softmax_cross_entropy_backward(ce.probs, labels),
                                         m.temperature);
    step.grads.at("prototypes.weight") = std::move(cos_g.prototypes);
    Tensor g = detail::head_backward(m.params, "dense", "bn4", step.head, BnMode::BatchStats,
                                     cos_g.features, step.grads);
    detail::trunk_backward(m.params, m.config, step.trunk, BnMode::BatchStats, std::move(g),
                           step.grads);
    return step;
}

/// Adversarial entropy step on an unlabelled batch: the prototypes receive
/// the gradient of -lambda*H (ascending the entropy), while the feature
/// extractor receives the sign-flipped gradient (descending it).
inline MmeStep mme_entropy_step(const MmeModel& m, const Tensor& batch, double lambda,
                                RngStream& rng) {
    MmeStep step;
    step.grads = detail::zero_grads_like(m.params);
    Tensor features = mme_features(m, batch, RunMode::Train, rng, BnMode::BatchStats, &step);
    auto cos = detail::cosine_logits(features, m.params.at("prototypes.weight"), m.temperature);
    const Tensor probs = softmax_rows(cos.logits);
    const std::size_t n = probs.shape[0], c = probs.shape[1];

    std::vector<double> row_entropy(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double p = probs.at(i, j);
            if (p > 0.0) row_entropy[i] -= p * std::log(p);
        }
    double h_mean = 0.0;
    for (double e : row_entropy) h_mean += e;
    h_mean /= static_cast<double>(n);
    step.loss = lambda * h_mean;

    // gradient of (-lambda * mean entropy) w.r.t. the logits
    Tensor dz({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            const double p = probs.at(i, j);
            const double dh = p > 0.0 ? -p * (std::log(p) + row_entropy[i]) : 0.0;
            dz.at(i, j) = static_cast<float>(-lambda * dh / static_cast<double>(n));
        }

    auto cos_g = detail::cosine_backward(cos, dz, m.temperature);
    step.grads.at("prototypes.weight") = std::move(cos_g.prototypes);
    // sign flip into the feature extractor
    for (std::size_t i = 0; i < cos_g.features.numel(); ++i)
        cos_g.features[i] = -cos_g.features[i];
    Tensor g = detail::head_backward(m.params, "dense", "bn4", step.head, BnMode::BatchStats,
                                     cos_g.features, step.grads);
    detail::trunk_backward(m.params, m.config, step.trunk, BnMode::BatchStats, std::move(g),
                           step.grads);
    return step;
}

inline void mme_apply_bn(MmeModel& m, const MmeStep& step) {
    detail::trunk_apply_bn(m.params, step.trunk);
    detail::head_apply_bn(m.params, "bn4", step.head);
}

inline Tensor mme_forward_eval(const MmeModel& m, const Tensor& batch) {
    RngStream unused(0);
    Tensor features =
        mme_features(m, batch, RunMode::Eval, unused, BnMode::FrozenStats, nullptr);
    return detail::cosine_logits(features, m.params.at("prototypes.weight"), m.temperature)
        .logits;
}

struct MmeResult {
    MmeModel model;
    TrainHistory history;
};

/// Alternating training: one epoch over the pooled labelled data (batch 32),
/// with an entropy update on an unlabelled batch after every supervised
/// update. mme_lambda == 0 disables the entropy pathway entirely, reducing
/// the run to pooled supervised training.
inline MmeResult train_mme(const Dataset& source, const Dataset& target_labelled,
                           const Dataset& target_unlabelled, const MethodConfig& config) {
    if (source.empty()) throw std::invalid_argument("train_mme: source domain is empty");
    if (target_labelled.empty() && target_unlabelled.empty())
        throw std::invalid_argument("train_mme: target domain is empty");

    const TempCNNConfig arch = detail::arch_for(source, config);
    RngStream init_rng = RngStream(config.seed).substream("init");
    MmeResult out{build_mme(arch, config.mme_temperature, init_rng), {}};

    detail::Timer timer;
    const Dataset pooled = concat_datasets(source, target_labelled);
    const std::size_t batch_size = static_cast<std::size_t>(config.budget.batch_size);
    RngStream batch_rng = RngStream(config.seed).substream("batch");
    RngStream dropout_rng = RngStream(config.seed).substream("dropout");
    RngStream ent_dropout_rng = RngStream(config.seed).substream("dropout_entropy");
    detail::CycleSampler unlab_sampler(target_unlabelled.size(),
                                       RngStream(config.seed).substream("batch_unlabelled"));
    AdamState adam = AdamState::for_params(out.model.params, config.lr);

    const bool entropy_enabled = config.mme_lambda != 0.0 && !target_unlabelled.empty();
    const auto order = detail::shuffled_indices(pooled.size(), batch_rng);
    std::vector<int> labels;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, order.size());
        if (end - begin < 2) continue;
        Tensor batch = detail::gather_batch(pooled, order, begin, end, &labels);
        MmeStep sup = mme_supervised_step(out.model, batch, labels, dropout_rng);
        mme_apply_bn(out.model, sup);
        adam_step(out.model.params, sup.grads, adam);
        out.history.losses.push_back(sup.loss);
        ++out.history.updates;

        if (!entropy_enabled) continue;
        const std::size_t un = std::min(batch_size, target_unlabelled.size());
        if (un < 2) continue;
        Tensor ubatch({un, static_cast<std::size_t>(source.n_bands),
                       static_cast<std::size_t>(source.n_timesteps)});
        const std::size_t stride = ubatch.shape[1] * ubatch.shape[2];
        for (std::size_t i = 0; i < un; ++i) {
            const Instance& inst = target_unlabelled.instances[unlab_sampler.next()];
            std::copy(inst.values.data.begin(), inst.values.data.end(),
                      ubatch.data.begin() + i * stride);
        }
        MmeStep ent = mme_entropy_step(out.model, ubatch, config.mme_lambda, ent_dropout_rng);
        mme_apply_bn(out.model, ent);
        adam_step(out.model.params, ent.grads, adam);
        out.history.losses.push_back(ent.loss);
        ++out.history.updates;
    }
    out.history.seconds = timer.seconds();
    return out;
}

}  // namespace sourcerer
