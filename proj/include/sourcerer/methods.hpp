#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "sourcerer/adam.hpp"
#include "sourcerer/dataset.hpp"
#include "sourcerer/regularize.hpp"
#include "sourcerer/tempcnn.hpp"

namespace sourcerer {

enum class Method { SourceOnly, TargetOnly, Naive, Finetune, Sourcerer, Dann, Mme };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::SourceOnly: return "source_only";
        case Method::TargetOnly: return "target_only";
        case Method::Naive: return "naive";
        case Method::Finetune: return "finetune";
        case Method::Sourcerer: return "sourcerer";
        case Method::Dann: return "dann";
        case Method::Mme: return "mme";
    }
    return "unknown";
}

inline Method method_from_name(const std::string& name) {
    for (Method m : {Method::SourceOnly, Method::TargetOnly, Method::Naive, Method::Finetune,
                     Method::Sourcerer, Method::Dann, Method::Mme})
        if (method_name(m) == name) return m;
    throw std::invalid_argument("unknown method: " + name);
}

/// Everything one experimental setting needs. Architecture band/timestep/class
/// counts are always taken from the dataset at hand; the remaining fields of
/// `arch` size the network.
struct MethodConfig {
    Method method = Method::Sourcerer;
    TempCNNConfig arch;
    TrainBudget budget;
    LambdaSchedule schedule = LambdaSchedule::with_tmax(1e6);
    double lr = 1e-3;
    double dann_alpha = 1.0;
    bool dann_domain_head = true;  // disabled for the class-only ablation
    double mme_temperature = 0.05;
    double mme_lambda = 0.1;
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> losses;
    std::size_t updates = 0;
    double seconds = 0.0;
};

namespace detail {

inline TempCNNConfig arch_for(const Dataset& ds, const MethodConfig& config) {
    TempCNNConfig c = config.arch;
    c.n_bands = ds.n_bands;
    c.n_timesteps = ds.n_timesteps;
    c.n_classes = ds.n_classes();
    c.validate();
    return c;
}

inline Tensor gather_batch(const Dataset& ds, const std::vector<std::size_t>& order,
                           std::size_t begin, std::size_t end, std::vector<int>* labels) {
    const std::size_t n = end - begin;
    Tensor batch({n, static_cast<std::size_t>(ds.n_bands),
                  static_cast<std::size_t>(ds.n_timesteps)});
    if (labels) labels->resize(n);
    const std::size_t stride = batch.shape[1] * batch.shape[2];
    for (std::size_t i = 0; i < n; ++i) {
        const Instance& inst = ds.instances[order[begin + i]];
        std::copy(inst.values.data.begin(), inst.values.data.end(),
                  batch.data.begin() + i * stride);
        if (labels) (*labels)[i] = inst.class_id;
    }
    return batch;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    return order;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

/// The one optimization loop every TempCNN-based setting goes through.
/// Sourcerer passes a reference snapshot and lambda > 0; naive adaptation and
/// supervised training pass lambda == 0. Finetuning narrows the Adam mask.
inline TrainHistory run_training(TempCNNModel& model, const Dataset& ds, double lambda,
                                 const ParamSet* reference, const std::vector<char>& adam_mask,
                                 const MethodConfig& config) {
    Timer timer;
    TrainHistory history;
    const int epochs = epochs_for(ds.size(), config.budget);
    const std::size_t batch_size = static_cast<std::size_t>(config.budget.batch_size);

    AdamState adam = AdamState::masked(model.params, adam_mask, config.lr);
    RngStream batch_rng = RngStream(config.seed).substream("batch");
    RngStream dropout_rng = RngStream(config.seed).substream("dropout");

    std::vector<int> labels;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const auto order = shuffled_indices(ds.size(), batch_rng);
        for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
            const std::size_t end = std::min(begin + batch_size, order.size());
            // batch statistics need at least two samples; a trailing
            // singleton is skipped unless the stats are frozen
            if (end - begin < 2 && !model.bn_frozen) continue;
            Tensor batch = gather_batch(ds, order, begin, end, &labels);

            TempCNNForward fwd = tempcnn_forward(model, batch, RunMode::Train, dropout_rng);
            apply_bn_updates(model, fwd);

            double loss;
            Tensor grad_logits;
            if (lambda > 0.0 && reference) {
                auto r = source_reg_loss(fwd.logits, labels, model.params, *reference, lambda);
                loss = r.total;
                grad_logits = softmax_cross_entropy_backward(r.probs, labels);
            } else {
                auto ce = softmax_cross_entropy(fwd.logits, labels);
                loss = ce.loss;
                grad_logits = softmax_cross_entropy_backward(ce.probs, labels);
            }
            ParamSet grads = tempcnn_backward(model, fwd, grad_logits);
            if (lambda > 0.0 && reference)
                add_penalty_gradient(grads, model.params, *reference, lambda);
            adam_step(model.params, grads, adam);

            history.losses.push_back(loss);
            ++history.updates;
        }
    }
    history.seconds = timer.seconds();
    return history;
}

inline std::vector<char> full_mask(const ParamSet& params) {
    std::vector<char> mask(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) mask[i] = params.entry(i).trainable;
    return mask;
}

}  // namespace detail

struct TrainedModel {
    TempCNNModel model;
    TrainHistory history;
};

/// Plain cross-entropy training of a fresh model (the Source Only and Target
/// Only settings). The returned model has its BN statistics frozen, ready to
/// serve as the starting point of an adaptation.
inline TrainedModel train_supervised(const Dataset& ds, const MethodConfig& config) {
    if (ds.empty()) throw std::invalid_argument("train_supervised: empty dataset");
    const TempCNNConfig arch = detail::arch_for(ds, config);
    RngStream init_rng = RngStream(config.seed).substream("init");
    TrainedModel out{build_tempcnn(arch, init_rng), {}};
    out.history = detail::run_training(out.model, ds, 0.0, nullptr,
                                       detail::full_mask(out.model.params), config);
    freeze_bn(out.model);
    return out;
}

enum class AdaptMode { Naive, Finetune, Sourcerer };

inline AdaptMode adapt_mode_for(Method m) {
    switch (m) {
        case Method::Naive: return AdaptMode::Naive;
        case Method::Finetune: return AdaptMode::Finetune;
        case Method::Sourcerer: return AdaptMode::Sourcerer;
        default: throw std::invalid_argument("not an adaptation method: " + method_name(m));
    }
}

/// Continues training a source model on labelled target data. With no target
/// data at all the source model is returned untouched. Naive: plain loss.
/// Finetune: convolutional blocks (weights, biases and their BN gamma/beta)
/// are excluded from updates. Sourcerer: the source parameters are
/// snapshotted, lambda comes from the schedule at the realized instance
/// count, and the loss gains the lambda-weighted squared distance to the
/// snapshot. BN statistics are frozen throughout.
inline TrainedModel adapt(const TempCNNModel& source_model, const Dataset& target_train,
                          AdaptMode mode, const MethodConfig& config) {
    TrainedModel out{source_model, {}};
    if (target_train.empty()) return out;

    if (target_train.n_bands != source_model.config.n_bands ||
        target_train.n_timesteps != source_model.config.n_timesteps ||
        target_train.n_classes() != source_model.config.n_classes)
        throw ShapeError("adapt: dataset (" + std::to_string(target_train.n_bands) + " bands, " +
                         std::to_string(target_train.n_timesteps) + " steps, " +
                         std::to_string(target_train.n_classes()) +
                         " classes) does not match the source model");
    freeze_bn(out.model);

    std::vector<char> mask = detail::full_mask(out.model.params);
    double lambda = 0.0;
    ParamSet reference;
    const ParamSet* reference_ptr = nullptr;

    switch (mode) {
        case AdaptMode::Naive:
            break;
        case AdaptMode::Finetune:
            for (std::size_t i = 0; i < out.model.params.size(); ++i) {
                const std::string& name = out.model.params.entry(i).name;
                const bool conv_block = name.starts_with("conv") || name.starts_with("bn1.") ||
                                        name.starts_with("bn2.") || name.starts_with("bn3.");
                if (conv_block) mask[i] = 0;
            }
            break;
        case AdaptMode::Sourcerer:
            reference = source_model.params;
            reference_ptr = &reference;
            lambda = lambda_for(target_train.size(), config.schedule);
            break;
    }

    out.history = detail::run_training(out.model, target_train, lambda, reference_ptr, mask,
                                       config);
    return out;
}

// ---------------------------------------------------------------------------
// dataset composition helpers used by the pooled settings and the harness
// ---------------------------------------------------------------------------

inline Dataset concat_datasets(const Dataset& a, const Dataset& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.n_bands != b.n_bands || a.n_timesteps != b.n_timesteps ||
        a.class_names != b.class_names)
        throw DatasetError("concat_datasets: incompatible datasets " + a.domain_tag + " and " +
                           b.domain_tag);
    Dataset out = a;
    out.domain_tag = a.domain_tag + "+" + b.domain_tag;
    out.instances.insert(out.instances.end(), b.instances.begin(), b.instances.end());
    return out;
}

/// All instances whose polygon does not appear in `subset`: the unlabelled
/// pool fed to the pooled settings.
inline Dataset dataset_minus_polygons(const Dataset& full, const Dataset& subset) {
    std::set<int> taken;
    for (const auto& inst : subset.instances) taken.insert(inst.polygon_id);
    Dataset out = full;
    out.instances.clear();
    for (const auto& inst : full.instances)
        if (!taken.count(inst.polygon_id)) out.instances.push_back(inst);
    return out;
}

}  // namespace sourcerer
