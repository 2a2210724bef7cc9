#pragma once

#include <memory>
#include <optional>
#include <string>

#include "sourcerer/checkpoint.hpp"
#include "sourcerer/dann.hpp"
#include "sourcerer/mme.hpp"

namespace sourcerer {

inline void save_dann_checkpoint(const DannModel& model, const std::string& path,
                                 const std::optional<NormStats>& norm_stats = std::nullopt) {
    CheckpointData ckpt;
    ckpt.model_kind = "dann";
    ckpt.config = tempcnn_config_json(model.config);
    ckpt.bn_frozen = false;
    ckpt.norm_stats = norm_stats;
    ckpt.tensors = model.params;
    write_checkpoint(ckpt, path);
}

inline void save_mme_checkpoint(const MmeModel& model, const std::string& path,
                                const std::optional<NormStats>& norm_stats = std::nullopt) {
    CheckpointData ckpt;
    ckpt.model_kind = "mme";
    ckpt.config = tempcnn_config_json(model.config);
    ckpt.config["mme_temperature"] = model.temperature;
    ckpt.bn_frozen = false;
    ckpt.norm_stats = norm_stats;
    ckpt.tensors = model.params;
    write_checkpoint(ckpt, path);
}

/// A loaded model of any kind reduced to what prediction needs: an eval-mode
/// forward over a batch, plus the input/output dimensions.
struct LoadedClassifier {
    std::string kind;
    int n_bands = 0;
    int n_timesteps = 0;
    int n_classes = 0;
    std::optional<NormStats> norm_stats;
    ForwardFn forward;
};

inline LoadedClassifier load_classifier(const std::string& path) {
    CheckpointData ckpt = read_checkpoint(path);
    LoadedClassifier out;
    out.kind = ckpt.model_kind;
    const TempCNNConfig config = tempcnn_config_from_json(ckpt.config);
    out.n_bands = config.n_bands;
    out.n_timesteps = config.n_timesteps;
    out.n_classes = config.n_classes;
    out.norm_stats = ckpt.norm_stats;
    RngStream rng(0);

    if (ckpt.model_kind == "tempcnn") {
        auto model = std::make_shared<TempCNNModel>(build_tempcnn(config, rng));
        model->bn_frozen = ckpt.bn_frozen;
        model->params.require_aligned(ckpt.tensors, "checkpoint " + path);
        model->params = std::move(ckpt.tensors);
        out.forward = [model](const Tensor& batch) { return forward_eval(*model, batch); };
    } else if (ckpt.model_kind == "dann") {
        auto model = std::make_shared<DannModel>(build_dann(config, rng));
        model->params.require_aligned(ckpt.tensors, "checkpoint " + path);
        model->params = std::move(ckpt.tensors);
        auto class_model = std::make_shared<TempCNNModel>(dann_class_model(*model));
        out.forward = [class_model](const Tensor& batch) {
            return forward_eval(*class_model, batch);
        };
    } else if (ckpt.model_kind == "mme") {
        const double temperature = ckpt.config.value("mme_temperature", 0.05);
        auto model = std::make_shared<MmeModel>(build_mme(config, temperature, rng));
        model->params.require_aligned(ckpt.tensors, "checkpoint " + path);
        model->params = std::move(ckpt.tensors);
        out.forward = [model](const Tensor& batch) { return mme_forward_eval(*model, batch); };
    } else {
        throw CheckpointError("checkpoint " + path + ": unknown model_kind '" + ckpt.model_kind +
                              "'");
    }
    return out;
}

}  // namespace sourcerer
