#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "sourcerer/norm_stats.hpp"
#include "sourcerer/param_set.hpp"
#include "sourcerer/tempcnn.hpp"

namespace sourcerer {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr int kCheckpointFormatVersion = 1;

/// On-disk model form: a UTF-8 JSON manifest whose tensor payloads are
/// hex-encoded little-endian IEEE-754 binary32, so a round trip reproduces
/// every tensor bit-exactly.
struct CheckpointData {
    int format_version = kCheckpointFormatVersion;
    std::string model_kind = "tempcnn";
    nlohmann::ordered_json config;
    bool bn_frozen = false;
    std::optional<NormStats> norm_stats;
    ParamSet tensors;
};

namespace detail {

inline std::string hex_encode_f32(const Tensor& t) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(t.numel() * 8);
    for (float f : t.data) {
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int byte = 0; byte < 4; ++byte) {  // little-endian byte order
            const unsigned v = (bits >> (8 * byte)) & 0xffu;
            out.push_back(digits[v >> 4]);
            out.push_back(digits[v & 0xf]);
        }
    }
    return out;
}

inline int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

inline Tensor hex_decode_f32(const std::string& hex, const std::vector<std::size_t>& shape,
                             const std::string& tensor_name) {
    Tensor t(shape);
    if (hex.size() != t.numel() * 8)
        throw CheckpointError("checkpoint tensor " + tensor_name + ": payload holds " +
                              std::to_string(hex.size() / 8) + " values, shape needs " +
                              std::to_string(t.numel()));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits = 0;
        for (int byte = 0; byte < 4; ++byte) {
            const int hi = hex_nibble(hex[i * 8 + byte * 2]);
            const int lo = hex_nibble(hex[i * 8 + byte * 2 + 1]);
            if (hi < 0 || lo < 0)
                throw CheckpointError("checkpoint tensor " + tensor_name +
                                      ": corrupt hex payload");
            bits |= static_cast<std::uint32_t>((hi << 4) | lo) << (8 * byte);
        }
        t[i] = std::bit_cast<float>(bits);
    }
    return t;
}

}  // namespace detail

inline void write_checkpoint(const CheckpointData& ckpt, const std::string& path) {
    nlohmann::ordered_json j;
    j["format_version"] = ckpt.format_version;
    j["model_kind"] = ckpt.model_kind;
    j["config"] = ckpt.config;
    j["bn_frozen"] = ckpt.bn_frozen;
    if (ckpt.norm_stats) {
        j["norm_stats"] = {{"p2", ckpt.norm_stats->p2}, {"p98", ckpt.norm_stats->p98}};
    } else {
        j["norm_stats"] = nullptr;
    }
    auto& arr = j["tensors"] = nlohmann::ordered_json::array();
    for (const auto& e : ckpt.tensors) {
        nlohmann::ordered_json t;
        t["name"] = e.name;
        t["shape"] = e.tensor.shape;
        t["dtype"] = "f32";
        t["trainable"] = e.trainable;
        t["data"] = detail::hex_encode_f32(e.tensor);
        arr.push_back(std::move(t));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open " + path + " for writing");
    out << j.dump(1) << "\n";
    if (!out) throw CheckpointError("failed writing " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path + " for reading");
    nlohmann::ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint " + path + " is not valid JSON: " + e.what());
    }

    CheckpointData ckpt;
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != kCheckpointFormatVersion)
        throw CheckpointError("checkpoint " + path + " has format_version " +
                              std::to_string(ckpt.format_version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));
    ckpt.model_kind = j.value("model_kind", std::string("tempcnn"));
    ckpt.config = j.at("config");
    ckpt.bn_frozen = j.at("bn_frozen").get<bool>();
    if (!j.at("norm_stats").is_null()) {
        NormStats ns;
        ns.p2 = j["norm_stats"].at("p2").get<std::vector<float>>();
        ns.p98 = j["norm_stats"].at("p98").get<std::vector<float>>();
        ns.validate();
        ckpt.norm_stats = std::move(ns);
    }
    for (const auto& t : j.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        if (t.at("dtype").get<std::string>() != "f32")
            throw CheckpointError("checkpoint tensor " + name + ": unsupported dtype " +
                                  t.at("dtype").get<std::string>());
        const auto shape = t.at("shape").get<std::vector<std::size_t>>();
        Tensor tensor = detail::hex_decode_f32(t.at("data").get<std::string>(), shape, name);
        ckpt.tensors.add(name, std::move(tensor), t.at("trainable").get<bool>());
    }
    return ckpt;
}

inline nlohmann::ordered_json tempcnn_config_json(const TempCNNConfig& c) {
    return {{"n_bands", c.n_bands},         {"n_timesteps", c.n_timesteps},
            {"n_classes", c.n_classes},     {"conv_filters", c.conv_filters},
            {"kernel_len", c.kernel_len},   {"fc_units", c.fc_units},
            {"dropout_rate", c.dropout_rate}};
}

inline TempCNNConfig tempcnn_config_from_json(const nlohmann::ordered_json& j) {
    TempCNNConfig c;
    c.n_bands = j.at("n_bands").get<int>();
    c.n_timesteps = j.at("n_timesteps").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.conv_filters = j.at("conv_filters").get<int>();
    c.kernel_len = j.at("kernel_len").get<int>();
    c.fc_units = j.at("fc_units").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<float>();
    c.validate();
    return c;
}

inline void save_checkpoint(const TempCNNModel& model, const std::string& path,
                            const std::optional<NormStats>& norm_stats = std::nullopt) {
    CheckpointData ckpt;
    ckpt.model_kind = "tempcnn";
    ckpt.config = tempcnn_config_json(model.config);
    ckpt.bn_frozen = model.bn_frozen;
    ckpt.norm_stats = norm_stats;
    ckpt.tensors = model.params;
    write_checkpoint(ckpt, path);
}

struct LoadedTempCNN {
    TempCNNModel model;
    std::optional<NormStats> norm_stats;
};

inline LoadedTempCNN load_tempcnn_checkpoint(const std::string& path) {
    CheckpointData ckpt = read_checkpoint(path);
    if (ckpt.model_kind != "tempcnn")
        throw CheckpointError("checkpoint " + path + " holds a '" + ckpt.model_kind +
                              "' model, expected 'tempcnn'");
    LoadedTempCNN out;
    out.model.config = tempcnn_config_from_json(ckpt.config);
    out.model.bn_frozen = ckpt.bn_frozen;
    out.norm_stats = std::move(ckpt.norm_stats);

    // validate the manifest against a freshly built registry
    RngStream rng(0);
    TempCNNModel reference = build_tempcnn(out.model.config, rng);
    reference.params.require_aligned(ckpt.tensors, "checkpoint " + path);
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i)
        if (reference.params.entry(i).trainable != ckpt.tensors.entry(i).trainable)
            throw CheckpointError("checkpoint " + path + ": trainable flag mismatch for " +
                                  ckpt.tensors.entry(i).name);
    out.model.params = std::move(ckpt.tensors);
    return out;
}

}  // namespace sourcerer
