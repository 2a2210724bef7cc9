#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcerer/norm_stats.hpp"
#include "sourcerer/rng.hpp"
#include "sourcerer/tensor.hpp"

namespace sourcerer {

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One labelled pixel: a B x T multivariate series belonging to a polygon.
struct Instance {
    int polygon_id = 0;
    int class_id = 0;
    Tensor values;  // n_bands x n_timesteps
};

/// Labelled multivariate time series grouped into polygons. Immutable after
/// load by convention; operations return new datasets.
struct Dataset {
    int n_bands = 0;
    int n_timesteps = 0;
    std::string domain_tag;
    std::vector<std::string> class_names;
    std::vector<Instance> instances;

    int n_classes() const { return static_cast<int>(class_names.size()); }
    std::size_t size() const { return instances.size(); }
    bool empty() const { return instances.empty(); }

    void validate() const {
        const std::vector<std::size_t> expect = {static_cast<std::size_t>(n_bands),
                                                 static_cast<std::size_t>(n_timesteps)};
        for (std::size_t i = 0; i < instances.size(); ++i) {
            const auto& inst = instances[i];
            if (inst.values.shape != expect)
                throw DatasetError("dataset " + domain_tag + ": instance " + std::to_string(i) +
                                   " has shape " + shape_string(inst.values) + ", expected " +
                                   std::to_string(n_bands) + "x" + std::to_string(n_timesteps));
            if (inst.class_id < 0 || inst.class_id >= n_classes())
                throw DatasetError("dataset " + domain_tag + ": instance " + std::to_string(i) +
                                   " has class id " + std::to_string(inst.class_id) +
                                   " outside [0, " + std::to_string(n_classes()) + ")");
        }
    }
};

struct PolygonInfo {
    int class_id = 0;
    std::vector<std::size_t> offsets;  // indexes into Dataset::instances
};

/// polygon_id -> {class id, instance offsets}, in ascending polygon id order.
/// Construction checks that every polygon is single-class.
class PolygonIndex {
public:
    explicit PolygonIndex(const Dataset& ds) {
        for (std::size_t i = 0; i < ds.instances.size(); ++i) {
            const auto& inst = ds.instances[i];
            auto [it, inserted] = map_.try_emplace(inst.polygon_id);
            if (inserted) {
                it->second.class_id = inst.class_id;
            } else if (it->second.class_id != inst.class_id) {
                throw DatasetError("polygon " + std::to_string(inst.polygon_id) +
                                   " spans classes " + std::to_string(it->second.class_id) +
                                   " and " + std::to_string(inst.class_id));
            }
            it->second.offsets.push_back(i);
        }
        ids_.reserve(map_.size());
        for (const auto& [id, info] : map_) ids_.push_back(id);
    }

    std::size_t size() const { return ids_.size(); }
    const std::vector<int>& ids() const { return ids_; }
    const PolygonInfo& info(int polygon_id) const { return map_.at(polygon_id); }

private:
    std::map<int, PolygonInfo> map_;
    std::vector<int> ids_;
};

// ---------------------------------------------------------------------------
// percentile normalization
// ---------------------------------------------------------------------------

namespace detail {

/// Linear-interpolation percentile over sorted values: index = p/100 * (n-1).
inline double interpolated_percentile(std::vector<float>& values, double p) {
    std::sort(values.begin(), values.end());
    const double idx = p / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return static_cast<double>(values[lo]) +
           frac * (static_cast<double>(values[hi]) - static_cast<double>(values[lo]));
}

}  // namespace detail

/// Per band, pools every value across instances and timesteps and takes the
/// 2nd/98th percentiles. These come from the source domain and are reused
/// verbatim for every target dataset.
inline NormStats compute_norm_stats(const Dataset& source) {
    if (source.empty()) throw DatasetError("compute_norm_stats: empty dataset");
    const std::size_t bands = source.n_bands, steps = source.n_timesteps;
    NormStats stats;
    stats.p2.resize(bands);
    stats.p98.resize(bands);
    std::vector<float> pool;
    pool.reserve(source.size() * steps);
    for (std::size_t b = 0; b < bands; ++b) {
        pool.clear();
        for (const auto& inst : source.instances) {
            const float* row = &inst.values.data[b * steps];
            pool.insert(pool.end(), row, row + steps);
        }
        stats.p2[b] = static_cast<float>(detail::interpolated_percentile(pool, 2.0));
        stats.p98[b] = static_cast<float>(detail::interpolated_percentile(pool, 98.0));
        if (!(stats.p98[b] > stats.p2[b]))
            throw DatasetError("compute_norm_stats: band " + std::to_string(b) +
                               " is constant (p2 == p98 == " + std::to_string(stats.p2[b]) + ")");
    }
    return stats;
}

/// x' = (x - p2) / (p98 - p2) per band. Affine, no clipping: values outside
/// [0, 1] pass through so the map stays invertible.
inline Dataset normalize(const Dataset& ds, const NormStats& stats) {
    if (stats.n_bands() != static_cast<std::size_t>(ds.n_bands))
        throw DatasetError("normalize: stats cover " + std::to_string(stats.n_bands()) +
                           " bands, dataset has " + std::to_string(ds.n_bands));
    Dataset out = ds;
    const std::size_t steps = ds.n_timesteps;
    for (auto& inst : out.instances) {
        for (std::size_t b = 0; b < static_cast<std::size_t>(ds.n_bands); ++b) {
            const float p2 = stats.p2[b];
            const float scale = 1.0f / (stats.p98[b] - p2);
            float* row = &inst.values.data[b * steps];
            for (std::size_t t = 0; t < steps; ++t) row[t] = (row[t] - p2) * scale;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// polygon sampling
// ---------------------------------------------------------------------------

/// Uniform sample of whole polygons without replacement: all instances of
/// each sampled polygon are returned. The draw is a prefix of one seeded
/// permutation, so within a fixed stream larger samples contain smaller ones
/// (nested schedule points).
inline Dataset sample_polygons(const Dataset& train, std::size_t n_polygons, RngStream rng) {
    const PolygonIndex index(train);
    if (n_polygons > index.size())
        throw DatasetError("sample_polygons: requested " + std::to_string(n_polygons) +
                           " polygons, only " + std::to_string(index.size()) + " available");
    std::vector<int> ids = index.ids();
    for (std::size_t i = ids.size(); i > 1; --i)
        std::swap(ids[i - 1], ids[rng.uniform_index(i)]);

    Dataset out;
    out.n_bands = train.n_bands;
    out.n_timesteps = train.n_timesteps;
    out.domain_tag = train.domain_tag;
    out.class_names = train.class_names;
    for (std::size_t p = 0; p < n_polygons; ++p)
        for (std::size_t off : index.info(ids[p]).offsets)
            out.instances.push_back(train.instances[off]);
    return out;
}

// ---------------------------------------------------------------------------
// directory format: meta.json + data.csv
// ---------------------------------------------------------------------------

namespace detail {

inline std::string float_to_string(float v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline float parse_float(std::string_view s, std::size_t line_no, const std::string& file) {
    float v = 0.0f;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DatasetError(file + ":" + std::to_string(line_no) + ": bad float value '" +
                           std::string(s) + "'");
    return v;
}

inline long parse_int(std::string_view s, std::size_t line_no, const std::string& file) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DatasetError(file + ":" + std::to_string(line_no) + ": bad integer value '" +
                           std::string(s) + "'");
    return v;
}

}  // namespace detail

constexpr int kDatasetFormatVersion = 1;

inline void write_dataset(const Dataset& ds, const std::string& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json meta;
    meta["format_version"] = kDatasetFormatVersion;
    meta["n_bands"] = ds.n_bands;
    meta["n_timesteps"] = ds.n_timesteps;
    meta["classes"] = ds.class_names;
    meta["domain_tag"] = ds.domain_tag;
    {
        std::ofstream out(std::filesystem::path(dir) / "meta.json", std::ios::binary);
        if (!out) throw DatasetError("write_dataset: cannot open " + dir + "/meta.json");
        out << meta.dump(1) << "\n";
    }

    std::ofstream csv(std::filesystem::path(dir) / "data.csv", std::ios::binary);
    if (!csv) throw DatasetError("write_dataset: cannot open " + dir + "/data.csv");
    csv << "polygon_id,class_id";
    for (int b = 0; b < ds.n_bands; ++b)
        for (int t = 0; t < ds.n_timesteps; ++t) csv << ",v_b" << b << "_t" << t;
    csv << "\n";
    for (const auto& inst : ds.instances) {
        csv << inst.polygon_id << "," << inst.class_id;
        for (float v : inst.values.data) csv << "," << detail::float_to_string(v);
        csv << "\n";
    }
    if (!csv) throw DatasetError("write_dataset: failed writing " + dir + "/data.csv");
}

inline Dataset read_dataset(const std::string& dir) {
    const std::string meta_path = (std::filesystem::path(dir) / "meta.json").string();
    std::ifstream meta_in(meta_path, std::ios::binary);
    if (!meta_in) throw DatasetError("read_dataset: cannot open " + meta_path);
    nlohmann::ordered_json meta;
    try {
        meta_in >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError(meta_path + " is not valid JSON: " + e.what());
    }
    if (meta.at("format_version").get<int>() != kDatasetFormatVersion)
        throw DatasetError(meta_path + ": unsupported format_version");

    Dataset ds;
    ds.n_bands = meta.at("n_bands").get<int>();
    ds.n_timesteps = meta.at("n_timesteps").get<int>();
    ds.class_names = meta.at("classes").get<std::vector<std::string>>();
    ds.domain_tag = meta.at("domain_tag").get<std::string>();
    if (ds.n_bands <= 0 || ds.n_timesteps <= 0)
        throw DatasetError(meta_path + ": band/timestep counts must be positive");

    const std::string csv_path = (std::filesystem::path(dir) / "data.csv").string();
    std::ifstream csv(csv_path, std::ios::binary);
    if (!csv) throw DatasetError("read_dataset: cannot open " + csv_path);

    const std::size_t expect_cols =
        2 + static_cast<std::size_t>(ds.n_bands) * static_cast<std::size_t>(ds.n_timesteps);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> fields;
    while (std::getline(csv, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        fields.clear();
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) {
                fields.emplace_back(line.data() + start, line.size() - start);
                break;
            }
            fields.emplace_back(line.data() + start, comma - start);
            start = comma + 1;
        }
        if (fields.size() != expect_cols)
            throw DatasetError(csv_path + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(expect_cols) + " columns, got " +
                               std::to_string(fields.size()));
        if (line_no == 1) continue;  // header

        Instance inst;
        inst.polygon_id = static_cast<int>(detail::parse_int(fields[0], line_no, csv_path));
        inst.class_id = static_cast<int>(detail::parse_int(fields[1], line_no, csv_path));
        if (inst.class_id < 0 || inst.class_id >= ds.n_classes())
            throw DatasetError(csv_path + ":" + std::to_string(line_no) + ": class id " +
                               std::to_string(inst.class_id) + " not in meta.json classes");
        inst.values = Tensor({static_cast<std::size_t>(ds.n_bands),
                              static_cast<std::size_t>(ds.n_timesteps)});
        for (std::size_t i = 0; i < expect_cols - 2; ++i)
            inst.values[i] = detail::parse_float(fields[2 + i], line_no, csv_path);
        ds.instances.push_back(std::move(inst));
    }
    if (line_no == 0) throw DatasetError(csv_path + ": missing header row");
    ds.validate();
    return ds;
}

}  // namespace sourcerer
