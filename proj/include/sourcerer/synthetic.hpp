#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcerer/dataset.hpp"
#include "sourcerer/rng.hpp"

namespace sourcerer {

/// Recipe for a source/target domain pair. Every class and band gets a smooth
/// base profile (two Gaussian bumps plus a linear trend); target profiles are
/// the source profiles shifted in time and rescaled per band. Polygons share
/// a random offset, pixels add i.i.d. noise, so pixels of one polygon have
/// near-identical series. Class priors may differ between the domains and
/// classes can be withheld from the source entirely.
struct SyntheticSpec {
    int n_classes = 8;
    int n_bands = 4;
    int n_timesteps = 37;
    int source_polygons_per_class = 40;
    int target_polygons_per_class = 40;
    double polygon_size_mean = 300.0;  // shifted Poisson
    int polygon_size_min = 7;
    double temporal_shift = 0.0;              // timesteps
    std::vector<double> amplitude_scale;      // per band; single value broadcasts
    std::vector<double> target_class_weights; // relative polygon counts; empty = uniform
    std::vector<int> classes_absent_in_source;
    double sigma_polygon = 0.05;
    double sigma_pixel = 0.02;
    double target_test_fraction = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_classes <= 0 || n_bands <= 0 || n_timesteps <= 0)
            throw std::invalid_argument("SyntheticSpec: counts must be positive");
        if (source_polygons_per_class < 0 || target_polygons_per_class <= 0)
            throw std::invalid_argument("SyntheticSpec: polygon counts must be positive");
        if (std::fabs(temporal_shift) >= n_timesteps)
            throw std::invalid_argument("SyntheticSpec: temporal shift must stay below the "
                                        "series length");
        if (sigma_polygon < 0.0 || sigma_pixel < 0.0)
            throw std::invalid_argument("SyntheticSpec: noise scales must be non-negative");
        if (polygon_size_min < 1 || polygon_size_mean < polygon_size_min)
            throw std::invalid_argument("SyntheticSpec: polygon size mean must be >= min >= 1");
        if (target_test_fraction <= 0.0 || target_test_fraction >= 1.0)
            throw std::invalid_argument("SyntheticSpec: test fraction must be in (0, 1)");
        if (!target_class_weights.empty() &&
            target_class_weights.size() != static_cast<std::size_t>(n_classes))
            throw std::invalid_argument("SyntheticSpec: class weight count mismatch");
        for (int c : classes_absent_in_source)
            if (c < 0 || c >= n_classes)
                throw std::invalid_argument("SyntheticSpec: absent class id out of range");
    }
};

struct SyntheticPair {
    Dataset source;
    Dataset target_train;
    Dataset target_test;
};

namespace detail {

struct BumpCurve {
    double a1, c1, w1;
    double a2, c2, w2;
    double slope, offset;

    double eval(double t) const {
        const double d1 = (t - c1) / w1, d2 = (t - c2) / w2;
        return a1 * std::exp(-0.5 * d1 * d1) + a2 * std::exp(-0.5 * d2 * d2) + slope * t + offset;
    }
};

inline BumpCurve sample_curve(RngStream& rng, double t_len) {
    BumpCurve c;
    c.a1 = rng.uniform(0.4f, 1.2f);
    c.c1 = rng.uniform(0.1f, 0.9f) * t_len;
    c.w1 = rng.uniform(0.05f, 0.18f) * t_len;
    c.a2 = rng.uniform(0.2f, 0.9f);
    c.c2 = rng.uniform(0.1f, 0.9f) * t_len;
    c.w2 = rng.uniform(0.04f, 0.12f) * t_len;
    c.slope = rng.uniform(-0.25f, 0.25f) / t_len;
    c.offset = rng.uniform(0.1f, 0.5f);
    return c;
}

inline int sample_polygon_size(const SyntheticSpec& spec, RngStream& rng) {
    const double mean = spec.polygon_size_mean - spec.polygon_size_min;
    long extra = 0;
    if (mean <= 0.0) {
        extra = 0;
    } else if (mean < 30.0) {
        // Knuth's product method
        const double limit = std::exp(-mean);
        double prod = rng.next_double();
        while (prod > limit) {
            ++extra;
            prod *= rng.next_double();
        }
    } else {
        // normal approximation keeps the mean while avoiding exp underflow
        extra = std::lround(mean + std::sqrt(mean) * rng.normal());
        if (extra < 0) extra = 0;
    }
    return spec.polygon_size_min + static_cast<int>(extra);
}

}  // namespace detail

inline SyntheticPair generate_synthetic_pair(const SyntheticSpec& spec) {
    spec.validate();
    const double t_len = spec.n_timesteps;

    // one smooth profile per class and band, shared by both domains
    RngStream curve_rng = RngStream(spec.seed).substream("curves");
    std::vector<detail::BumpCurve> curves(static_cast<std::size_t>(spec.n_classes) * spec.n_bands);
    for (auto& c : curves) c = detail::sample_curve(curve_rng, t_len);

    std::vector<double> band_scale(spec.n_bands, 1.0);
    if (spec.amplitude_scale.size() == 1) {
        band_scale.assign(spec.n_bands, spec.amplitude_scale[0]);
    } else if (!spec.amplitude_scale.empty()) {
        if (spec.amplitude_scale.size() != static_cast<std::size_t>(spec.n_bands))
            throw std::invalid_argument("SyntheticSpec: amplitude_scale must have one entry or "
                                        "one per band");
        band_scale = spec.amplitude_scale;
    }

    std::vector<bool> absent(spec.n_classes, false);
    for (int c : spec.classes_absent_in_source) absent[c] = true;

    int next_polygon_id = 1;
    auto make_polygon = [&](Dataset& ds, int class_id, bool target_domain, RngStream& rng) {
        const int size = detail::sample_polygon_size(spec, rng);
        std::vector<double> poly_offset(spec.n_bands);
        for (auto& o : poly_offset) o = spec.sigma_polygon * rng.normal();
        const int polygon_id = next_polygon_id++;
        for (int px = 0; px < size; ++px) {
            Instance inst;
            inst.polygon_id = polygon_id;
            inst.class_id = class_id;
            inst.values = Tensor({static_cast<std::size_t>(spec.n_bands),
                                  static_cast<std::size_t>(spec.n_timesteps)});
            for (int b = 0; b < spec.n_bands; ++b) {
                const auto& curve = curves[static_cast<std::size_t>(class_id) * spec.n_bands + b];
                for (int t = 0; t < spec.n_timesteps; ++t) {
                    double v;
                    if (target_domain) {
                        v = band_scale[b] * curve.eval(static_cast<double>(t) -
                                                       spec.temporal_shift);
                    } else {
                        v = curve.eval(static_cast<double>(t));
                    }
                    v += poly_offset[b] + spec.sigma_pixel * rng.normal();
                    inst.values.at(b, t) = static_cast<float>(v);
                }
            }
            ds.instances.push_back(std::move(inst));
        }
    };

    auto init_dataset = [&](const std::string& tag) {
        Dataset ds;
        ds.n_bands = spec.n_bands;
        ds.n_timesteps = spec.n_timesteps;
        ds.domain_tag = tag;
        for (int c = 0; c < spec.n_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
        return ds;
    };

    SyntheticPair pair;
    pair.source = init_dataset("source");
    pair.target_train = init_dataset("target_train");
    pair.target_test = init_dataset("target_test");

    RngStream source_rng = RngStream(spec.seed).substream("source");
    for (int c = 0; c < spec.n_classes; ++c) {
        if (absent[c]) continue;
        for (int p = 0; p < spec.source_polygons_per_class; ++p)
            make_polygon(pair.source, c, false, source_rng);
    }

    // target polygon counts follow the class-prior weights
    double weight_sum = 0.0;
    std::vector<double> weights(spec.n_classes, 1.0);
    if (!spec.target_class_weights.empty()) weights = spec.target_class_weights;
    for (double w : weights) weight_sum += w;

    RngStream target_rng = RngStream(spec.seed).substream("target");
    RngStream split_rng = RngStream(spec.seed).substream("split");
    for (int c = 0; c < spec.n_classes; ++c) {
        const double share = weights[c] / weight_sum * spec.n_classes;
        int count = static_cast<int>(
            std::lround(share * static_cast<double>(spec.target_polygons_per_class)));
        if (count < 2) count = 2;  // at least one polygon on each side of the split
        const int test_count = std::max(
            1, std::min(count - 1, static_cast<int>(std::lround(count * spec.target_test_fraction))));
        // split is blocked by polygon: a polygon lands wholly in one partition
        std::vector<char> is_test(count, 0);
        std::fill(is_test.begin(), is_test.begin() + test_count, 1);
        for (std::size_t i = is_test.size(); i > 1; --i)
            std::swap(is_test[i - 1], is_test[split_rng.uniform_index(i)]);
        for (int p = 0; p < count; ++p)
            make_polygon(is_test[p] ? pair.target_test : pair.target_train, c, true, target_rng);
    }

    if (pair.source.empty() && spec.source_polygons_per_class > 0 &&
        static_cast<int>(spec.classes_absent_in_source.size()) >= spec.n_classes)
        throw std::invalid_argument("generate_synthetic_pair: every class absent from source");
    pair.source.validate();
    pair.target_train.validate();
    pair.target_test.validate();
    return pair;
}

// ---------------------------------------------------------------------------
// JSON form used by the CLI and sweep configs
// ---------------------------------------------------------------------------

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::ordered_json& j) {
    SyntheticSpec s;
    s.n_classes = j.value("n_classes", s.n_classes);
    s.n_bands = j.value("n_bands", s.n_bands);
    s.n_timesteps = j.value("n_timesteps", s.n_timesteps);
    s.source_polygons_per_class = j.value("source_polygons_per_class", s.source_polygons_per_class);
    s.target_polygons_per_class = j.value("target_polygons_per_class", s.target_polygons_per_class);
    s.polygon_size_mean = j.value("polygon_size_mean", s.polygon_size_mean);
    s.polygon_size_min = j.value("polygon_size_min", s.polygon_size_min);
    s.temporal_shift = j.value("temporal_shift", s.temporal_shift);
    if (j.contains("amplitude_scale")) {
        if (j["amplitude_scale"].is_number())
            s.amplitude_scale = {j["amplitude_scale"].get<double>()};
        else
            s.amplitude_scale = j["amplitude_scale"].get<std::vector<double>>();
    }
    if (j.contains("target_class_weights"))
        s.target_class_weights = j["target_class_weights"].get<std::vector<double>>();
    if (j.contains("classes_absent_in_source"))
        s.classes_absent_in_source = j["classes_absent_in_source"].get<std::vector<int>>();
    s.sigma_polygon = j.value("sigma_polygon", s.sigma_polygon);
    s.sigma_pixel = j.value("sigma_pixel", s.sigma_pixel);
    s.target_test_fraction = j.value("target_test_fraction", s.target_test_fraction);
    s.seed = j.value("seed", s.seed);
    s.validate();
    return s;
}

inline nlohmann::ordered_json synthetic_spec_to_json(const SyntheticSpec& s) {
    nlohmann::ordered_json j;
    j["n_classes"] = s.n_classes;
    j["n_bands"] = s.n_bands;
    j["n_timesteps"] = s.n_timesteps;
    j["source_polygons_per_class"] = s.source_polygons_per_class;
    j["target_polygons_per_class"] = s.target_polygons_per_class;
    j["polygon_size_mean"] = s.polygon_size_mean;
    j["polygon_size_min"] = s.polygon_size_min;
    j["temporal_shift"] = s.temporal_shift;
    j["amplitude_scale"] = s.amplitude_scale;
    j["target_class_weights"] = s.target_class_weights;
    j["classes_absent_in_source"] = s.classes_absent_in_source;
    j["sigma_polygon"] = s.sigma_polygon;
    j["sigma_pixel"] = s.sigma_pixel;
    j["target_test_fraction"] = s.target_test_fraction;
    j["seed"] = s.seed;
    return j;
}

}  // namespace sourcerer
