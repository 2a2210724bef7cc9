#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sourcerer/dataset.hpp"
#include "sourcerer/synthetic.hpp"
#include "test_support.hpp"

using namespace sourcerer;

static Dataset one_band_dataset(std::vector<float> values) {
    const std::size_t n = values.size();
    Dataset ds;
    ds.n_bands = 1;
    ds.n_timesteps = static_cast<int>(n);
    ds.domain_tag = "test";
    ds.class_names = {"a"};
    Instance inst;
    inst.polygon_id = 1;
    inst.class_id = 0;
    inst.values = Tensor::from({1, n}, std::move(values));
    ds.instances.push_back(std::move(inst));
    return ds;
}

TEST_CASE("percentiles use linear interpolation over order statistics") {
    std::vector<float> v(101);
    for (int i = 0; i <= 100; ++i) v[i] = static_cast<float>(i);
    Dataset ds = one_band_dataset(v);
    NormStats stats = compute_norm_stats(ds);
    CHECK(stats.p2[0] == doctest::Approx(2.0));
    CHECK(stats.p98[0] == doctest::Approx(98.0));
}

TEST_CASE("identical bands produce identical stats") {
    Dataset ds;
    ds.n_bands = 3;
    ds.n_timesteps = 4;
    ds.domain_tag = "test";
    ds.class_names = {"a"};
    Instance inst;
    inst.polygon_id = 1;
    inst.class_id = 0;
    inst.values = Tensor::from({3, 4}, {1, 5, 2, 9, 1, 5, 2, 9, 1, 5, 2, 9});
    ds.instances.push_back(inst);
    NormStats stats = compute_norm_stats(ds);
    CHECK(stats.p2[0] == stats.p2[1]);
    CHECK(stats.p2[1] == stats.p2[2]);
    CHECK(stats.p98[0] == stats.p98[2]);
}

TEST_CASE("constant band is rejected") {
    Dataset ds = one_band_dataset({3.0f, 3.0f, 3.0f, 3.0f});
    CHECK_THROWS_WITH_AS(compute_norm_stats(ds), doctest::Contains("band 0"), DatasetError);
}

TEST_CASE("normalization endpoints and linearity without clipping") {
    NormStats stats;
    stats.p2 = {10.0f};
    stats.p98 = {20.0f};
    Dataset ds = one_band_dataset({10.0f, 20.0f, 0.0f, 15.0f});
    Dataset out = normalize(ds, stats);
    CHECK(out.instances[0].values[0] == doctest::Approx(0.0));
    CHECK(out.instances[0].values[1] == doctest::Approx(1.0));
    CHECK(out.instances[0].values[2] == doctest::Approx(-1.0));  // p2 - (p98-p2)
    CHECK(out.instances[0].values[3] == doctest::Approx(0.5));

    // applying the map twice is not the same as once
    Dataset twice = normalize(out, stats);
    CHECK(twice.instances[0].values[3] != doctest::Approx(0.5));
    CHECK(twice.instances[0].values[3] == doctest::Approx((0.5 - 10.0) / 10.0));
}

TEST_CASE("normalization preserves rank order within a band") {
    RngStream rng(3);
    Dataset ds = one_band_dataset({});
    ds.n_timesteps = 20;
    ds.instances[0].values = test_support::random_tensor({1, 20}, rng, -5.0f, 5.0f);
    NormStats stats;
    stats.p2 = {-2.0f};
    stats.p98 = {3.0f};
    Dataset out = normalize(ds, stats);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            const bool before = ds.instances[0].values[i] < ds.instances[0].values[j];
            const bool after = out.instances[0].values[i] < out.instances[0].values[j];
            CHECK(before == after);
        }
}

TEST_CASE("band-count mismatch between stats and dataset is an error") {
    NormStats stats;
    stats.p2 = {0.0f, 0.0f};
    stats.p98 = {1.0f, 1.0f};
    Dataset ds = one_band_dataset({1.0f, 2.0f});
    CHECK_THROWS_AS(normalize(ds, stats), DatasetError);
}

// ---------------------------------------------------------------------------
// polygons and sampling
// ---------------------------------------------------------------------------

static Dataset polygon_dataset(int n_polygons, int instances_per_polygon) {
    Dataset ds;
    ds.n_bands = 1;
    ds.n_timesteps = 2;
    ds.domain_tag = "poly";
    ds.class_names = {"a", "b"};
    for (int p = 0; p < n_polygons; ++p)
        for (int i = 0; i < instances_per_polygon; ++i) {
            Instance inst;
            inst.polygon_id = 100 + p;
            inst.class_id = p % 2;
            inst.values = Tensor::from({1, 2}, {static_cast<float>(p), static_cast<float>(i)});
            ds.instances.push_back(std::move(inst));
        }
    return ds;
}

TEST_CASE("polygon index groups offsets and rejects mixed-class polygons") {
    Dataset ds = polygon_dataset(3, 4);
    PolygonIndex idx(ds);
    CHECK(idx.size() == 3);
    CHECK(idx.info(101).offsets.size() == 4);
    CHECK(idx.info(101).class_id == 1);

    ds.instances[0].class_id = 1;  // polygon 100 now spans two classes
    CHECK_THROWS_WITH_AS(PolygonIndex{ds}, doctest::Contains("polygon 100"), DatasetError);
}

TEST_CASE("polygon sampling is nested, whole-polygon and bounded") {
    Dataset ds = polygon_dataset(10, 3);
    RngStream rng(17);

    Dataset none = sample_polygons(ds, 0, rng);
    CHECK(none.empty());
    Dataset all = sample_polygons(ds, 10, rng);
    CHECK(all.size() == ds.size());
    CHECK_THROWS_AS(sample_polygons(ds, 11, rng), DatasetError);

    // nested schedule points: the 2-polygon draw contains the 1-polygon draw
    auto polygon_ids = [](const Dataset& d) {
        std::set<int> ids;
        for (const auto& inst : d.instances) ids.insert(inst.polygon_id);
        return ids;
    };
    std::set<int> prev;
    for (std::size_t n : {1ul, 2ul, 4ul, 8ul}) {
        Dataset sub = sample_polygons(ds, n, rng);  // rng passed by value: same permutation
        auto ids = polygon_ids(sub);
        CHECK(ids.size() == n);
        CHECK(std::includes(ids.begin(), ids.end(), prev.begin(), prev.end()));
        prev = ids;
        // whole polygons: every sampled polygon brings all 3 instances
        CHECK(sub.size() == n * 3);
    }
}

TEST_CASE("generated polygon sizes track the configured mean") {
    SyntheticSpec spec;
    spec.n_classes = 2;
    spec.n_bands = 1;
    spec.n_timesteps = 5;
    spec.source_polygons_per_class = 100;
    spec.target_polygons_per_class = 2;
    spec.polygon_size_mean = 300.0;
    spec.seed = 5;
    SyntheticPair pair = generate_synthetic_pair(spec);
    PolygonIndex idx(pair.source);
    const double mean_size =
        static_cast<double>(pair.source.size()) / static_cast<double>(idx.size());
    CHECK(mean_size == doctest::Approx(300.0).epsilon(0.05));
    for (int id : idx.ids()) CHECK(idx.info(id).offsets.size() >= 7);
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

static SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n_classes = 3;
    spec.n_bands = 2;
    spec.n_timesteps = 12;
    spec.source_polygons_per_class = 6;
    spec.target_polygons_per_class = 6;
    spec.polygon_size_mean = 9.0;
    spec.polygon_size_min = 7;
    spec.temporal_shift = 1.5;
    spec.amplitude_scale = {1.1};
    spec.seed = 11;
    return spec;
}

TEST_CASE("generator is deterministic in spec and seed") {
    SyntheticPair a = generate_synthetic_pair(small_spec());
    SyntheticPair b = generate_synthetic_pair(small_spec());
    REQUIRE(a.source.size() == b.source.size());
    for (std::size_t i = 0; i < a.source.size(); ++i)
        CHECK(test_support::bitwise_equal(a.source.instances[i].values,
                                          b.source.instances[i].values));
    SyntheticSpec other = small_spec();
    other.seed = 12;
    SyntheticPair c = generate_synthetic_pair(other);
    bool same = c.source.size() == a.source.size();
    if (same)
        same = test_support::bitwise_equal(a.source.instances[0].values,
                                           c.source.instances[0].values);
    CHECK_FALSE(same);
}

TEST_CASE("polygon blocking: no polygon id in both target partitions") {
    SyntheticPair pair = generate_synthetic_pair(small_spec());
    std::set<int> train_ids, test_ids;
    for (const auto& inst : pair.target_train.instances) train_ids.insert(inst.polygon_id);
    for (const auto& inst : pair.target_test.instances) test_ids.insert(inst.polygon_id);
    CHECK(!train_ids.empty());
    CHECK(!test_ids.empty());
    for (int id : test_ids) CHECK(train_ids.count(id) == 0);
}

TEST_CASE("zero noise makes polygon pixels identical") {
    SyntheticSpec spec = small_spec();
    spec.sigma_polygon = 0.0;
    spec.sigma_pixel = 0.0;
    SyntheticPair pair = generate_synthetic_pair(spec);
    PolygonIndex idx(pair.source);
    for (int id : idx.ids()) {
        const auto& offsets = idx.info(id).offsets;
        for (std::size_t i = 1; i < offsets.size(); ++i)
            CHECK(test_support::bitwise_equal(pair.source.instances[offsets[0]].values,
                                              pair.source.instances[offsets[i]].values));
    }
}

TEST_CASE("classes absent in source never appear there but stay in the target") {
    SyntheticSpec spec = small_spec();
    spec.classes_absent_in_source = {1};
    SyntheticPair pair = generate_synthetic_pair(spec);
    for (const auto& inst : pair.source.instances) CHECK(inst.class_id != 1);
    bool target_has = false;
    for (const auto& inst : pair.target_train.instances) target_has |= inst.class_id == 1;
    CHECK(target_has);
}

TEST_CASE("within-polygon dispersion is below between-polygon dispersion") {
    SyntheticSpec spec = small_spec();
    spec.sigma_polygon = 0.08;
    spec.sigma_pixel = 0.02;
    SyntheticPair pair = generate_synthetic_pair(spec);
    PolygonIndex idx(pair.source);

    // per class: mean pairwise distance within polygons vs between polygons
    for (int cls = 0; cls < spec.n_classes; ++cls) {
        std::vector<Tensor> centroids;
        double within = 0.0;
        std::size_t within_n = 0;
        for (int id : idx.ids()) {
            if (idx.info(id).class_id != cls) continue;
            const auto& offs = idx.info(id).offsets;
            Tensor centroid({static_cast<std::size_t>(spec.n_bands),
                             static_cast<std::size_t>(spec.n_timesteps)});
            for (std::size_t o : offs)
                for (std::size_t i = 0; i < centroid.numel(); ++i)
                    centroid[i] += pair.source.instances[o].values[i] / offs.size();
            for (std::size_t o : offs) {
                double d = 0.0;
                for (std::size_t i = 0; i < centroid.numel(); ++i) {
                    const double diff = pair.source.instances[o].values[i] - centroid[i];
                    d += diff * diff;
                }
                within += std::sqrt(d);
                ++within_n;
            }
            centroids.push_back(std::move(centroid));
        }
        double between = 0.0;
        std::size_t between_n = 0;
        for (std::size_t i = 0; i < centroids.size(); ++i)
            for (std::size_t j = i + 1; j < centroids.size(); ++j) {
                double d = 0.0;
                for (std::size_t k = 0; k < centroids[i].numel(); ++k) {
                    const double diff = centroids[i][k] - centroids[j][k];
                    d += diff * diff;
                }
                between += std::sqrt(d);
                ++between_n;
            }
        CHECK(within / within_n < between / between_n);
    }
}

TEST_CASE("degenerate specs are rejected") {
    SyntheticSpec spec = small_spec();
    spec.n_classes = 0;
    CHECK_THROWS_AS(generate_synthetic_pair(spec), std::invalid_argument);
    spec = small_spec();
    spec.temporal_shift = 20.0;
    CHECK_THROWS_AS(generate_synthetic_pair(spec), std::invalid_argument);
}

TEST_CASE("spec survives a JSON round trip") {
    SyntheticSpec spec = small_spec();
    spec.classes_absent_in_source = {2};
    spec.target_class_weights = {1.0, 2.0, 1.0};
    SyntheticSpec back = synthetic_spec_from_json(synthetic_spec_to_json(spec));
    CHECK(back.n_classes == spec.n_classes);
    CHECK(back.temporal_shift == spec.temporal_shift);
    CHECK(back.target_class_weights == spec.target_class_weights);
    CHECK(back.classes_absent_in_source == spec.classes_absent_in_source);
    CHECK(back.seed == spec.seed);
}

// ---------------------------------------------------------------------------
// directory round trip
// ---------------------------------------------------------------------------

TEST_CASE("dataset write -> read is value-exact") {
    SyntheticPair pair = generate_synthetic_pair(small_spec());
    const auto dir = std::filesystem::temp_directory_path() / "sourcerer_ds_test" / "src";
    std::filesystem::remove_all(dir);
    write_dataset(pair.source, dir.string());
    Dataset back = read_dataset(dir.string());
    REQUIRE(back.size() == pair.source.size());
    CHECK(back.n_bands == pair.source.n_bands);
    CHECK(back.class_names == pair.source.class_names);
    CHECK(back.domain_tag == pair.source.domain_tag);
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back.instances[i].polygon_id == pair.source.instances[i].polygon_id);
        CHECK(back.instances[i].class_id == pair.source.instances[i].class_id);
        CHECK(test_support::bitwise_equal(back.instances[i].values,
                                          pair.source.instances[i].values));
    }
}

TEST_CASE("rows carry 2 + bands*timesteps columns") {
    Dataset ds;
    ds.n_bands = 4;
    ds.n_timesteps = 12;
    ds.domain_tag = "cols";
    ds.class_names = {"a"};
    Instance inst;
    inst.polygon_id = 1;
    inst.class_id = 0;
    inst.values = Tensor({4, 12}, 0.5f);
    ds.instances.push_back(inst);
    const auto dir = std::filesystem::temp_directory_path() / "sourcerer_ds_test" / "cols";
    std::filesystem::remove_all(dir);
    write_dataset(ds, dir.string());

    std::ifstream csv(dir / "data.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(std::count(line.begin(), line.end(), ',') == 2 + 4 * 12 - 1);
}

TEST_CASE("malformed CSV rows fail with the line number") {
    SyntheticPair pair = generate_synthetic_pair(small_spec());
    const auto dir = std::filesystem::temp_directory_path() / "sourcerer_ds_test" / "bad";
    std::filesystem::remove_all(dir);
    write_dataset(pair.source, dir.string());

    // truncate the third data row
    std::ifstream in(dir / "data.csv");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    lines[3] = lines[3].substr(0, lines[3].rfind(','));
    std::ofstream out(dir / "data.csv", std::ios::binary);
    for (const auto& l : lines) out << l << "\n";
    out.close();

    CHECK_THROWS_WITH_AS(read_dataset(dir.string()), doctest::Contains(":4:"), DatasetError);
}

TEST_CASE("metadata and CSV disagreement is a structured error") {
    SyntheticPair pair = generate_synthetic_pair(small_spec());
    const auto dir = std::filesystem::temp_directory_path() / "sourcerer_ds_test" / "meta";
    std::filesystem::remove_all(dir);
    write_dataset(pair.source, dir.string());

    // claim one band fewer than the CSV carries
    std::ifstream in(dir / "meta.json");
    nlohmann::ordered_json meta;
    in >> meta;
    in.close();
    meta["n_bands"] = 1;
    std::ofstream out(dir / "meta.json", std::ios::binary);
    out << meta.dump(1) << "\n";
    out.close();

    CHECK_THROWS_AS(read_dataset(dir.string()), DatasetError);
}
