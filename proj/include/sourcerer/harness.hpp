#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sourcerer/dann.hpp"
#include "sourcerer/dataset.hpp"
#include "sourcerer/methods.hpp"
#include "sourcerer/metrics.hpp"
#include "sourcerer/mme.hpp"
#include "sourcerer/synthetic.hpp"

namespace sourcerer {

/// One full sweep: methods x polygon schedule x repeats over a domain pair.
/// The pair comes either from a generator spec or from dataset directories.
struct ExperimentConfig {
    SyntheticSpec data_spec;
    std::string source_dir, target_train_dir, target_test_dir;
    bool use_dirs = false;

    std::vector<Method> methods = {Method::SourceOnly, Method::TargetOnly, Method::Naive,
                                   Method::Finetune, Method::Sourcerer};
    std::vector<int> polygon_schedule = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1000, 2000};
    int repeats = 5;
    std::vector<double> queries = {0,    20,    50,    100,    250,   500,   1000,
                                   5000, 10000, 25000, 50000, 100000};
    std::uint64_t base_seed = 1;
    MethodConfig method_base;  // arch sizing, budget, lr, coefficients, t_max via schedule
    int threads = 1;
};

struct RunResult {
    std::string method;
    std::uint64_t seed = 0;
    int polygons = 0;
    std::size_t n_t = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> per_class_f1;
    double seconds = 0.0;
    bool failed = false;
    std::string error;
};

struct ExperimentResults {
    std::vector<RunResult> runs;
};

namespace detail {

inline bool wants(const ExperimentConfig& config, Method m) {
    return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
}

inline void sort_results(std::vector<RunResult>& runs) {
    std::sort(runs.begin(), runs.end(), [](const RunResult& a, const RunResult& b) {
        if (a.method != b.method) return a.method < b.method;
        if (a.seed != b.seed) return a.seed < b.seed;
        if (a.polygons != b.polygons) return a.polygons < b.polygons;
        return a.n_t < b.n_t;
    });
}

/// Everything one repeat does: one source model, one nested polygon
/// permutation, every method at every schedule point. Self-contained so
/// repeats can run on worker threads.
inline std::vector<RunResult> run_repeat(const Dataset& source, const Dataset& target_train,
                                         const Dataset& target_test,
                                         const ExperimentConfig& config, int repeat) {
    std::vector<RunResult> results;
    const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(repeat);
    MethodConfig base = config.method_base;
    base.seed = seed;

    auto guarded = [&](const std::string& method, int polygons, std::size_t n_t, auto&& body) {
        RunResult r;
        r.method = method;
        r.seed = seed;
        r.polygons = polygons;
        r.n_t = n_t;
        try {
            body(r);
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
        }
        results.push_back(std::move(r));
    };

    // the source model is trained once and shared by every adaptation
    TrainedModel source_model;
    bool have_source = false;
    const bool needs_source = wants(config, Method::SourceOnly) ||
                              wants(config, Method::Naive) || wants(config, Method::Finetune) ||
                              wants(config, Method::Sourcerer);
    if (needs_source) {
        guarded(method_name(Method::SourceOnly), 0, 0, [&](RunResult& r) {
            source_model = train_supervised(source, base);
            have_source = true;
            MetricReport rep = evaluate(source_model.model, target_test);
            r.accuracy = rep.overall_accuracy;
            r.macro_f1 = rep.macro_f1;
            r.per_class_f1 = rep.f1;
            r.seconds = source_model.history.seconds;
        });
        if (!wants(config, Method::SourceOnly)) {
            for (auto it = results.begin(); it != results.end();)
                it = it->method == method_name(Method::SourceOnly) && !it->failed
                         ? results.erase(it)
                         : it + 1;
        }
    }

    // quantity-0 rows: adaptations return the source model untouched; the
    // pooled settings still train on source plus unlabelled target
    for (Method m : {Method::Naive, Method::Finetune, Method::Sourcerer}) {
        if (!wants(config, m) || !have_source) continue;
        guarded(method_name(m), 0, 0, [&](RunResult& r) {
            Dataset empty = target_train;
            empty.instances.clear();
            TrainedModel adapted = adapt(source_model.model, empty, adapt_mode_for(m), base);
            MetricReport rep = evaluate(adapted.model, target_test);
            r.accuracy = rep.overall_accuracy;
            r.macro_f1 = rep.macro_f1;
            r.per_class_f1 = rep.f1;
            r.seconds = adapted.history.seconds;
        });
    }
    for (Method m : {Method::Dann, Method::Mme}) {
        if (!wants(config, m)) continue;
        guarded(method_name(m), 0, 0, [&](RunResult& r) {
            Dataset empty = target_train;
            empty.instances.clear();
            if (m == Method::Dann) {
                DannResult dr = train_dann(source, empty, target_train, base);
                MetricReport rep = evaluate(dr.class_model, target_test);
                r.accuracy = rep.overall_accuracy;
                r.macro_f1 = rep.macro_f1;
                r.per_class_f1 = rep.f1;
                r.seconds = dr.history.seconds;
            } else {
                MmeResult mr = train_mme(source, empty, target_train, base);
                MetricReport rep = evaluate(
                    [&](const Tensor& b) { return mme_forward_eval(mr.model, b); }, target_test);
                r.accuracy = rep.overall_accuracy;
                r.macro_f1 = rep.macro_f1;
                r.per_class_f1 = rep.f1;
                r.seconds = mr.history.seconds;
            }
        });
    }

    const RngStream polygon_rng = RngStream(seed).substream("polygons");
    for (int n_polygons : config.polygon_schedule) {
        Dataset subset;
        try {
            // passing the stream by value keeps schedule points nested
            subset = sample_polygons(target_train, static_cast<std::size_t>(n_polygons),
                                     polygon_rng);
        } catch (const std::exception& e) {
            RunResult r;
            r.method = "sampling";
            r.seed = seed;
            r.polygons = n_polygons;
            r.failed = true;
            r.error = e.what();
            results.push_back(std::move(r));
            continue;
        }
        const std::size_t n_t = subset.size();

        if (wants(config, Method::TargetOnly)) {
            guarded(method_name(Method::TargetOnly), n_polygons, n_t, [&](RunResult& r) {
                TrainedModel t = train_supervised(subset, base);
                MetricReport rep = evaluate(t.model, target_test);
                r.accuracy = rep.overall_accuracy;
                r.macro_f1 = rep.macro_f1;
                r.per_class_f1 = rep.f1;
                r.seconds = t.history.seconds;
            });
        }
        for (Method m : {Method::Naive, Method::Finetune, Method::Sourcerer}) {
            if (!wants(config, m) || !have_source) continue;
            guarded(method_name(m), n_polygons, n_t, [&](RunResult& r) {
                TrainedModel adapted = adapt(source_model.model, subset, adapt_mode_for(m), base);
                MetricReport rep = evaluate(adapted.model, target_test);
                r.accuracy = rep.overall_accuracy;
                r.macro_f1 = rep.macro_f1;
                r.per_class_f1 = rep.f1;
                r.seconds = adapted.history.seconds;
            });
        }
        if (wants(config, Method::Dann) || wants(config, Method::Mme)) {
            Dataset unlabelled = dataset_minus_polygons(target_train, subset);
            if (wants(config, Method::Dann)) {
                guarded(method_name(Method::Dann), n_polygons, n_t, [&](RunResult& r) {
                    DannResult dr = train_dann(source, subset, unlabelled, base);
                    MetricReport rep = evaluate(dr.class_model, target_test);
                    r.accuracy = rep.overall_accuracy;
                    r.macro_f1 = rep.macro_f1;
                    r.per_class_f1 = rep.f1;
                    r.seconds = dr.history.seconds;
                });
            }
            if (wants(config, Method::Mme)) {
                guarded(method_name(Method::Mme), n_polygons, n_t, [&](RunResult& r) {
                    MmeResult mr = train_mme(source, subset, unlabelled, base);
                    MetricReport rep = evaluate(
                        [&](const Tensor& b) { return mme_forward_eval(mr.model, b); },
                        target_test);
                    r.accuracy = rep.overall_accuracy;
                    r.macro_f1 = rep.macro_f1;
                    r.per_class_f1 = rep.f1;
                    r.seconds = mr.history.seconds;
                });
            }
        }
    }
    return results;
}

}  // namespace detail

struct ExperimentData {
    Dataset source;        // normalized
    Dataset target_train;  // normalized with source stats
    Dataset target_test;   // normalized with source stats
    NormStats stats;
};

inline ExperimentData load_experiment_data(const ExperimentConfig& config) {
    ExperimentData data;
    if (config.use_dirs) {
        data.source = read_dataset(config.source_dir);
        data.target_train = read_dataset(config.target_train_dir);
        data.target_test = read_dataset(config.target_test_dir);
    } else {
        SyntheticPair pair = generate_synthetic_pair(config.data_spec);
        data.source = std::move(pair.source);
        data.target_train = std::move(pair.target_train);
        data.target_test = std::move(pair.target_test);
    }
    data.stats = compute_norm_stats(data.source);
    data.source = normalize(data.source, data.stats);
    data.target_train = normalize(data.target_train, data.stats);
    data.target_test = normalize(data.target_test, data.stats);
    return data;
}

inline ExperimentResults run_experiment(const ExperimentConfig& config) {
    if (config.repeats < 1) throw std::invalid_argument("run_experiment: repeats must be >= 1");
    for (std::size_t i = 1; i < config.polygon_schedule.size(); ++i)
        if (config.polygon_schedule[i] <= config.polygon_schedule[i - 1])
            throw std::invalid_argument(
                "run_experiment: polygon schedule must be strictly increasing");

    const ExperimentData data = load_experiment_data(config);
    ExperimentResults results;
    std::mutex collect;

    const int workers = std::max(1, std::min(config.threads, config.repeats));
    std::vector<std::thread> pool;
    int next_repeat = 0;
    std::mutex next_mutex;
    auto worker = [&]() {
        while (true) {
            int repeat;
            {
                std::lock_guard lock(next_mutex);
                if (next_repeat >= config.repeats) return;
                repeat = next_repeat++;
            }
            auto rows = detail::run_repeat(data.source, data.target_train, data.target_test,
                                           config, repeat);
            std::lock_guard lock(collect);
            results.runs.insert(results.runs.end(), rows.begin(), rows.end());
        }
    };
    if (workers == 1) {
        worker();
    } else {
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    detail::sort_results(results.runs);
    return results;
}

// ---------------------------------------------------------------------------
// report files: raw and aggregated CSV, timing, SVG curves
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_double(double v) {
    std::ostringstream ss;
    ss.imbue(std::locale::classic());
    ss.precision(10);
    ss << v;
    return ss.str();
}

struct MethodCurves {
    std::vector<std::vector<CurvePoint>> accuracy;  // one per seed
    std::vector<std::vector<CurvePoint>> macro_f1;
};

/// Per-seed curves over realized n_t; the quantity-0 row anchors the left
/// end so queries below the first schedule point interpolate toward it.
/// A method with a single point per seed (Source Only does not depend on the
/// target quantity) becomes a flat line across the whole query range.
inline std::map<std::string, MethodCurves> collect_curves(const ExperimentResults& results,
                                                          const std::vector<double>& queries) {
    double qmin = 0.0, qmax = 1.0;
    if (!queries.empty()) {
        qmin = *std::min_element(queries.begin(), queries.end());
        qmax = *std::max_element(queries.begin(), queries.end());
        if (qmax <= qmin) qmax = qmin + 1.0;
    }

    std::map<std::string, std::map<std::uint64_t, std::vector<const RunResult*>>> by_method;
    for (const auto& r : results.runs)
        if (!r.failed && r.method != "sampling")
            by_method[r.method][r.seed].push_back(&r);

    std::map<std::string, MethodCurves> out;
    for (auto& [method, seeds] : by_method) {
        MethodCurves curves;
        for (auto& [seed, rows] : seeds) {
            std::vector<CurvePoint> acc, f1;
            for (const RunResult* r : rows) {
                // rows are sorted by polygons then n_t already
                const double x = static_cast<double>(r->n_t);
                if (!acc.empty() && x <= acc.back().n_t) continue;
                acc.push_back({x, r->accuracy});
                f1.push_back({x, r->macro_f1});
            }
            if (acc.size() == 1) {
                acc = {{qmin, acc[0].value}, {qmax, acc[0].value}};
                f1 = {{qmin, f1[0].value}, {qmax, f1[0].value}};
            }
            if (acc.size() >= 2) {
                curves.accuracy.push_back(std::move(acc));
                curves.macro_f1.push_back(std::move(f1));
            }
        }
        if (!curves.accuracy.empty()) out[method] = std::move(curves);
    }
    return out;
}

inline void write_svg_curves(const std::string& path,
                             const std::map<std::string, std::vector<double>>& series,
                             const std::vector<double>& queries, bool log_x,
                             const std::string& title) {
    const double width = 760, height = 500;
    const double ml = 70, mr = 160, mt = 40, mb = 60;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = 1e300, xmax = -1e300;
    for (double q : queries) {
        const double x = log_x ? std::log10(std::max(1.0, q)) : q;
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
    }
    if (xmax <= xmin) xmax = xmin + 1.0;

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf"};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">"
        << title << "</text>\n";
    // axes
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 10; i += 2) {
        const double y = mt + ph - ph * i / 10.0;
        out << "<text x=\"" << ml - 40 << "\" y=\"" << y + 4
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << csv_double(i / 10.0)
            << "</text>\n";
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << y << "\" x2=\"" << ml << "\" y2=\"" << y
            << "\" stroke=\"black\"/>\n";
    }
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 16
        << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">labelled "
           "target instances"
        << (log_x ? " (log scale)" : "") << "</text>\n";
    out << "<text x=\"18\" y=\"" << mt + ph / 2
        << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 "
        << mt + ph / 2 << ")\" text-anchor=\"middle\">overall accuracy</text>\n";

    int color = 0;
    double legend_y = mt + 10;
    for (const auto& [method, values] : series) {
        const char* stroke = palette[color % 7];
        out << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < queries.size(); ++i) {
            const double xq = log_x ? std::log10(std::max(1.0, queries[i])) : queries[i];
            const double px = ml + (xq - xmin) / (xmax - xmin) * pw;
            const double py = mt + ph - std::clamp(values[i], 0.0, 1.0) * ph;
            out << px << "," << py << " ";
        }
        out << "\"/>\n";
        out << "<rect x=\"" << ml + pw + 12 << "\" y=\"" << legend_y - 9
            << "\" width=\"12\" height=\"12\" fill=\"" << stroke << "\"/>\n";
        out << "<text x=\"" << ml + pw + 30 << "\" y=\"" << legend_y + 2
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << method << "</text>\n";
        legend_y += 20;
        ++color;
    }
    out << "</svg>\n";
}

}  // namespace detail

/// Writes raw_results.csv, aggregated.csv, timing.csv and the two SVG curve
/// plots. Wall-clock timings live only in timing.csv so the raw CSV is
/// byte-identical across reruns of the same configuration.
inline void emit_reports(const ExperimentResults& results, const ExperimentConfig& config,
                         const std::string& out_dir) {
    if (results.runs.empty()) throw std::invalid_argument("emit_reports: no results");
    std::filesystem::create_directories(out_dir);
    const auto path = [&](const char* name) {
        return (std::filesystem::path(out_dir) / name).string();
    };

    {
        std::ofstream raw(path("raw_results.csv"), std::ios::binary);
        if (!raw) throw std::runtime_error("cannot write " + path("raw_results.csv"));
        raw << "method,seed,polygons,n_t,accuracy,macro_f1,per_class_f1,error\n";
        for (const auto& r : results.runs) {
            std::string err = r.error;
            for (auto& ch : err)
                if (ch == ',' || ch == '\n') ch = ';';
            std::string f1s;
            for (double f : r.per_class_f1) {
                if (!f1s.empty()) f1s += ';';
                f1s += detail::csv_double(f);
            }
            raw << r.method << "," << r.seed << "," << r.polygons << "," << r.n_t << ","
                << detail::csv_double(r.accuracy) << "," << detail::csv_double(r.macro_f1) << ","
                << f1s << "," << err << "\n";
        }
    }

    {
        std::ofstream timing(path("timing.csv"), std::ios::binary);
        if (!timing) throw std::runtime_error("cannot write " + path("timing.csv"));
        timing << "method,n_t,mean_seconds\n";
        std::map<std::pair<std::string, int>, std::vector<const RunResult*>> groups;
        for (const auto& r : results.runs)
            if (!r.failed && r.method != "sampling") groups[{r.method, r.polygons}].push_back(&r);
        for (const auto& [key, rows] : groups) {
            double mean_nt = 0.0, mean_s = 0.0;
            for (const RunResult* r : rows) {
                mean_nt += static_cast<double>(r->n_t);
                mean_s += r->seconds;
            }
            mean_nt /= static_cast<double>(rows.size());
            mean_s /= static_cast<double>(rows.size());
            timing << key.first << "," << detail::csv_double(mean_nt) << ","
                   << detail::csv_double(mean_s) << "\n";
        }
    }

    const auto curves = detail::collect_curves(results, config.queries);
    std::map<std::string, std::vector<double>> acc_series;
    {
        std::ofstream agg(path("aggregated.csv"), std::ios::binary);
        if (!agg) throw std::runtime_error("cannot write " + path("aggregated.csv"));
        agg << "query_n_t,method,mean_accuracy,mean_macro_f1,clamped\n";
        for (const auto& [method, mc] : curves) {
            const AggregatedCurve acc = aggregate_curves(mc.accuracy, config.queries);
            const AggregatedCurve f1 = aggregate_curves(mc.macro_f1, config.queries);
            acc_series[method] = acc.mean;
            for (std::size_t i = 0; i < config.queries.size(); ++i)
                agg << detail::csv_double(config.queries[i]) << "," << method << ","
                    << detail::csv_double(acc.mean[i]) << "," << detail::csv_double(f1.mean[i])
                    << "," << (acc.clamped[i] ? 1 : 0) << "\n";
        }
    }

    detail::write_svg_curves(path("curves_log.svg"), acc_series, config.queries, true,
                             "accuracy vs labelled target quantity");
    detail::write_svg_curves(path("curves_linear.svg"), acc_series, config.queries, false,
                             "accuracy vs labelled target quantity");
}

// ---------------------------------------------------------------------------
// sweep config JSON
// ---------------------------------------------------------------------------

inline ExperimentConfig experiment_config_from_json(const nlohmann::ordered_json& j) {
    ExperimentConfig c;
    if (j.contains("data")) {
        const auto& d = j["data"];
        if (d.contains("dirs")) {
            c.use_dirs = true;
            c.source_dir = d["dirs"].at("source").get<std::string>();
            c.target_train_dir = d["dirs"].at("target_train").get<std::string>();
            c.target_test_dir = d["dirs"].at("target_test").get<std::string>();
        } else if (d.contains("spec")) {
            c.data_spec = synthetic_spec_from_json(d["spec"]);
        }
    }
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& name : j["methods"]) c.methods.push_back(method_from_name(name));
    }
    if (j.contains("polygon_schedule"))
        c.polygon_schedule = j["polygon_schedule"].get<std::vector<int>>();
    c.repeats = j.value("repeats", c.repeats);
    if (j.contains("queries")) c.queries = j["queries"].get<std::vector<double>>();
    c.base_seed = j.value("seed", c.base_seed);
    if (j.contains("t_max"))
        c.method_base.schedule = LambdaSchedule::with_tmax(j["t_max"].get<double>());
    if (j.contains("arch")) {
        const auto& a = j["arch"];
        c.method_base.arch.conv_filters = a.value("conv_filters", c.method_base.arch.conv_filters);
        c.method_base.arch.kernel_len = a.value("kernel_len", c.method_base.arch.kernel_len);
        c.method_base.arch.fc_units = a.value("fc_units", c.method_base.arch.fc_units);
        c.method_base.arch.dropout_rate = a.value("dropout_rate", c.method_base.arch.dropout_rate);
    }
    if (j.contains("budget")) {
        c.method_base.budget.grad_updates =
            j["budget"].value("grad_updates", c.method_base.budget.grad_updates);
        c.method_base.budget.batch_size =
            j["budget"].value("batch_size", c.method_base.budget.batch_size);
    }
    c.method_base.lr = j.value("lr", c.method_base.lr);
    c.method_base.dann_alpha = j.value("dann_alpha", c.method_base.dann_alpha);
    c.method_base.mme_temperature = j.value("mme_temperature", c.method_base.mme_temperature);
    c.method_base.mme_lambda = j.value("mme_lambda", c.method_base.mme_lambda);
    c.threads = j.value("threads", c.threads);
    return c;
}

}  // namespace sourcerer
