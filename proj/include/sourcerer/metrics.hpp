#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sourcerer/dataset.hpp"
#include "sourcerer/methods.hpp"
#include "sourcerer/tempcnn.hpp"

namespace sourcerer {

/// Confusion matrix (rows = truth, columns = prediction) with the derived
/// overall accuracy, per-class precision/recall/F1 and macro F1. Per-class
/// F1 uses the 0/0 -> 0 convention; the macro average runs over the classes
/// present in the union of truth and predictions.
struct MetricReport {
    std::size_t n_classes = 0;
    std::vector<std::size_t> confusion;  // n_classes x n_classes, row-major
    std::size_t total = 0;
    double overall_accuracy = 0.0;
    std::vector<double> precision;
    std::vector<double> recall;
    std::vector<double> f1;
    double macro_f1 = 0.0;

    std::size_t at(std::size_t truth, std::size_t pred) const {
        return confusion[truth * n_classes + pred];
    }
};

inline MetricReport metrics_from_confusion(std::vector<std::size_t> confusion,
                                           std::size_t n_classes) {
    if (confusion.size() != n_classes * n_classes)
        throw std::invalid_argument("metrics_from_confusion: matrix size mismatch");
    MetricReport r;
    r.n_classes = n_classes;
    r.confusion = std::move(confusion);
    r.precision.assign(n_classes, 0.0);
    r.recall.assign(n_classes, 0.0);
    r.f1.assign(n_classes, 0.0);

    std::size_t trace = 0;
    std::vector<std::size_t> row_sum(n_classes, 0), col_sum(n_classes, 0);
    for (std::size_t i = 0; i < n_classes; ++i)
        for (std::size_t j = 0; j < n_classes; ++j) {
            const std::size_t v = r.confusion[i * n_classes + j];
            r.total += v;
            row_sum[i] += v;
            col_sum[j] += v;
            if (i == j) trace += v;
        }
    if (r.total == 0) throw std::invalid_argument("metrics_from_confusion: empty matrix");
    r.overall_accuracy = static_cast<double>(trace) / static_cast<double>(r.total);

    std::size_t present = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t tp = r.confusion[c * n_classes + c];
        r.precision[c] = col_sum[c] ? static_cast<double>(tp) / col_sum[c] : 0.0;
        r.recall[c] = row_sum[c] ? static_cast<double>(tp) / row_sum[c] : 0.0;
        const double pr = r.precision[c] + r.recall[c];
        r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
        if (row_sum[c] + col_sum[c] > 0) {
            r.macro_f1 += r.f1[c];
            ++present;
        }
    }
    if (present) r.macro_f1 /= static_cast<double>(present);
    return r;
}

using ForwardFn = std::function<Tensor(const Tensor&)>;

inline std::vector<int> predict(const ForwardFn& forward, const Dataset& ds,
                                std::size_t batch_size = 256) {
    std::vector<int> out(ds.size());
    for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, ds.size());
        std::vector<std::size_t> order(end - begin);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = begin + i;
        Tensor batch = detail::gather_batch(ds, order, 0, order.size(), nullptr);
        Tensor logits = forward(batch);
        const std::size_t c = logits.shape[1];
        for (std::size_t i = 0; i < order.size(); ++i) {
            int argmax = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits.at(i, j) > logits.at(i, argmax)) argmax = static_cast<int>(j);
            out[begin + i] = argmax;
        }
    }
    return out;
}

/// Eval-mode forward, argmax, confusion matrix and the derived scores.
inline MetricReport evaluate(const ForwardFn& forward, const Dataset& test) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    const std::size_t c = test.n_classes();
    std::vector<int> preds = predict(forward, test);
    std::vector<std::size_t> confusion(c * c, 0);
    for (std::size_t i = 0; i < preds.size(); ++i)
        confusion[static_cast<std::size_t>(test.instances[i].class_id) * c + preds[i]] += 1;
    return metrics_from_confusion(std::move(confusion), c);
}

inline MetricReport evaluate(const TempCNNModel& model, const Dataset& test) {
    return evaluate([&](const Tensor& batch) { return forward_eval(model, batch); }, test);
}

inline nlohmann::ordered_json metric_report_json(const MetricReport& r) {
    nlohmann::ordered_json j;
    j["n_classes"] = r.n_classes;
    j["total"] = r.total;
    j["overall_accuracy"] = r.overall_accuracy;
    j["macro_f1"] = r.macro_f1;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["confusion"] = r.confusion;
    return j;
}

// ---------------------------------------------------------------------------
// accuracy-vs-quantity curve interpolation
// ---------------------------------------------------------------------------

struct CurvePoint {
    double n_t = 0.0;
    double value = 0.0;
};

struct InterpolatedValue {
    double value = 0.0;
    bool clamped = false;
};

/// Piecewise-linear interpolation of one run's curve at the query
/// quantities. Queries outside the observed range are clamped to the nearest
/// endpoint and flagged.
inline std::vector<InterpolatedValue> interpolate_curve(const std::vector<CurvePoint>& points,
                                                        const std::vector<double>& queries) {
    if (points.size() < 2)
        throw std::invalid_argument("interpolate_curve: need at least two points per run");
    for (std::size_t i = 1; i < points.size(); ++i)
        if (!(points[i].n_t > points[i - 1].n_t))
            throw std::invalid_argument("interpolate_curve: points must be sorted by n_t");

    std::vector<InterpolatedValue> out;
    out.reserve(queries.size());
    for (double q : queries) {
        InterpolatedValue v;
        if (q <= points.front().n_t) {
            v.value = points.front().value;
            v.clamped = q < points.front().n_t;
        } else if (q >= points.back().n_t) {
            v.value = points.back().value;
            v.clamped = q > points.back().n_t;
        } else {
            std::size_t hi = 1;
            while (points[hi].n_t < q) ++hi;
            const auto& a = points[hi - 1];
            const auto& b = points[hi];
            const double t = (q - a.n_t) / (b.n_t - a.n_t);
            v.value = a.value + t * (b.value - a.value);
        }
        out.push_back(v);
    }
    return out;
}

struct AggregatedCurve {
    std::vector<double> mean;     // per query, averaged over runs
    std::vector<bool> clamped;    // true when any run was clamped there
};

/// Interpolates each run's curve at the query grid, then averages pointwise.
inline AggregatedCurve aggregate_curves(const std::vector<std::vector<CurvePoint>>& runs,
                                        const std::vector<double>& queries) {
    if (runs.empty()) throw std::invalid_argument("aggregate_curves: no runs");
    AggregatedCurve agg;
    agg.mean.assign(queries.size(), 0.0);
    agg.clamped.assign(queries.size(), false);
    for (const auto& run : runs) {
        const auto vals = interpolate_curve(run, queries);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            agg.mean[i] += vals[i].value;
            if (vals[i].clamped) agg.clamped[i] = true;
        }
    }
    for (auto& v : agg.mean) v /= static_cast<double>(runs.size());
    return agg;
}

}  // namespace sourcerer
