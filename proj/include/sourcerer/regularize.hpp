#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "sourcerer/layers.hpp"
#include "sourcerer/param_set.hpp"
#include "sourcerer/tempcnn.hpp"

namespace sourcerer {

/// Slope of the log-log line through (t_min, lambda_tmin) and
/// (t_max, lambda_tmax). Negative whenever the regularization decays.
inline double compute_k(double t_min, double t_max, double lambda_tmin, double lambda_tmax) {
    if (!(t_min >= 1.0)) throw std::invalid_argument("compute_k: t_min must be >= 1");
    if (!(t_max > t_min)) throw std::invalid_argument("compute_k: t_max must exceed t_min");
    if (!(lambda_tmin > 0.0) || !(lambda_tmax > 0.0))
        throw std::invalid_argument("compute_k: lambda endpoints must be positive");
    return (std::log(lambda_tmax) - std::log(lambda_tmin)) /
           (std::log(t_max) - std::log(t_min));
}

/// The power curve mapping labelled-target-instance count to regularization
/// strength: lambda(n) = lambda_tmin * (n / t_min)^k, linear in log-log space.
/// t_max is the one user hyperparameter; the endpoints default to 1e10 at a
/// single instance and 1e-10 at t_max.
struct LambdaSchedule {
    double t_min = 1.0;
    double lambda_tmin = 1e10;
    double t_max = 1e6;
    double lambda_tmax = 1e-10;
    double k = 0.0;

    static LambdaSchedule with_tmax(double t_max) {
        LambdaSchedule s;
        s.t_max = t_max;
        s.k = compute_k(s.t_min, s.t_max, s.lambda_tmin, s.lambda_tmax);
        return s;
    }

    static LambdaSchedule custom(double t_min, double lambda_tmin, double t_max,
                                 double lambda_tmax) {
        if (!(lambda_tmin > lambda_tmax))
            throw std::invalid_argument("LambdaSchedule: lambda_tmin must exceed lambda_tmax");
        LambdaSchedule s{t_min, lambda_tmin, t_max, lambda_tmax, 0.0};
        s.k = compute_k(t_min, t_max, lambda_tmin, lambda_tmax);
        return s;
    }
};

inline double lambda_for(std::size_t n_t, const LambdaSchedule& s) {
    if (n_t == 0)
        throw std::invalid_argument(
            "lambda_for: n_t must be positive (callers skip training when no target data "
            "exists)");
    return std::exp(std::log(s.lambda_tmin) +
                    s.k * (std::log(static_cast<double>(n_t)) - std::log(s.t_min)));
}

/// Training length policy: stop after the gradient-update budget or one full
/// epoch, whichever takes longer. Fractional epochs round up so the update
/// budget is never undercut.
struct TrainBudget {
    int grad_updates = 5000;
    int batch_size = 32;
};

inline int epochs_for(std::size_t n_t, const TrainBudget& budget) {
    if (n_t == 0) throw std::invalid_argument("epochs_for: n_t must be positive");
    const std::size_t samples =
        static_cast<std::size_t>(budget.grad_updates) * static_cast<std::size_t>(budget.batch_size);
    const std::size_t epochs = (samples + n_t - 1) / n_t;
    return static_cast<int>(epochs > 0 ? epochs : 1);
}

/// Loss configuration for adaptation: cross-entropy plus lambda times the
/// squared L2 distance of the trainable parameters from a reference snapshot.
/// BN running statistics are non-trainable and therefore never penalized.
struct LossSpec {
    double lambda = 0.0;
    ParamSet reference;

    void validate_against(const ParamSet& params) const {
        if (lambda < 0.0) throw std::invalid_argument("LossSpec: lambda must be non-negative");
        if (lambda > 0.0) params.require_aligned(reference, "LossSpec reference");
    }
};

struct SourceRegLossResult {
    double total = 0.0;
    double cross_entropy = 0.0;
    double penalty = 0.0;  // lambda * squared distance, accumulated in 64-bit
    Tensor probs;
};

inline SourceRegLossResult source_reg_loss(const Tensor& logits, const std::vector<int>& labels,
                                           const ParamSet& params, const ParamSet& reference,
                                           double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("source_reg_loss: lambda must be non-negative");
    SourceRegLossResult r;
    auto ce = softmax_cross_entropy(logits, labels);
    r.cross_entropy = ce.loss;
    r.probs = std::move(ce.probs);
    r.penalty = lambda == 0.0 ? 0.0 : lambda * params.squared_distance(reference);
    r.total = r.cross_entropy + r.penalty;
    return r;
}

/// Adds the penalty's gradient, 2*lambda*(theta - theta_ref), onto existing
/// cross-entropy gradients. Cost is linear in the parameter count and does
/// not depend on the dataset size.
inline void add_penalty_gradient(ParamSet& grads, const ParamSet& params,
                                 const ParamSet& reference, double lambda) {
    if (lambda == 0.0) return;
    params.require_aligned(reference, "add_penalty_gradient");
    params.require_aligned(grads, "add_penalty_gradient");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params.entry(i).trainable) continue;
        const auto& p = params.entry(i).tensor;
        const auto& ref = reference.entry(i).tensor;
        auto& g = grads.entry(i).tensor;
        for (std::size_t j = 0; j < p.numel(); ++j)
            g[j] = static_cast<float>(
                g[j] + 2.0 * lambda * (static_cast<double>(p[j]) - static_cast<double>(ref[j])));
    }
}

/// Pins the BN running statistics: later train-mode forwards normalize with
/// the stored values while gamma/beta stay trainable. Idempotent.
inline void freeze_bn(TempCNNModel& model) { model.bn_frozen = true; }

}  // namespace sourcerer
