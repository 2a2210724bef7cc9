#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sourcerer/rng.hpp"
#include "sourcerer/tensor.hpp"

namespace sourcerer {

enum class RunMode { Train, Eval };

// ---------------------------------------------------------------------------
// conv1d: 1-d convolution along the temporal axis, zero-padded so the output
// keeps the input's temporal length. input N x C_in x T, weights
// C_out x C_in x K (K odd), bias C_out -> output N x C_out x T.
// ---------------------------------------------------------------------------

inline Tensor conv1d(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_rank(input, 3, "conv1d input");
    require_rank(weights, 3, "conv1d weights");
    require_rank(bias, 1, "conv1d bias");
    const std::size_t n = input.shape[0], c_in = input.shape[1], t_len = input.shape[2];
    const std::size_t c_out = weights.shape[0], k = weights.shape[2];
    if (weights.shape[1] != c_in)
        throw ShapeError("conv1d: input has " + std::to_string(c_in) +
                         " channels but weights expect " + std::to_string(weights.shape[1]));
    if (bias.shape[0] != c_out)
        throw ShapeError("conv1d: bias size " + std::to_string(bias.shape[0]) +
                         " does not match " + std::to_string(c_out) + " output channels");
    if (k % 2 == 0) throw std::invalid_argument("conv1d: kernel length must be odd");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;

    Tensor out({n, c_out, t_len});
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t co = 0; co < c_out; ++co) {
            for (std::size_t t = 0; t < t_len; ++t) {
                double acc = bias[co];
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                    const float* x = &input.data[(in * c_in + ci) * t_len];
                    const float* w = &weights.data[(co * c_in + ci) * k];
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::ptrdiff_t src =
                            static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(kk) - pad;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                        acc += static_cast<double>(x[src]) * static_cast<double>(w[kk]);
                    }
                }
                out.at(in, co, t) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

struct Conv1dGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& weights,
                                   const Tensor& grad_out) {
    const std::size_t n = input.shape[0], c_in = input.shape[1], t_len = input.shape[2];
    const std::size_t c_out = weights.shape[0], k = weights.shape[2];
    require_shape(grad_out, {n, c_out, t_len}, "conv1d_backward grad_out");
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k - 1) / 2;

    Conv1dGrads g{Tensor({n, c_in, t_len}), Tensor({c_out, c_in, k}), Tensor({c_out})};
    std::vector<double> w_acc(weights.numel(), 0.0);
    std::vector<double> b_acc(c_out, 0.0);
    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t co = 0; co < c_out; ++co) {
            const float* go = &grad_out.data[(in * c_out + co) * t_len];
            for (std::size_t t = 0; t < t_len; ++t) b_acc[co] += go[t];
            for (std::size_t ci = 0; ci < c_in; ++ci) {
                const float* x = &input.data[(in * c_in + ci) * t_len];
                const float* w = &weights.data[(co * c_in + ci) * k];
                float* gx = &g.input.data[(in * c_in + ci) * t_len];
                double* gw = &w_acc[(co * c_in + ci) * k];
                for (std::size_t t = 0; t < t_len; ++t) {
                    const double go_t = go[t];
                    for (std::size_t kk = 0; kk < k; ++kk) {
                        const std::ptrdiff_t src =
                            static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(kk) - pad;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
                        gx[src] += static_cast<float>(go_t * w[kk]);
                        gw[kk] += go_t * x[src];
                    }
                }
            }
        }
    }
    for (std::size_t i = 0; i < w_acc.size(); ++i) g.weights[i] = static_cast<float>(w_acc[i]);
    for (std::size_t i = 0; i < c_out; ++i) g.bias[i] = static_cast<float>(b_acc[i]);
    return g;
}

// ---------------------------------------------------------------------------
// batch_norm1d: per-channel normalization over batch x time. Accepts
// N x C x T or N x C input. BatchStats mode normalizes with batch statistics
// and returns EMA-updated running stats; FrozenStats normalizes with the
// stored running stats and returns them untouched.
// ---------------------------------------------------------------------------

enum class BnMode { BatchStats, FrozenStats };

struct BatchNorm1dResult {
    Tensor output;
    Tensor new_running_mean;
    Tensor new_running_var;
    // statistics actually used to normalize; cached for the backward pass
    Tensor norm_mean;
    Tensor norm_invstd;
};

inline BatchNorm1dResult batch_norm1d(const Tensor& input, const Tensor& gamma,
                                      const Tensor& beta, const Tensor& running_mean,
                                      const Tensor& running_var, BnMode mode,
                                      float momentum = 0.1f, float eps = 1e-5f) {
    if (input.rank() != 2 && input.rank() != 3)
        throw ShapeError("batch_norm1d: expected rank 2 or 3 input, got " + shape_string(input));
    const std::size_t n = input.shape[0];
    const std::size_t c = input.shape[1];
    const std::size_t t_len = input.rank() == 3 ? input.shape[2] : 1;
    require_shape(gamma, {c}, "batch_norm1d gamma");
    require_shape(beta, {c}, "batch_norm1d beta");
    require_shape(running_mean, {c}, "batch_norm1d running_mean");
    require_shape(running_var, {c}, "batch_norm1d running_var");

    BatchNorm1dResult r;
    r.output = Tensor(input.shape);
    r.norm_mean = Tensor({c});
    r.norm_invstd = Tensor({c});

    if (mode == BnMode::BatchStats) {
        if (n < 2)
            throw std::invalid_argument(
                "batch_norm1d: batch of size 1 in batch-stats mode (variance undefined for "
                "training)");
        r.new_running_mean = running_mean;
        r.new_running_var = running_var;
        const std::size_t m = n * t_len;
        for (std::size_t ch = 0; ch < c; ++ch) {
            double sum = 0.0, sumsq = 0.0;
            for (std::size_t in = 0; in < n; ++in) {
                const float* x = &input.data[(in * c + ch) * t_len];
                for (std::size_t t = 0; t < t_len; ++t) {
                    sum += x[t];
                    sumsq += static_cast<double>(x[t]) * x[t];
                }
            }
            const double mean = sum / m;
            double var = sumsq / m - mean * mean;  // biased, used for normalization
            if (var < 0.0) var = 0.0;
            const double invstd = 1.0 / std::sqrt(var + eps);
            r.norm_mean[ch] = static_cast<float>(mean);
            r.norm_invstd[ch] = static_cast<float>(invstd);
            // unbiased variance feeds the running estimate
            const double var_unbiased = m > 1 ? var * m / (m - 1.0) : var;
            r.new_running_mean[ch] = static_cast<float>((1.0 - momentum) * running_mean[ch] +
                                                        momentum * mean);
            r.new_running_var[ch] = static_cast<float>((1.0 - momentum) * running_var[ch] +
                                                       momentum * var_unbiased);
        }
    } else {
        r.new_running_mean = running_mean;
        r.new_running_var = running_var;
        for (std::size_t ch = 0; ch < c; ++ch) {
            r.norm_mean[ch] = running_mean[ch];
            r.norm_invstd[ch] =
                static_cast<float>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
        }
    }

    for (std::size_t in = 0; in < n; ++in) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float mu = r.norm_mean[ch], is = r.norm_invstd[ch];
            const float g = gamma[ch], b = beta[ch];
            const float* x = &input.data[(in * c + ch) * t_len];
            float* y = &r.output.data[(in * c + ch) * t_len];
            for (std::size_t t = 0; t < t_len; ++t) y[t] = g * (x[t] - mu) * is + b;
        }
    }
    return r;
}

struct BatchNorm1dGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

inline BatchNorm1dGrads batch_norm1d_backward(const Tensor& input, const Tensor& gamma,
                                              const BatchNorm1dResult& fwd, BnMode mode,
                                              const Tensor& grad_out) {
    const std::size_t n = input.shape[0];
    const std::size_t c = input.shape[1];
    const std::size_t t_len = input.rank() == 3 ? input.shape[2] : 1;
    require_shape(grad_out, input.shape, "batch_norm1d_backward grad_out");

    BatchNorm1dGrads g{Tensor(input.shape), Tensor({c}), Tensor({c})};
    const std::size_t m = n * t_len;

    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = fwd.norm_mean[ch];
        const double invstd = fwd.norm_invstd[ch];
        const double gam = gamma[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
            const float* x = &input.data[(in * c + ch) * t_len];
            const float* dy = &grad_out.data[(in * c + ch) * t_len];
            for (std::size_t t = 0; t < t_len; ++t) {
                sum_dy += dy[t];
                sum_dy_xhat += static_cast<double>(dy[t]) * ((x[t] - mu) * invstd);
            }
        }
        g.beta[ch] = static_cast<float>(sum_dy);
        g.gamma[ch] = static_cast<float>(sum_dy_xhat);

        if (mode == BnMode::BatchStats) {
            // batch statistics depend on the input, so the mean/variance terms
            // contribute to dx
            for (std::size_t in = 0; in < n; ++in) {
                const float* x = &input.data[(in * c + ch) * t_len];
                const float* dy = &grad_out.data[(in * c + ch) * t_len];
                float* dx = &g.input.data[(in * c + ch) * t_len];
                for (std::size_t t = 0; t < t_len; ++t) {
                    const double xhat = (x[t] - mu) * invstd;
                    dx[t] = static_cast<float>(
                        gam * invstd *
                        (dy[t] - sum_dy / m - xhat * sum_dy_xhat / m));
                }
            }
        } else {
            const double scale = gam * invstd;
            for (std::size_t in = 0; in < n; ++in) {
                const float* dy = &grad_out.data[(in * c + ch) * t_len];
                float* dx = &g.input.data[(in * c + ch) * t_len];
                for (std::size_t t = 0; t < t_len; ++t)
                    dx[t] = static_cast<float>(scale * dy[t]);
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// dropout: inverted dropout. Train mode zeroes each element with the given
// probability and scales survivors by 1/(1-rate); eval mode is the identity.
// ---------------------------------------------------------------------------

struct DropoutResult {
    Tensor output;
    Tensor mask;  // empty in eval mode; otherwise 0 or 1/(1-rate) per element
};

inline DropoutResult dropout(const Tensor& input, float rate, RunMode mode, RngStream& rng) {
    if (rate < 0.0f || rate >= 1.0f)
        throw std::invalid_argument("dropout: rate must be in [0, 1)");
    DropoutResult r;
    if (mode == RunMode::Eval) {
        r.output = input;
        return r;
    }
    const float keep_scale = 1.0f / (1.0f - rate);
    r.output = Tensor(input.shape);
    r.mask = Tensor(input.shape);
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const float m = rng.next_float() >= rate ? keep_scale : 0.0f;
        r.mask[i] = m;
        r.output[i] = input[i] * m;
    }
    return r;
}

inline Tensor dropout_backward(const DropoutResult& fwd, const Tensor& grad_out) {
    if (fwd.mask.numel() == 0) return grad_out;  // eval: identity
    Tensor g(grad_out.shape);
    for (std::size_t i = 0; i < grad_out.numel(); ++i) g[i] = grad_out[i] * fwd.mask[i];
    return g;
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& input) {
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    return out;
}

inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
    Tensor g(input.shape);
    for (std::size_t i = 0; i < input.numel(); ++i) g[i] = input[i] > 0.0f ? grad_out[i] : 0.0f;
    return g;
}

// ---------------------------------------------------------------------------
// dense: affine map. input N x D, weights D x H, bias H -> N x H.
// ---------------------------------------------------------------------------

inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require_rank(input, 2, "dense input");
    require_rank(weights, 2, "dense weights");
    require_rank(bias, 1, "dense bias");
    const std::size_t n = input.shape[0], d = input.shape[1];
    const std::size_t h = weights.shape[1];
    if (weights.shape[0] != d)
        throw ShapeError("dense: input feature size " + std::to_string(d) +
                         " does not match weight rows " + std::to_string(weights.shape[0]));
    if (bias.shape[0] != h)
        throw ShapeError("dense: bias size " + std::to_string(bias.shape[0]) +
                         " does not match " + std::to_string(h) + " outputs");

    Tensor out({n, h});
    for (std::size_t in = 0; in < n; ++in) {
        const float* x = &input.data[in * d];
        for (std::size_t j = 0; j < h; ++j) {
            double acc = bias[j];
            const float* wcol = &weights.data[j];
            for (std::size_t i = 0; i < d; ++i) acc += static_cast<double>(x[i]) * wcol[i * h];
            out.at(in, j) = static_cast<float>(acc);
        }
    }
    return out;
}

struct DenseGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& input, const Tensor& weights,
                                 const Tensor& grad_out) {
    const std::size_t n = input.shape[0], d = input.shape[1], h = weights.shape[1];
    require_shape(grad_out, {n, h}, "dense_backward grad_out");
    DenseGrads g{Tensor({n, d}), Tensor({d, h}), Tensor({h})};
    std::vector<double> w_acc(d * h, 0.0);
    std::vector<double> b_acc(h, 0.0);
    for (std::size_t in = 0; in < n; ++in) {
        const float* x = &input.data[in * d];
        const float* go = &grad_out.data[in * h];
        float* gx = &g.input.data[in * d];
        for (std::size_t j = 0; j < h; ++j) b_acc[j] += go[j];
        for (std::size_t i = 0; i < d; ++i) {
            const float* wrow = &weights.data[i * h];
            double* gwrow = &w_acc[i * h];
            double acc = 0.0;
            const double xi = x[i];
            for (std::size_t j = 0; j < h; ++j) {
                acc += static_cast<double>(wrow[j]) * go[j];
                gwrow[j] += xi * go[j];
            }
            gx[i] = static_cast<float>(acc);
        }
    }
    for (std::size_t i = 0; i < w_acc.size(); ++i) g.weights[i] = static_cast<float>(w_acc[i]);
    for (std::size_t j = 0; j < h; ++j) g.bias[j] = static_cast<float>(b_acc[j]);
    return g;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy: mean per-sample negative log-likelihood with
// max-subtraction stabilization. Returns the loss and the softmax rows.
// ---------------------------------------------------------------------------

struct SoftmaxCrossEntropyResult {
    double loss = 0.0;
    Tensor probs;
};

inline SoftmaxCrossEntropyResult softmax_cross_entropy(const Tensor& logits,
                                                       const std::vector<int>& labels) {
    require_rank(logits, 2, "softmax_cross_entropy logits");
    const std::size_t n = logits.shape[0], c = logits.shape[1];
    if (labels.size() != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    SoftmaxCrossEntropyResult r;
    r.probs = Tensor({n, c});
    double loss_acc = 0.0;
    for (std::size_t in = 0; in < n; ++in) {
        const int label = labels[in];
        if (label < 0 || static_cast<std::size_t>(label) >= c)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                        " out of range [0, " + std::to_string(c) + ")");
        const float* row = &logits.data[in * c];
        float mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        const double log_denom = std::log(denom);
        float* p = &r.probs.data[in * c];
        for (std::size_t j = 0; j < c; ++j)
            p[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / denom);
        loss_acc += -(static_cast<double>(row[label]) - mx - log_denom);
    }
    r.loss = loss_acc / static_cast<double>(n);
    return r;
}

inline Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax_rows logits");
    const std::size_t n = logits.shape[0], c = logits.shape[1];
    Tensor probs({n, c});
    for (std::size_t in = 0; in < n; ++in) {
        const float* row = &logits.data[in * c];
        float mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        float* p = &probs.data[in * c];
        for (std::size_t j = 0; j < c; ++j)
            p[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / denom);
    }
    return probs;
}

inline Tensor softmax_cross_entropy_backward(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t n = probs.shape[0], c = probs.shape[1];
    Tensor g({n, c});
    const float inv_n = 1.0f / static_cast<float>(n);
    for (std::size_t in = 0; in < n; ++in) {
        const float* p = &probs.data[in * c];
        float* gr = &g.data[in * c];
        for (std::size_t j = 0; j < c; ++j) gr[j] = p[j] * inv_n;
        gr[labels[in]] -= inv_n;
    }
    return g;
}

}  // namespace sourcerer
