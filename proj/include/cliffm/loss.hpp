#pragma once

#include "cliffm/ops.hpp"

namespace cliffm {

// Loss parameterization: smoothing factor, positive-weight cap and the hard
// logit clamp applied before the criterion.
struct LossConfig {
    int num_classes = 8;
    double smoothing = 0.1;
    double weight_cap = 15.0;
    double logit_clamp = 20.0;

    void validate() const {
        if (smoothing < 0.0 || smoothing >= 1.0)
            throw ConfigError("LossConfig: smoothing must be in [0, 1)");
        if (weight_cap < 1.0) throw ConfigError("LossConfig: weight cap must be >= 1");
        if (logit_clamp <= 0.0) throw ConfigError("LossConfig: clamp bound must be positive");
    }
};

// Positive-class weights from the training label matrix (N x C):
// w_c = min((N - n_c+) / max(n_c+, 1), cap).
template <typename T>
TensorT<T> class_weights(const TensorT<T>& labels, T cap = T(15)) {
    if (labels.rank() != 2) throw ConfigError("class_weights: N x C matrix required");
    const i64 N = labels.dim(0), C = labels.dim(1);
    if (N < 1) throw ConfigError("class_weights: empty label matrix");
    TensorT<T> w({C});
    for (i64 c = 0; c < C; ++c) {
        T pos = T(0);
        for (i64 i = 0; i < N; ++i) pos += labels.at(i, c);
        const T denom = std::max(pos, T(1));
        w[c] = std::min((static_cast<T>(N) - pos) / denom, cap);
    }
    return w;
}

// y' = (1 - eps) * y + 0.5 * eps, applied to (possibly fractional) targets.
template <typename T>
TensorT<T> smooth_targets(const TensorT<T>& y, T eps) {
    TensorT<T> out(y.shape);
    for (i64 i = 0; i < y.numel(); ++i) out[i] = (T(1) - eps) * y[i] + T(0.5) * eps;
    return out;
}

template <typename T>
inline T log_sigmoid(T z) {
    // min(z,0) - log1p(exp(-|z|)) is stable on both tails.
    return std::min(z, T(0)) - std::log1p(std::exp(-std::abs(z)));
}

// Weighted BCE with logits. Logits are hard-clamped to [-bound, bound]
// (zero gradient outside); per-sample mean over classes, then batch mean.
template <typename T>
VarOf<T> weighted_bce(Tape<T>& t, VarOf<T> logits, const TensorT<T>& targets,
                      const TensorT<T>& weights, T bound = T(20)) {
    const TensorT<T>& z = t.val(logits);
    if (z.rank() != 2 || !z.same_shape(targets)) throw ConfigError("weighted_bce: shape mismatch");
    if (weights.rank() != 1 || weights.dim(0) != z.dim(1))
        throw ConfigError("weighted_bce: weights must be per-class");
    if (!z.all_finite() || !targets.all_finite())
        throw NumericError("weighted_bce: non-finite input");
    const i64 B = z.dim(0), C = z.dim(1);
    T total = T(0);
    for (i64 i = 0; i < B; ++i) {
        T row = T(0);
        for (i64 c = 0; c < C; ++c) {
            const T zc = std::clamp(z.at(i, c), -bound, bound);
            const T y = targets.at(i, c);
            row += -weights[c] * y * log_sigmoid(zc) - (T(1) - y) * log_sigmoid(-zc);
        }
        total += row / static_cast<T>(C);
    }
    TensorT<T> out({1});
    out[0] = total / static_cast<T>(B);
    return t.make(
        std::move(out), {logits},
        [logits, targets, weights, bound, B, C](Tape<T>& t, VarOf<T> o) {
            if (!t.needs_grad(logits)) return;
            const T g = t.grad(o)[0] / static_cast<T>(B * C);
            const TensorT<T>& z = t.val(logits);
            TensorT<T> dz(z.shape);
            for (i64 i = 0; i < B; ++i) {
                for (i64 c = 0; c < C; ++c) {
                    const T raw = z.at(i, c);
                    if (raw > bound || raw < -bound) continue;  // clamp kills the gradient
                    const T s = sigmoid_scalar(raw);
                    const T y = targets.at(i, c);
                    dz.at(i, c) = g * ((T(1) - y) * s - weights[c] * y * (T(1) - s));
                }
            }
            accumulate(t.grad(logits), dz);
        },
        "weighted_bce");
}

}  // namespace cliffm
