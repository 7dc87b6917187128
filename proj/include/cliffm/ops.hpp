#pragma once

// Differentiable ops: thin tape wrappers over the kernels. Each op checks
// shapes on entry, runs the forward kernel, and registers a closure that
// routes output grads to whichever parents still need them.

#include <optional>

#include "cliffm/kernels.hpp"
#include "cliffm/rng.hpp"
#include "cliffm/tape.hpp"

namespace cliffm {

template <typename T>
using VarOf = typename Tape<T>::Var;

template <typename T>
VarOf<T> conv2d(Tape<T>& t, VarOf<T> x, VarOf<T> w, std::optional<VarOf<T>> b, ConvSpec cs) {
    const TensorT<T>* bias = b ? &t.val(*b) : nullptr;
    TensorT<T> y = conv2d_fwd(t.val(x), t.val(w), bias, cs);
    std::vector<VarOf<T>> parents{x, w};
    if (b) parents.push_back(*b);
    return t.make(
        std::move(y), parents,
        [x, w, b, cs](Tape<T>& t, VarOf<T> out) {
            const TensorT<T>& dy = t.grad(out);
            if (t.needs_grad(x))
                accumulate(t.grad(x), conv2d_bwd_input(t.val(x).shape, t.val(w), dy, cs));
            if (t.needs_grad(w))
                accumulate(t.grad(w), conv2d_bwd_weight(t.val(x), t.val(w).shape, dy, cs));
            if (b && t.needs_grad(*b)) accumulate(t.grad(*b), conv2d_bwd_bias(dy));
        },
        "conv2d");
}

template <typename T>
VarOf<T> batch_norm_train(Tape<T>& t, VarOf<T> x, VarOf<T> gamma, VarOf<T> beta,
                          TensorT<T>& running_mean, TensorT<T>& running_var, T momentum, T eps) {
    BnSaved<T> saved;
    TensorT<T> y = bn_fwd_train(t.val(x), t.val(gamma), t.val(beta), eps, saved);
    const i64 n = t.val(x).dim(0) * t.val(x).dim(2) * t.val(x).dim(3);
    const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
    for (i64 c = 0; c < running_mean.numel(); ++c) {
        running_mean[c] = (T(1) - momentum) * running_mean[c] +
                          momentum * saved.mean[static_cast<size_t>(c)];
        running_var[c] = (T(1) - momentum) * running_var[c] +
                         momentum * saved.var[static_cast<size_t>(c)] * unbias;
    }
    return t.make(
        std::move(y), {x, gamma, beta},
        [x, gamma, beta, saved](Tape<T>& t, VarOf<T> out) {
            TensorT<T> dx, dg, db;
            bn_bwd_train(t.val(x), t.grad(out), t.val(gamma), saved, dx, dg, db);
            if (t.needs_grad(x)) accumulate(t.grad(x), dx);
            if (t.needs_grad(gamma)) accumulate(t.grad(gamma), dg);
            if (t.needs_grad(beta)) accumulate(t.grad(beta), db);
        },
        "batch_norm");
}

template <typename T>
VarOf<T> batch_norm_eval(Tape<T>& t, VarOf<T> x, VarOf<T> gamma, VarOf<T> beta,
                         const TensorT<T>& running_mean, const TensorT<T>& running_var, T eps) {
    TensorT<T> y = bn_fwd_eval(t.val(x), t.val(gamma), t.val(beta), running_mean, running_var, eps);
    return t.make(
        std::move(y), {x, gamma, beta},
        [x, gamma, beta, rm = running_mean, rv = running_var, eps](Tape<T>& t, VarOf<T> out) {
            TensorT<T> dx, dg, db;
            bn_bwd_eval(t.val(x), t.grad(out), t.val(gamma), rm, rv, eps, dx, dg, db);
            if (t.needs_grad(x)) accumulate(t.grad(x), dx);
            if (t.needs_grad(gamma)) accumulate(t.grad(gamma), dg);
            if (t.needs_grad(beta)) accumulate(t.grad(beta), db);
        },
        "batch_norm_eval");
}

template <typename T>
VarOf<T> layer_norm_channels(Tape<T>& t, VarOf<T> x, VarOf<T> gamma, VarOf<T> beta, T eps) {
    LnSaved<T> saved;
    TensorT<T> y = ln_fwd(t.val(x), t.val(gamma), t.val(beta), eps, saved);
    return t.make(
        std::move(y), {x, gamma, beta},
        [x, gamma, beta, saved](Tape<T>& t, VarOf<T> out) {
            TensorT<T> dx, dg, db;
            ln_bwd(t.val(x), t.grad(out), t.val(gamma), saved, dx, dg, db);
            if (t.needs_grad(x)) accumulate(t.grad(x), dx);
            if (t.needs_grad(gamma)) accumulate(t.grad(gamma), dg);
            if (t.needs_grad(beta)) accumulate(t.grad(beta), db);
        },
        "layer_norm");
}

template <typename T>
VarOf<T> silu(Tape<T>& t, VarOf<T> x) {
    return t.make(
        silu_fwd(t.val(x)), {x},
        [x](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(x)) accumulate(t.grad(x), silu_bwd(t.val(x), t.grad(out)));
        },
        "silu");
}

template <typename T>
VarOf<T> sigmoid(Tape<T>& t, VarOf<T> x) {
    return t.make(
        sigmoid_fwd(t.val(x)), {x},
        [x](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(x)) accumulate(t.grad(x), sigmoid_bwd(t.val(out), t.grad(out)));
        },
        "sigmoid");
}

template <typename T>
VarOf<T> channel_roll(Tape<T>& t, VarOf<T> x, i64 s) {
    const i64 D = t.val(x).dim(1);
    return t.make(
        channel_roll_fwd(t.val(x), s), {x},
        [x, s, D](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(x))
                accumulate(t.grad(x), channel_roll_fwd(t.grad(out), (D - s) % D));
        },
        "channel_roll");
}

template <typename T>
VarOf<T> bilinear_resize(Tape<T>& t, VarOf<T> x, i64 Ho, i64 Wo) {
    return t.make(
        bilinear_fwd(t.val(x), Ho, Wo), {x},
        [x, shape = t.val(x).shape](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(x)) accumulate(t.grad(x), bilinear_bwd(shape, t.grad(out)));
        },
        "bilinear_resize");
}

template <typename T>
VarOf<T> adaptive_avg_pool(Tape<T>& t, VarOf<T> x, i64 Ho, i64 Wo) {
    return t.make(
        adaptive_avg_pool_fwd(t.val(x), Ho, Wo), {x},
        [x, shape = t.val(x).shape](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(x)) accumulate(t.grad(x), adaptive_avg_pool_bwd(shape, t.grad(out)));
        },
        "adaptive_avg_pool");
}

template <typename T>
VarOf<T> avg_pool(Tape<T>& t, VarOf<T> x, i64 k) {
    if (k < 1) throw ConfigError("avg_pool: k >= 1 required");
    if (t.val(x).dim(2) % k != 0 || t.val(x).dim(3) % k != 0)
        throw ConfigError("avg_pool: input extents not divisible by k");
    return adaptive_avg_pool(t, x, t.val(x).dim(2) / k, t.val(x).dim(3) / k);
}

template <typename T>
VarOf<T> global_avg_pool(Tape<T>& t, VarOf<T> x) {
    return adaptive_avg_pool(t, x, 1, 1);
}

// Per-sample stochastic depth. Train mode draws one keep decision per batch
// element; survivors are rescaled by 1/(1-p).
template <typename T>
VarOf<T> drop_path(Tape<T>& t, VarOf<T> x, double p, Rng& rng, Mode mode) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("drop_path: rate must be in [0, 1)");
    if (mode == Mode::Eval || p == 0.0) return x;
    const i64 B = t.val(x).dim(0);
    const i64 rest = t.val(x).numel() / B;
    std::vector<T> mask(static_cast<size_t>(B));
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (i64 b = 0; b < B; ++b)
        mask[static_cast<size_t>(b)] = rng.uniform() < 1.0 - p ? scale : T(0);
    TensorT<T> y(t.val(x).shape);
    for (i64 b = 0; b < B; ++b) {
        const T m = mask[static_cast<size_t>(b)];
        const T* xp = t.val(x).data() + b * rest;
        T* yp = y.data() + b * rest;
        for (i64 i = 0; i < rest; ++i) yp[i] = m * xp[i];
    }
    return t.make(
        std::move(y), {x},
        [x, mask, B, rest](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            TensorT<T> dx(t.val(x).shape);
            const TensorT<T>& dy = t.grad(out);
            for (i64 b = 0; b < B; ++b) {
                const T m = mask[static_cast<size_t>(b)];
                for (i64 i = 0; i < rest; ++i) dx[b * rest + i] = m * dy[b * rest + i];
            }
            accumulate(t.grad(x), dx);
        },
        "drop_path");
}

template <typename T>
VarOf<T> dropout(Tape<T>& t, VarOf<T> x, double p, Rng& rng, Mode mode) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
    if (mode == Mode::Eval || p == 0.0) return x;
    const i64 n = t.val(x).numel();
    TensorT<T> mask(t.val(x).shape);
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (i64 i = 0; i < n; ++i) mask[i] = rng.uniform() < 1.0 - p ? scale : T(0);
    TensorT<T> y(t.val(x).shape);
    for (i64 i = 0; i < n; ++i) y[i] = mask[i] * t.val(x)[i];
    return t.make(
        std::move(y), {x},
        [x, mask](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            TensorT<T> dx(mask.shape);
            for (i64 i = 0; i < dx.numel(); ++i) dx[i] = mask[i] * t.grad(out)[i];
            accumulate(t.grad(x), dx);
        },
        "dropout");
}

template <typename T>
VarOf<T> linear(Tape<T>& t, VarOf<T> x, VarOf<T> w, std::optional<VarOf<T>> b) {
    const TensorT<T>* bias = b ? &t.val(*b) : nullptr;
    TensorT<T> y = linear_fwd(t.val(x), t.val(w), bias);
    std::vector<VarOf<T>> parents{x, w};
    if (b) parents.push_back(*b);
    return t.make(
        std::move(y), parents,
        [x, w, b](Tape<T>& t, VarOf<T> out) {
            const TensorT<T>& dy = t.grad(out);
            const TensorT<T>& xv = t.val(x);
            const TensorT<T>& wv = t.val(w);
            const i64 B = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
            if (t.needs_grad(x)) {
                TensorT<T> dx(xv.shape);
                for (i64 bb = 0; bb < B; ++bb)
                    for (i64 o = 0; o < O; ++o)
                        for (i64 f = 0; f < F; ++f)
                            dx.at(bb, f) += dy.at(bb, o) * wv.at(o, f);
                accumulate(t.grad(x), dx);
            }
            if (t.needs_grad(w)) {
                TensorT<T> dw(wv.shape);
                for (i64 o = 0; o < O; ++o)
                    for (i64 bb = 0; bb < B; ++bb)
                        for (i64 f = 0; f < F; ++f)
                            dw.at(o, f) += dy.at(bb, o) * xv.at(bb, f);
                accumulate(t.grad(w), dw);
            }
            if (b && t.needs_grad(*b)) {
                TensorT<T> db({O});
                for (i64 o = 0; o < O; ++o)
                    for (i64 bb = 0; bb < B; ++bb) db[o] += dy.at(bb, o);
                accumulate(t.grad(*b), db);
            }
        },
        "linear");
}

template <typename T>
VarOf<T> add(Tape<T>& t, VarOf<T> a, VarOf<T> b) {
    if (!t.val(a).same_shape(t.val(b))) throw ConfigError("add: shape mismatch");
    return t.make(
        map_binary(t.val(a), t.val(b), [](T x, T y) { return x + y; }), {a, b},
        [a, b](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(a)) accumulate(t.grad(a), t.grad(out));
            if (t.needs_grad(b)) accumulate(t.grad(b), t.grad(out));
        },
        "add");
}

template <typename T>
VarOf<T> sub(Tape<T>& t, VarOf<T> a, VarOf<T> b) {
    if (!t.val(a).same_shape(t.val(b))) throw ConfigError("sub: shape mismatch");
    return t.make(
        map_binary(t.val(a), t.val(b), [](T x, T y) { return x - y; }), {a, b},
        [a, b](Tape<T>& t, VarOf<T> out) {
            if (t.needs_grad(a)) accumulate(t.grad(a), t.grad(out));
            if (t.needs_grad(b))
                accumulate(t.grad(b), map_unary(t.grad(out), [](T g) { return -g; }));
        },
        "sub");
}

template <typename T>
VarOf<T> mul(Tape<T>& t, VarOf<T> a, VarOf<T> b) {
    if (!t.val(a).same_shape(t.val(b))) throw ConfigError("mul: shape mismatch");
    return t.make(
        map_binary(t.val(a), t.val(b), [](T x, T y) { return x * y; }), {a, b},
        [a, b](Tape<T>& t, VarOf<T> out) {
            const TensorT<T>& dy = t.grad(out);
            if (t.needs_grad(a))
                accumulate(t.grad(a),
                           map_binary(dy, t.val(b), [](T g, T y) { return g * y; }));
            if (t.needs_grad(b))
                accumulate(t.grad(b),
                           map_binary(dy, t.val(a), [](T g, T x) { return g * x; }));
        },
        "mul");
}

// Multiply a BxCxHxW tensor by a per-channel vector (layer scale, channel gates).
template <typename T>
VarOf<T> scale_channels(Tape<T>& t, VarOf<T> x, VarOf<T> s) {
    const TensorT<T>& xv = t.val(x);
    const TensorT<T>& sv = t.val(s);
    if (sv.rank() != 1 || sv.dim(0) != xv.dim(1))
        throw ConfigError("scale_channels: per-channel vector required");
    const i64 B = xv.dim(0), C = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    TensorT<T> y(xv.shape);
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 bc = lo; bc < hi; ++bc) {
            const T m = sv[bc % C];
            for (i64 p = 0; p < plane; ++p) y[bc * plane + p] = m * xv[bc * plane + p];
        }
    });
    return t.make(
        std::move(y), {x, s},
        [x, s, B, C, plane](Tape<T>& t, VarOf<T> out) {
            const TensorT<T>& dy = t.grad(out);
            if (t.needs_grad(x)) {
                TensorT<T> dx(t.val(x).shape);
                parallel_for(B * C, [&](i64 lo, i64 hi) {
                    for (i64 bc = lo; bc < hi; ++bc) {
                        const T m = t.val(s)[bc % C];
                        for (i64 p = 0; p < plane; ++p)
                            dx[bc * plane + p] = m * dy[bc * plane + p];
                    }
                });
                accumulate(t.grad(x), dx);
            }
            if (t.needs_grad(s)) {
                TensorT<T> ds({C});
                parallel_for(C, [&](i64 clo, i64 chi) {
                    for (i64 c = clo; c < chi; ++c) {
                        T acc = T(0);
                        for (i64 b = 0; b < B; ++b)
                            acc += dot_lanes(dy.data() + (b * C + c) * plane,
                                             t.val(x).data() + (b * C + c) * plane, plane);
                        ds[c] = acc;
                    }
                });
                accumulate(t.grad(s), ds);
            }
        },
        "scale_channels");
}

template <typename T>
VarOf<T> concat_channels(Tape<T>& t, const std::vector<VarOf<T>>& xs) {
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(xs.size());
    for (auto v : xs) ptrs.push_back(&t.val(v));
    TensorT<T> y = concat_channels_fwd(ptrs);
    return t.make(
        std::move(y), xs,
        [xs](Tape<T>& t, VarOf<T> out) {
            const TensorT<T>& dy = t.grad(out);
            const i64 B = dy.dim(0), Ctot = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
            i64 coff = 0;
            for (auto v : xs) {
                const i64 C = t.val(v).dim(1);
                if (t.needs_grad(v)) {
                    TensorT<T> dx(t.val(v).shape);
                    for (i64 b = 0; b < B; ++b)
                        std::copy_n(dy.data() + (b * Ctot + coff) * plane, C * plane,
                                    dx.data() + b * C * plane);
                    accumulate(t.grad(v), dx);
                }
                coff += C;
            }
        },
        "concat_channels");
}

template <typename T>
VarOf<T> reshape(Tape<T>& t, VarOf<T> x, Shape s) {
    if (numel_of(s) != t.val(x).numel()) throw ConfigError("reshape: element count mismatch");
    TensorT<T> y = t.val(x);
    y.shape = s;
    return t.make(
        std::move(y), {x},
        [x](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            TensorT<T> g = t.grad(out);
            g.shape = t.val(x).shape;
            accumulate(t.grad(x), g);
        },
        "reshape");
}

template <typename T>
VarOf<T> broadcast_hw(Tape<T>& t, VarOf<T> x, i64 H, i64 W) {
    return t.make(
        broadcast_hw_fwd(t.val(x), H, W), {x},
        [x, H, W](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            const TensorT<T>& dy = t.grad(out);
            const i64 BC = t.val(x).dim(0) * t.val(x).dim(1);
            TensorT<T> dx(t.val(x).shape);
            for (i64 bc = 0; bc < BC; ++bc) {
                T acc = T(0);
                const T* gp = dy.data() + bc * H * W;
                for (i64 p = 0; p < H * W; ++p) acc += gp[p];
                dx[bc] = acc;
            }
            accumulate(t.grad(x), dx);
        },
        "broadcast_hw");
}

// Fixed-weight reduction to a scalar; used to scalarize multi-output ops for
// gradient checking and to scale losses.
template <typename T>
VarOf<T> weighted_sum(Tape<T>& t, VarOf<T> x, TensorT<T> weights) {
    if (weights.numel() != t.val(x).numel()) throw ConfigError("weighted_sum: size mismatch");
    T acc = T(0);
    for (i64 i = 0; i < weights.numel(); ++i) acc += weights[i] * t.val(x)[i];
    TensorT<T> y({1});
    y[0] = acc;
    return t.make(
        std::move(y), {x},
        [x, weights](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            const T g = t.grad(out)[0];
            TensorT<T> dx(t.val(x).shape);
            for (i64 i = 0; i < dx.numel(); ++i) dx[i] = g * weights[i];
            accumulate(t.grad(x), dx);
        },
        "weighted_sum");
}

template <typename T>
VarOf<T> scale(Tape<T>& t, VarOf<T> x, T factor) {
    TensorT<T> y(t.val(x).shape);
    for (i64 i = 0; i < y.numel(); ++i) y[i] = factor * t.val(x)[i];
    return t.make(
        std::move(y), {x},
        [x, factor](Tape<T>& t, VarOf<T> out) {
            if (!t.needs_grad(x)) return;
            TensorT<T> dx(t.grad(out).shape);
            for (i64 i = 0; i < dx.numel(); ++i) dx[i] = factor * t.grad(out)[i];
            accumulate(t.grad(x), dx);
        },
        "scale");
}

}  // namespace cliffm
