#pragma once

// Sparse rolling geometric interaction and the blocks built from it:
// cross-scale fusion, self refinement and the optional energy gate.

#include "cliffm/loss.hpp"
#include "cliffm/ops.hpp"

namespace cliffm {

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Param<T> w;                  // [Cout, Cin/g, k, k]
    std::optional<Param<T>> b;   // [Cout]
    ConvSpec spec;
};

template <typename T>
struct BatchNormLayer {
    Param<T> gamma, beta;
    TensorT<T> running_mean, running_var;  // buffers, not trained
    T momentum = T(0.1);
    T eps = T(1e-5);
};

template <typename T>
struct LayerNormLayer {
    Param<T> gamma, beta;
    T eps = T(1e-6);
};

template <typename T>
struct LinearLayer {
    Param<T> w;  // [O, F]
    Param<T> b;  // [O]
};

template <typename T>
Conv2dLayer<T> make_conv(i64 cout, i64 cin, int k, Rng& rng, int stride = 1, int pad = 0,
                         int groups = 1, bool bias = true) {
    Conv2dLayer<T> l;
    l.spec = ConvSpec{stride, pad, groups};
    l.w = Param<T>(TensorT<T>({cout, cin / groups, k, k}), /*wd=*/true);
    const double fan_in = static_cast<double>(cin / groups) * k * k;
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& x : l.w.value.v) x = static_cast<T>(rng.uniform(-bound, bound));
    if (bias) l.b = Param<T>(TensorT<T>::zeros({cout}));
    return l;
}

template <typename T>
BatchNormLayer<T> make_bn(i64 c) {
    BatchNormLayer<T> l;
    l.gamma = Param<T>(TensorT<T>::full({c}, T(1)));
    l.beta = Param<T>(TensorT<T>::zeros({c}));
    l.running_mean = TensorT<T>::zeros({c});
    l.running_var = TensorT<T>::full({c}, T(1));
    return l;
}

template <typename T>
LayerNormLayer<T> make_ln(i64 c) {
    LayerNormLayer<T> l;
    l.gamma = Param<T>(TensorT<T>::full({c}, T(1)));
    l.beta = Param<T>(TensorT<T>::zeros({c}));
    return l;
}

template <typename T>
LinearLayer<T> make_linear(i64 out, i64 in, Rng& rng) {
    LinearLayer<T> l;
    l.w = Param<T>(TensorT<T>({out, in}), /*wd=*/true);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    for (auto& x : l.w.value.v) x = static_cast<T>(rng.uniform(-bound, bound));
    l.b = Param<T>(TensorT<T>::zeros({out}));
    return l;
}

template <typename T>
Param<T> make_layer_scale(i64 d) {
    return Param<T>(TensorT<T>::full({d}, T(1e-5)));
}

template <typename T>
VarOf<T> apply(Tape<T>& t, Conv2dLayer<T>& l, VarOf<T> x) {
    std::optional<VarOf<T>> b;
    if (l.b) b = t.param(*l.b);
    return conv2d(t, x, t.param(l.w), b, l.spec);
}

template <typename T>
VarOf<T> apply(Tape<T>& t, BatchNormLayer<T>& l, VarOf<T> x, Mode mode) {
    if (mode == Mode::Train)
        return batch_norm_train(t, x, t.param(l.gamma), t.param(l.beta), l.running_mean,
                                l.running_var, l.momentum, l.eps);
    return batch_norm_eval(t, x, t.param(l.gamma), t.param(l.beta), l.running_mean,
                           l.running_var, l.eps);
}

template <typename T>
VarOf<T> apply(Tape<T>& t, LayerNormLayer<T>& l, VarOf<T> x) {
    return layer_norm_channels(t, x, t.param(l.gamma), t.param(l.beta), l.eps);
}

template <typename T>
VarOf<T> apply(Tape<T>& t, LinearLayer<T>& l, VarOf<T> x) {
    return linear(t, x, t.param(l.w), std::optional<VarOf<T>>(t.param(l.b)));
}

// ---------------------------------------------------------------------------
// rolling interaction
// ---------------------------------------------------------------------------

// Shift set {1, 2, D/4, D/2}, deduplicated and sorted.
inline std::vector<i64> shift_set(i64 d) {
    if (d < 8 || d % 4 != 0)
        throw ConfigError("shift_set: channel count must be >= 8 and divisible by 4");
    std::vector<i64> s{1, 2, d / 4, d / 2};
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

// Context is differential (diff = v - u); both wedge-like and inner-like
// terms are emitted per shift.
struct RollingConfig {
    i64 dim = 0;
    std::vector<i64> shifts;

    static RollingConfig from_dim(i64 d) {
        RollingConfig cfg;
        cfg.dim = d;
        cfg.shifts = shift_set(d);
        return cfg;
    }

    i64 concat_channels() const { return 2 * static_cast<i64>(shifts.size()) * dim; }

    void validate() const {
        if (dim % 4 != 0) throw ConfigError("RollingConfig: dim must be divisible by 4");
        for (size_t i = 0; i < shifts.size(); ++i) {
            if (shifts[i] < 1 || shifts[i] >= dim)
                throw ConfigError("RollingConfig: shift out of [1, D-1]");
            if (i > 0 && shifts[i] <= shifts[i - 1])
                throw ConfigError("RollingConfig: shifts must be strictly ascending");
        }
    }
};

// Pre-projection interaction features [wedge_s, inner_s] per shift, shifts
// ascending: channels 2*|S|*D. Single fused pass, no materialized rolls.
template <typename T>
TensorT<T> rolling_pre_fused(const TensorT<T>& u, const TensorT<T>& v,
                             const std::vector<i64>& shifts) {
    if (!u.same_shape(v)) throw ConfigError("rolling_product: u/v shape mismatch");
    const i64 B = u.dim(0), D = u.dim(1), H = u.dim(2), W = u.dim(3);
    const i64 plane = H * W;
    const i64 ns = static_cast<i64>(shifts.size());
    TensorT<T> diff(u.shape);
    for (i64 i = 0; i < u.numel(); ++i) diff[i] = v[i] - u[i];
    TensorT<T> out({B, 2 * ns * D, H, W});
    parallel_for(B * ns * D, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / (ns * D);
            const i64 si = (t / D) % ns;
            const i64 c = t % D;
            const i64 s = shifts[static_cast<size_t>(si)];
            const i64 src = (c - s + D) % D;
            const T* up = u.data() + (b * D + c) * plane;
            const T* dp = diff.data() + (b * D + c) * plane;
            const T* urs = u.data() + (b * D + src) * plane;
            const T* drs = diff.data() + (b * D + src) * plane;
            T* wedge = out.data() + (b * 2 * ns * D + 2 * si * D + c) * plane;
            T* inner = out.data() + (b * 2 * ns * D + (2 * si + 1) * D + c) * plane;
            for (i64 p = 0; p < plane; ++p) {
                const T prod = up[p] * drs[p];
                wedge[p] = prod - dp[p] * urs[p];
                inner[p] = prod * sigmoid_scalar(prod);
            }
        }
    });
    return out;
}

// Reverse pass of the fused interaction. All channel scatters are rewritten
// as gathers (src = (c-s) mod D is a bijection), so the loop parallelizes
// over (b, channel) deterministically.
template <typename T>
void rolling_pre_bwd(const TensorT<T>& u, const TensorT<T>& v, const std::vector<i64>& shifts,
                     const TensorT<T>& gout, TensorT<T>& du, TensorT<T>& dv) {
    const i64 B = u.dim(0), D = u.dim(1), plane = u.dim(2) * u.dim(3);
    const i64 ns = static_cast<i64>(shifts.size());
    TensorT<T> diff(u.shape);
    for (i64 i = 0; i < u.numel(); ++i) diff[i] = v[i] - u[i];
    du = TensorT<T>(u.shape);
    TensorT<T> ddiff(u.shape);
    parallel_for(B * D, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / D, d = t % D;
            T* dup = du.data() + (b * D + d) * plane;
            T* ddp = ddiff.data() + (b * D + d) * plane;
            const T* ud = u.data() + (b * D + d) * plane;
            const T* cd = diff.data() + (b * D + d) * plane;
            for (i64 si = 0; si < ns; ++si) {
                const i64 s = shifts[static_cast<size_t>(si)];
                const i64 src = (d - s + D) % D;       // channel this output reads
                const i64 dst = (d + s) % D;           // output channel that reads d
                const T* usrc = u.data() + (b * D + src) * plane;
                const T* csrc = diff.data() + (b * D + src) * plane;
                const T* udst = u.data() + (b * D + dst) * plane;
                const T* cdst = diff.data() + (b * D + dst) * plane;
                const T* gw_d = gout.data() + (b * 2 * ns * D + 2 * si * D + d) * plane;
                const T* gi_d = gout.data() + (b * 2 * ns * D + (2 * si + 1) * D + d) * plane;
                const T* gw_dst = gout.data() + (b * 2 * ns * D + 2 * si * D + dst) * plane;
                const T* gi_dst = gout.data() + (b * 2 * ns * D + (2 * si + 1) * D + dst) * plane;
                for (i64 p = 0; p < plane; ++p) {
                    // direct terms at output channel d: P = u_d * diff_src
                    const T prod = ud[p] * csrc[p];
                    const T sp = sigmoid_scalar(prod);
                    const T gp = gw_d[p] + gi_d[p] * sp * (T(1) + prod * (T(1) - sp));
                    dup[p] += gp * csrc[p];
                    ddp[p] += -gw_d[p] * usrc[p];
                    // gathered terms: output channel dst reads this channel as src
                    const T prod2 = udst[p] * cd[p];
                    const T sp2 = sigmoid_scalar(prod2);
                    const T gp2 = gw_dst[p] + gi_dst[p] * sp2 * (T(1) + prod2 * (T(1) - sp2));
                    ddp[p] += gp2 * udst[p];
                    dup[p] += -gw_dst[p] * cdst[p];
                }
            }
        }
    });
    // diff = v - u
    dv = ddiff;
    parallel_for(u.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) du[i] -= ddiff[i];
    });
}

// Scalar reference for the same features; kept deliberately naive (explicitly
// materialized rolls, per-element loops) so the fused kernel has an
// independent in-library baseline for the benchmark equivalence check.
template <typename T>
TensorT<T> rolling_pre_naive(const TensorT<T>& u, const TensorT<T>& v,
                             const std::vector<i64>& shifts) {
    if (!u.same_shape(v)) throw ConfigError("rolling_product: u/v shape mismatch");
    const i64 B = u.dim(0), D = u.dim(1), H = u.dim(2), W = u.dim(3);
    const i64 ns = static_cast<i64>(shifts.size());
    TensorT<T> diff(u.shape);
    for (i64 i = 0; i < u.numel(); ++i) diff[i] = v[i] - u[i];
    TensorT<T> out({B, 2 * ns * D, H, W});
    for (i64 si = 0; si < ns; ++si) {
        const i64 s = shifts[static_cast<size_t>(si)];
        TensorT<T> rd = channel_roll_fwd(diff, s);
        TensorT<T> ru = channel_roll_fwd(u, s);
        for (i64 b = 0; b < B; ++b) {
            for (i64 c = 0; c < D; ++c) {
                for (i64 y = 0; y < H; ++y) {
                    for (i64 x = 0; x < W; ++x) {
                        const T prod = u.at(b, c, y, x) * rd.at(b, c, y, x);
                        out.at(b, 2 * si * D + c, y, x) =
                            prod - diff.at(b, c, y, x) * ru.at(b, c, y, x);
                        out.at(b, (2 * si + 1) * D + c, y, x) = prod * sigmoid_scalar(prod);
                    }
                }
            }
        }
    }
    return out;
}

// The interaction features as one differentiable node.
template <typename T>
VarOf<T> rolling_pre(Tape<T>& t, VarOf<T> u, VarOf<T> v, const std::vector<i64>& shifts) {
    TensorT<T> y = rolling_pre_fused(t.val(u), t.val(v), shifts);
    return t.make(
        std::move(y), {u, v},
        [u, v, shifts](Tape<T>& t, VarOf<T> out) {
            TensorT<T> du, dv;
            rolling_pre_bwd(t.val(u), t.val(v), shifts, t.grad(out), du, dv);
            if (t.needs_grad(u)) accumulate(t.grad(u), du);
            if (t.needs_grad(v)) accumulate(t.grad(v), dv);
        },
        "rolling_pre");
}

// Sparse rolling geometric product: interaction features projected back to D
// channels by a biased 1x1 conv.
template <typename T>
VarOf<T> rolling_product(Tape<T>& t, VarOf<T> u, VarOf<T> v, const RollingConfig& cfg,
                         Conv2dLayer<T>& proj) {
    cfg.validate();
    if (t.val(u).dim(1) != cfg.dim) throw ConfigError("rolling_product: dim mismatch");
    if (proj.w.value.dim(1) != cfg.concat_channels())
        throw ConfigError("rolling_product: projection expects " +
                          std::to_string(cfg.concat_channels()) + " input channels");
    return apply(t, proj, rolling_pre(t, u, v, cfg.shifts));
}

// ---------------------------------------------------------------------------
// gated residual fusion
// ---------------------------------------------------------------------------

template <typename T>
struct FusionParams {
    Conv2dLayer<T> gate;   // 1x1, 2D -> D
    Param<T> layer_scale;  // per-channel, init 1e-5
    double drop_path_rate = 0.0;
};

template <typename T>
FusionParams<T> make_fusion(i64 d, Rng& rng, double drop_rate) {
    FusionParams<T> f;
    f.gate = make_conv<T>(d, 2 * d, 1, rng);
    f.layer_scale = make_layer_scale<T>(d);
    f.drop_path_rate = drop_rate;
    return f;
}

// alpha = sigmoid(Conv1x1([ref, g])); mix = SiLU(ref) + alpha.g;
// out = x_in + DropPath(layer_scale . mix)
template <typename T>
VarOf<T> gated_residual_fuse(Tape<T>& t, VarOf<T> x_in, VarOf<T> x_ref, VarOf<T> g_feat,
                             FusionParams<T>& p, Rng& rng, Mode mode) {
    VarOf<T> alpha = sigmoid(t, apply(t, p.gate, concat_channels(t, {x_ref, g_feat})));
    VarOf<T> mix = add(t, silu(t, x_ref), mul(t, alpha, g_feat));
    VarOf<T> scaled = scale_channels(t, mix, t.param(p.layer_scale));
    return add(t, x_in, drop_path(t, scaled, p.drop_path_rate, rng, mode));
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

template <typename T>
struct CrossBlockParams {
    LayerNormLayer<T> norm_high, norm_low;
    Conv2dLayer<T> state_proj;   // 1x1
    Conv2dLayer<T> context_dw;   // depthwise 3x3, no bias
    BatchNormLayer<T> context_bn;
    Conv2dLayer<T> interact_proj;
    FusionParams<T> fusion;
    RollingConfig rolling;
};

template <typename T>
CrossBlockParams<T> make_cross_block(i64 d, Rng& rng) {
    CrossBlockParams<T> p;
    p.rolling = RollingConfig::from_dim(d);
    p.norm_high = make_ln<T>(d);
    p.norm_low = make_ln<T>(d);
    p.state_proj = make_conv<T>(d, d, 1, rng);
    p.context_dw = make_conv<T>(d, d, 3, rng, 1, 1, static_cast<int>(d), /*bias=*/false);
    p.context_bn = make_bn<T>(d);
    p.interact_proj = make_conv<T>(d, p.rolling.concat_channels(), 1, rng);
    p.fusion = make_fusion<T>(d, rng, /*drop_rate=*/0.0);
    return p;
}

template <typename T>
VarOf<T> cross_block_forward(Tape<T>& t, VarOf<T> x_high, VarOf<T> x_low_up,
                             CrossBlockParams<T>& p, Rng& rng, Mode mode) {
    if (!t.val(x_high).same_shape(t.val(x_low_up)))
        throw ConfigError("cross_block: stream shapes must match");
    VarOf<T> nh = apply(t, p.norm_high, x_high);
    VarOf<T> nl = apply(t, p.norm_low, x_low_up);
    VarOf<T> u = apply(t, p.state_proj, nh);
    VarOf<T> v = silu(t, apply(t, p.context_bn, apply(t, p.context_dw, nl), mode));
    VarOf<T> g = rolling_product(t, u, v, p.rolling, p.interact_proj);
    return gated_residual_fuse(t, x_high, nh, g, p.fusion, rng, mode);
}

template <typename T>
struct SelfBlockParams {
    LayerNormLayer<T> norm;
    Conv2dLayer<T> state_proj;
    Conv2dLayer<T> context_dw1, context_dw2;  // stacked depthwise 3x3 (5x5 receptive field)
    BatchNormLayer<T> context_bn;
    Conv2dLayer<T> interact_proj;
    FusionParams<T> fusion;
    RollingConfig rolling;
};

template <typename T>
SelfBlockParams<T> make_self_block(i64 d, Rng& rng, double drop_rate) {
    SelfBlockParams<T> p;
    p.rolling = RollingConfig::from_dim(d);
    p.norm = make_ln<T>(d);
    p.state_proj = make_conv<T>(d, d, 1, rng);
    p.context_dw1 = make_conv<T>(d, d, 3, rng, 1, 1, static_cast<int>(d), false);
    p.context_dw2 = make_conv<T>(d, d, 3, rng, 1, 1, static_cast<int>(d), false);
    p.context_bn = make_bn<T>(d);
    p.interact_proj = make_conv<T>(d, p.rolling.concat_channels(), 1, rng);
    p.fusion = make_fusion<T>(d, rng, drop_rate);
    return p;
}

template <typename T>
VarOf<T> self_block_forward(Tape<T>& t, VarOf<T> z, SelfBlockParams<T>& p, Rng& rng, Mode mode) {
    VarOf<T> nz = apply(t, p.norm, z);
    VarOf<T> u = apply(t, p.state_proj, nz);
    VarOf<T> local = apply(t, p.context_dw2, apply(t, p.context_dw1, nz));
    VarOf<T> v = silu(t, apply(t, p.context_bn, local, mode));
    VarOf<T> g = rolling_product(t, u, v, p.rolling, p.interact_proj);
    return gated_residual_fuse(t, z, nz, g, p.fusion, rng, mode);
}

// Optional energy gate: a pooled low-resolution descriptor modulates the
// fused feature through the same concat-gate-residual pattern.
template <typename T>
struct EnergyParams {
    LayerNormLayer<T> norm_feat, norm_energy;
    Conv2dLayer<T> energy_proj;  // 1x1
    Conv2dLayer<T> gate;         // 1x1, 2D -> D
    Param<T> layer_scale;
    double drop_path_rate = 0.0;
};

template <typename T>
EnergyParams<T> make_energy(i64 d, Rng& rng, double drop_rate) {
    EnergyParams<T> p;
    p.norm_feat = make_ln<T>(d);
    p.norm_energy = make_ln<T>(d);
    p.energy_proj = make_conv<T>(d, d, 1, rng);
    p.gate = make_conv<T>(d, 2 * d, 1, rng);
    p.layer_scale = make_layer_scale<T>(d);
    p.drop_path_rate = drop_rate;
    return p;
}

template <typename T>
VarOf<T> energy_gffn_forward(Tape<T>& t, VarOf<T> f_fused, VarOf<T> x_low, EnergyParams<T>& p,
                             Rng& rng, Mode mode) {
    if (t.val(f_fused).dim(1) != t.val(x_low).dim(1))
        throw ConfigError("energy_gffn: channel mismatch");
    const i64 H = t.val(f_fused).dim(2), W = t.val(f_fused).dim(3);
    VarOf<T> energy = broadcast_hw(t, global_avg_pool(t, x_low), H, W);
    VarOf<T> nf = apply(t, p.norm_feat, f_fused);
    VarOf<T> ne = apply(t, p.norm_energy, energy);
    VarOf<T> proj = silu(t, apply(t, p.energy_proj, ne));
    VarOf<T> beta = sigmoid(t, apply(t, p.gate, concat_channels(t, {nf, proj})));
    VarOf<T> mix = add(t, silu(t, nf), mul(t, beta, proj));
    VarOf<T> scaled = scale_channels(t, mix, t.param(p.layer_scale));
    return add(t, f_fused, drop_path(t, scaled, p.drop_path_rate, rng, mode));
}

}  // namespace cliffm
