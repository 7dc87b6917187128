#pragma once

// Full dual-resolution backbone: stem, cross-scale fusion, self-refinement
// stack, optional energy gate, classification head.

#include <optional>
#include <string>

#include "cliffm/blocks.hpp"

namespace cliffm {

struct ModelConfig {
    int input_size = 448;
    i64 dim = 96;
    i64 stem_width = 192;
    int num_self_blocks = 6;
    bool use_energy = true;
    double drop_path_max = 0.2;
    double head_dropout = 0.1;
    int num_classes = 8;
    i64 high_grid = 28;
    i64 low_grid = 14;

    i64 stem_grid() const { return input_size / 4; }

    void validate() const {
        if (input_size < 16 || input_size % 16 != 0)
            throw ConfigError("ModelConfig: input_size must be a positive multiple of 16");
        if (dim < 8 || dim % 4 != 0)
            throw ConfigError("ModelConfig: dim must be >= 8 and divisible by 4");
        if (stem_width < 1) throw ConfigError("ModelConfig: stem_width must be positive");
        if (num_self_blocks < 1) throw ConfigError("ModelConfig: at least one self block");
        if (high_grid < low_grid || low_grid < 1)
            throw ConfigError("ModelConfig: grids must satisfy high >= low >= 1");
        if (stem_grid() < high_grid)
            throw ConfigError("ModelConfig: stem grid smaller than the high-resolution grid");
        if (num_classes < 1) throw ConfigError("ModelConfig: num_classes must be positive");
        if (drop_path_max < 0.0 || drop_path_max >= 1.0 || head_dropout < 0.0 ||
            head_dropout >= 1.0)
            throw ConfigError("ModelConfig: rates must be in [0, 1)");
    }

    // Stochastic depth ramps linearly from 0 to drop_path_max across the
    // self-block stack, endpoints inclusive.
    double self_block_drop_rate(int i) const {
        if (num_self_blocks == 1) return 0.0;
        return drop_path_max * static_cast<double>(i) /
               static_cast<double>(num_self_blocks - 1);
    }
};

template <typename T>
struct StemParams {
    Conv2dLayer<T> conv;  // 7x7 stride 4 pad 3, bias-free (feeds BN)
    BatchNormLayer<T> bn;
    Conv2dLayer<T> proj_high, proj_low;
    BatchNormLayer<T> proj_high_bn, proj_low_bn;
    Conv2dLayer<T> high_dw, low_dw;
    BatchNormLayer<T> high_dw_bn, low_dw_bn;
    Conv2dLayer<T> high_pw, low_pw;
    BatchNormLayer<T> high_pw_bn, low_pw_bn;
};

template <typename T>
struct CliffordM {
    ModelConfig cfg;
    StemParams<T> stem;
    Conv2dLayer<T> align_conv;
    BatchNormLayer<T> align_bn;
    CrossBlockParams<T> cross;
    std::vector<SelfBlockParams<T>> self_blocks;
    std::optional<EnergyParams<T>> energy;
    LayerNormLayer<T> head_norm;
    LinearLayer<T> head_fc;
};

// Deterministic given the seed: same seed, bit-identical parameters.
template <typename T>
CliffordM<T> build_model(const ModelConfig& cfg, u64 seed) {
    cfg.validate();
    Rng rng = derive_rng(seed, "model-init");
    CliffordM<T> m;
    m.cfg = cfg;
    const i64 d = cfg.dim, sw = cfg.stem_width;

    m.stem.conv = make_conv<T>(sw, 3, 7, rng, /*stride=*/4, /*pad=*/3, 1, /*bias=*/false);
    m.stem.bn = make_bn<T>(sw);
    m.stem.proj_high = make_conv<T>(d, sw, 1, rng);
    m.stem.proj_high_bn = make_bn<T>(d);
    m.stem.proj_low = make_conv<T>(d, sw, 1, rng);
    m.stem.proj_low_bn = make_bn<T>(d);
    m.stem.high_dw = make_conv<T>(d, d, 3, rng, 1, 1, static_cast<int>(d), false);
    m.stem.high_dw_bn = make_bn<T>(d);
    m.stem.high_pw = make_conv<T>(d, d, 1, rng);
    m.stem.high_pw_bn = make_bn<T>(d);
    m.stem.low_dw = make_conv<T>(d, d, 3, rng, 1, 1, static_cast<int>(d), false);
    m.stem.low_dw_bn = make_bn<T>(d);
    m.stem.low_pw = make_conv<T>(d, d, 1, rng);
    m.stem.low_pw_bn = make_bn<T>(d);

    m.align_conv = make_conv<T>(d, d, 1, rng);
    m.align_bn = make_bn<T>(d);

    m.cross = make_cross_block<T>(d, rng);
    for (int i = 0; i < cfg.num_self_blocks; ++i)
        m.self_blocks.push_back(make_self_block<T>(d, rng, cfg.self_block_drop_rate(i)));
    if (cfg.use_energy) m.energy = make_energy<T>(d, rng, cfg.drop_path_max);

    m.head_norm = make_ln<T>(d);
    m.head_fc = make_linear<T>(static_cast<i64>(cfg.num_classes), d, rng);
    return m;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

template <typename T>
struct StemStreams {
    VarOf<T> high;  // B x D x high_grid x high_grid
    VarOf<T> low;   // B x D x low_grid x low_grid
};

template <typename T>
StemStreams<T> stem_forward(Tape<T>& t, VarOf<T> image, CliffordM<T>& m, Mode mode) {
    const ModelConfig& cfg = m.cfg;
    if (t.val(image).rank() != 4 || t.val(image).dim(1) != 3 ||
        t.val(image).dim(2) != cfg.input_size || t.val(image).dim(3) != cfg.input_size)
        throw ConfigError("stem_forward: expected Bx3x" + std::to_string(cfg.input_size) + "x" +
                          std::to_string(cfg.input_size) + " input");
    StemParams<T>& s = m.stem;
    VarOf<T> f = silu(t, apply(t, s.bn, apply(t, s.conv, image), mode));

    VarOf<T> xh = silu(t, apply(t, s.proj_high_bn, apply(t, s.proj_high, f), mode));
    VarOf<T> xl = silu(t, apply(t, s.proj_low_bn, apply(t, s.proj_low, f), mode));

    VarOf<T> hh = silu(t, apply(t, s.high_dw_bn, apply(t, s.high_dw, xh), mode));
    hh = silu(t, apply(t, s.high_pw_bn, apply(t, s.high_pw, hh), mode));
    xh = add(t, xh, hh);

    VarOf<T> ll = silu(t, apply(t, s.low_dw_bn, apply(t, s.low_dw, xl), mode));
    ll = silu(t, apply(t, s.low_pw_bn, apply(t, s.low_pw, ll), mode));
    xl = add(t, xl, ll);

    // Exact-factor pooling whenever the grid divides evenly; boundary
    // partition averaging otherwise (512 -> 28 and similar).
    StemStreams<T> out;
    out.high = adaptive_avg_pool(t, xh, cfg.high_grid, cfg.high_grid);
    out.low = adaptive_avg_pool(t, xl, cfg.low_grid, cfg.low_grid);
    return out;
}

template <typename T>
VarOf<T> low_to_high_align(Tape<T>& t, VarOf<T> x_low, CliffordM<T>& m, Mode mode) {
    VarOf<T> y = apply(t, m.align_bn, apply(t, m.align_conv, x_low), mode);
    return bilinear_resize(t, y, m.cfg.high_grid, m.cfg.high_grid);
}

template <typename T>
VarOf<T> model_forward(Tape<T>& t, VarOf<T> image, CliffordM<T>& m, Mode mode, Rng& rng) {
    StemStreams<T> streams = stem_forward(t, image, m, mode);
    VarOf<T> low_up = low_to_high_align(t, streams.low, m, mode);
    VarOf<T> z = cross_block_forward(t, streams.high, low_up, m.cross, rng, mode);
    for (auto& blk : m.self_blocks) z = self_block_forward(t, z, blk, rng, mode);
    if (m.energy) z = energy_gffn_forward(t, z, streams.low, *m.energy, rng, mode);

    VarOf<T> pooled = global_avg_pool(t, z);
    VarOf<T> h = apply(t, m.head_norm, pooled);
    h = reshape(t, h, Shape{t.val(h).dim(0), m.cfg.dim});
    h = dropout(t, h, m.cfg.head_dropout, rng, mode);
    return apply(t, m.head_fc, h);  // raw logits, no sigmoid
}

// Convenience: eval-mode forward on plain tensors, no graph kept.
template <typename T>
TensorT<T> forward_eval(CliffordM<T>& m, const TensorT<T>& image) {
    Tape<T> tape(false);
    Rng rng;  // never consumed in eval mode
    auto out = model_forward(tape, tape.constant(image), m, Mode::Eval, rng);
    return tape.val(out);
}

// ---------------------------------------------------------------------------
// parameter traversal (fixed order; names are stable checkpoint keys)
// ---------------------------------------------------------------------------

template <typename T, typename F>
void visit_conv(const std::string& prefix, Conv2dLayer<T>& l, F&& f) {
    f(prefix + ".w", l.w);
    if (l.b) f(prefix + ".b", *l.b);
}

template <typename T, typename F>
void visit_bn(const std::string& prefix, BatchNormLayer<T>& l, F&& f) {
    f(prefix + ".gamma", l.gamma);
    f(prefix + ".beta", l.beta);
}

template <typename T, typename F>
void visit_ln(const std::string& prefix, LayerNormLayer<T>& l, F&& f) {
    f(prefix + ".gamma", l.gamma);
    f(prefix + ".beta", l.beta);
}

template <typename T, typename F>
void visit_fusion(const std::string& prefix, FusionParams<T>& p, F&& f) {
    visit_conv(prefix + ".gate", p.gate, f);
    f(prefix + ".layer_scale", p.layer_scale);
}

template <typename T, typename F>
void for_each_param(CliffordM<T>& m, F&& f) {
    StemParams<T>& s = m.stem;
    visit_conv("stem.conv", s.conv, f);
    visit_bn("stem.bn", s.bn, f);
    visit_conv("stem.proj_high", s.proj_high, f);
    visit_bn("stem.proj_high_bn", s.proj_high_bn, f);
    visit_conv("stem.proj_low", s.proj_low, f);
    visit_bn("stem.proj_low_bn", s.proj_low_bn, f);
    visit_conv("stem.high_dw", s.high_dw, f);
    visit_bn("stem.high_dw_bn", s.high_dw_bn, f);
    visit_conv("stem.high_pw", s.high_pw, f);
    visit_bn("stem.high_pw_bn", s.high_pw_bn, f);
    visit_conv("stem.low_dw", s.low_dw, f);
    visit_bn("stem.low_dw_bn", s.low_dw_bn, f);
    visit_conv("stem.low_pw", s.low_pw, f);
    visit_bn("stem.low_pw_bn", s.low_pw_bn, f);

    visit_conv("align.conv", m.align_conv, f);
    visit_bn("align.bn", m.align_bn, f);

    visit_ln("cross.norm_high", m.cross.norm_high, f);
    visit_ln("cross.norm_low", m.cross.norm_low, f);
    visit_conv("cross.state_proj", m.cross.state_proj, f);
    visit_conv("cross.context_dw", m.cross.context_dw, f);
    visit_bn("cross.context_bn", m.cross.context_bn, f);
    visit_conv("cross.interact_proj", m.cross.interact_proj, f);
    visit_fusion("cross.fusion", m.cross.fusion, f);

    for (size_t i = 0; i < m.self_blocks.size(); ++i) {
        const std::string p = "self." + std::to_string(i);
        SelfBlockParams<T>& b = m.self_blocks[i];
        visit_ln(p + ".norm", b.norm, f);
        visit_conv(p + ".state_proj", b.state_proj, f);
        visit_conv(p + ".context_dw1", b.context_dw1, f);
        visit_conv(p + ".context_dw2", b.context_dw2, f);
        visit_bn(p + ".context_bn", b.context_bn, f);
        visit_conv(p + ".interact_proj", b.interact_proj, f);
        visit_fusion(p + ".fusion", b.fusion, f);
    }

    if (m.energy) {
        visit_ln("energy.norm_feat", m.energy->norm_feat, f);
        visit_ln("energy.norm_energy", m.energy->norm_energy, f);
        visit_conv("energy.energy_proj", m.energy->energy_proj, f);
        visit_conv("energy.gate", m.energy->gate, f);
        f("energy.layer_scale", m.energy->layer_scale);
    }

    visit_ln("head.norm", m.head_norm, f);
    f("head.fc.w", m.head_fc.w);
    f("head.fc.b", m.head_fc.b);
}

template <typename T, typename F>
void for_each_bn(CliffordM<T>& m, F&& f) {
    StemParams<T>& s = m.stem;
    f("stem.bn", s.bn);
    f("stem.proj_high_bn", s.proj_high_bn);
    f("stem.proj_low_bn", s.proj_low_bn);
    f("stem.high_dw_bn", s.high_dw_bn);
    f("stem.high_pw_bn", s.high_pw_bn);
    f("stem.low_dw_bn", s.low_dw_bn);
    f("stem.low_pw_bn", s.low_pw_bn);
    f("align.bn", m.align_bn);
    f("cross.context_bn", m.cross.context_bn);
    for (size_t i = 0; i < m.self_blocks.size(); ++i)
        f("self." + std::to_string(i) + ".context_bn", m.self_blocks[i].context_bn);
}

// Running-stat buffers (saved in checkpoints, excluded from parameter counts).
template <typename T, typename F>
void for_each_buffer(CliffordM<T>& m, F&& f) {
    for_each_bn(m, [&](const std::string& name, BatchNormLayer<T>& bn) {
        f(name + ".running_mean", bn.running_mean);
        f(name + ".running_var", bn.running_var);
    });
}

template <typename T>
i64 total_param_count(CliffordM<T>& m) {
    i64 n = 0;
    for_each_param(m, [&](const std::string&, Param<T>& p) { n += p.value.numel(); });
    return n;
}

// Zero every layer scale; all interaction blocks then become identities and
// the logits depend only on the stem pipeline and head.
template <typename T>
void zero_layer_scales(CliffordM<T>& m) {
    for_each_param(m, [&](const std::string& name, Param<T>& p) {
        if (name.size() >= 11 && name.substr(name.size() - 11) == "layer_scale")
            std::fill(p.value.v.begin(), p.value.v.end(), T(0));
    });
}

}  // namespace cliffm
