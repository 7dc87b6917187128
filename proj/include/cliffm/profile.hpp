#pragma once

// Analytic per-component parameter and FLOP accounting.
//
// Conventions (documented here once, used everywhere):
//   conv/linear     2 FLOPs per MAC, + one add per output element when biased
//   batch norm      2 FLOPs per element (eval-mode affine)
//   layer norm      7 FLOPs per element
//   SiLU            4 FLOPs per element; sigmoid 3
//   add/sub/mul     1 FLOP per element
//   pooling         1 FLOP per input element + 1 per output element
//   bilinear        11 FLOPs per output element
//   rolling product 3*|S|*D*H*W multiplies + |S|*D*H*W + D*H*W adds
//                   + SiLU on |S|*D*H*W elements, pre-projection
// FLOPs are per image (batch 1), eval mode.

#include <map>

#include "cliffm/model.hpp"

namespace cliffm {

struct ProfileItem {
    std::string component;
    i64 params = 0;
    i64 flops = 0;
};

struct Profile {
    std::vector<ProfileItem> items;
    i64 total_params = 0;
    i64 total_flops = 0;
    i64 interaction_multiplies = 0;  // pre-projection, per image

    const ProfileItem& item(const std::string& name) const {
        for (const auto& it : items)
            if (it.component == name) return it;
        throw ConfigError("profile: no component " + name);
    }
};

namespace profile_detail {

inline i64 conv_flops(i64 out_hw, i64 cout, i64 cin_g, i64 k, bool bias) {
    return 2 * out_hw * cout * cin_g * k * k + (bias ? out_hw * cout : 0);
}

struct Acc {
    i64 flops = 0;
    void conv(i64 out_hw, i64 cout, i64 cin_g, i64 k, bool bias) {
        flops += conv_flops(out_hw, cout, cin_g, k, bias);
    }
    void bn(i64 n) { flops += 2 * n; }
    void ln(i64 n) { flops += 7 * n; }
    void silu(i64 n) { flops += 4 * n; }
    void sigmoid_act(i64 n) { flops += 3 * n; }
    void ew(i64 n) { flops += n; }  // add/sub/mul
    void pool(i64 in, i64 out) { flops += in + out; }
    void bilinear(i64 out) { flops += 11 * out; }
    void linear(i64 o, i64 f) { flops += 2 * o * f + o; }
};

}  // namespace profile_detail

// Exact closed form for the stem 7x7 stride-4 convolution at a given input.
inline i64 stem_conv_flops(const ModelConfig& cfg, int input_size) {
    const i64 g = input_size / 4;
    return profile_detail::conv_flops(g * g, cfg.stem_width, 3, 7, /*bias=*/false);
}

inline Profile profile_model(const ModelConfig& cfg, int input_size) {
    cfg.validate();
    using profile_detail::Acc;
    const i64 D = cfg.dim, SW = cfg.stem_width;
    const i64 G = input_size / 4;           // stem grid
    const i64 P = cfg.high_grid * cfg.high_grid;
    const i64 PL = cfg.low_grid * cfg.low_grid;
    const i64 ns = static_cast<i64>(shift_set(D).size());

    // Parameters come straight from an actual build, aggregated by prefix.
    CliffordM<float> m = build_model<float>(cfg, /*seed=*/0);
    std::map<std::string, i64> params{{"stem", 0},   {"align", 0},  {"cross_block", 0},
                                      {"self_blocks", 0}, {"energy", 0}, {"head", 0}};
    for_each_param(m, [&](const std::string& name, Param<float>& p) {
        std::string key;
        if (name.rfind("stem.", 0) == 0) key = "stem";
        else if (name.rfind("align.", 0) == 0) key = "align";
        else if (name.rfind("cross.", 0) == 0) key = "cross_block";
        else if (name.rfind("self.", 0) == 0) key = "self_blocks";
        else if (name.rfind("energy.", 0) == 0) key = "energy";
        else key = "head";
        params[key] += p.value.numel();
    });

    Profile prof;
    const auto finish = [&](const std::string& name, const Acc& a) {
        prof.items.push_back({name, params.at(name), a.flops});
    };

    {  // stem
        Acc a;
        a.conv(G * G, SW, 3, 7, false);
        a.bn(SW * G * G);
        a.silu(SW * G * G);
        for (int stream = 0; stream < 2; ++stream) {
            a.conv(G * G, D, SW, 1, true);  // projection
            a.bn(D * G * G);
            a.silu(D * G * G);
            a.conv(G * G, D, 1, 3, false);  // depthwise refiner
            a.bn(D * G * G);
            a.silu(D * G * G);
            a.conv(G * G, D, D, 1, true);   // pointwise refiner
            a.bn(D * G * G);
            a.silu(D * G * G);
            a.ew(D * G * G);  // residual add
        }
        a.pool(D * G * G, D * P);
        a.pool(D * G * G, D * PL);
        finish("stem", a);
    }
    {  // low -> high alignment
        Acc a;
        a.conv(PL, D, D, 1, true);
        a.bn(D * PL);
        a.bilinear(D * P);
        finish("align", a);
    }
    const auto interaction = [&](Acc& a) {
        a.ew(D * P);                    // differential context
        prof.interaction_multiplies += 3 * ns * D * P;
        a.flops += 3 * ns * D * P;      // elementwise products as written
        a.ew(ns * D * P);               // wedge subtraction
        a.silu(ns * D * P);             // inner nonlinearity
        a.conv(P, D, 2 * ns * D, 1, true);  // projection back to D
    };
    const auto fusion = [&](Acc& a) {
        a.conv(P, D, 2 * D, 1, true);  // gate
        a.sigmoid_act(D * P);
        a.silu(D * P);   // SiLU(ref)
        a.ew(D * P);     // alpha * g
        a.ew(D * P);     // mix add
        a.ew(D * P);     // layer scale
        a.ew(D * P);     // residual add
    };
    {  // cross block
        Acc a;
        a.ln(2 * D * P);
        a.conv(P, D, D, 1, true);   // state branch
        a.conv(P, D, 1, 3, false);  // context depthwise
        a.bn(D * P);
        a.silu(D * P);
        interaction(a);
        fusion(a);
        finish("cross_block", a);
    }
    {  // self blocks
        Acc a;
        for (int i = 0; i < cfg.num_self_blocks; ++i) {
            a.ln(D * P);
            a.conv(P, D, D, 1, true);
            a.conv(P, D, 1, 3, false);
            a.conv(P, D, 1, 3, false);
            a.bn(D * P);
            a.silu(D * P);
            interaction(a);
            fusion(a);
        }
        finish("self_blocks", a);
    }
    {  // energy gate
        Acc a;
        if (cfg.use_energy) {
            a.pool(D * PL, D);
            a.ln(2 * D * P);
            a.conv(P, D, D, 1, true);
            a.silu(D * P);
            a.conv(P, D, 2 * D, 1, true);
            a.sigmoid_act(D * P);
            a.silu(D * P);
            a.ew(4 * D * P);
        }
        finish("energy", a);
    }
    {  // head
        Acc a;
        a.pool(D * P, D);
        a.ln(D);
        a.linear(cfg.num_classes, D);
        finish("head", a);
    }

    for (const auto& it : prof.items) {
        prof.total_params += it.params;
        prof.total_flops += it.flops;
    }
    return prof;
}

inline Profile count_params(const ModelConfig& cfg) { return profile_model(cfg, cfg.input_size); }
inline Profile count_flops(const ModelConfig& cfg, int input_size) {
    return profile_model(cfg, input_size);
}

}  // namespace cliffm
