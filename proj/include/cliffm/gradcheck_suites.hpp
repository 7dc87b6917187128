#pragma once

// The f64 central-difference suites behind `gradcheck`: per-op checks,
// per-block checks at tiny sizes, and the whole tiny model.

#include "cliffm/gradcheck.hpp"
#include "cliffm/model.hpp"

namespace cliffm {

namespace gc_detail {

inline TensorD rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(s));
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

template <typename F>
GradCheckReport scalarized(const std::string& name, std::vector<TensorD> inputs, F&& f,
                           u64 seed, double h, double tol) {
    Rng wrng = derive_rng(seed, "gc-reduction");
    return grad_check_op(
        name, std::move(inputs),
        [&](Tape<double>& t, std::vector<Tape<double>::Var>& v) {
            auto y = f(t, v);
            const i64 n = t.val(y).numel();
            if (n == 1) return y;
            Rng local = wrng;  // identical reduction weights on every call
            TensorD w({n});
            for (auto& x : w.v) x = local.uniform(-1.0, 1.0);
            return weighted_sum(t, reshape(t, y, Shape{n}), w);
        },
        h, tol);
}

}  // namespace gc_detail

inline std::vector<GradCheckReport> gradcheck_ops(u64 seed) {
    using gc_detail::rand_t;
    using gc_detail::scalarized;
    using V = Tape<double>::Var;
    std::vector<GradCheckReport> reps;
    Rng rng = derive_rng(seed, "gc-ops");

    reps.push_back(scalarized(
        "conv2d", {rand_t({1, 3, 5, 5}, rng), rand_t({2, 3, 3, 3}, rng), rand_t({2}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            return conv2d(t, v[0], v[1], std::optional<V>(v[2]), ConvSpec{1, 1, 1});
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "conv2d_strided_grouped",
        {rand_t({2, 4, 6, 6}, rng), rand_t({4, 2, 3, 3}, rng), rand_t({4}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            return conv2d(t, v[0], v[1], std::optional<V>(v[2]), ConvSpec{2, 1, 2});
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "conv2d_depthwise", {rand_t({2, 4, 5, 5}, rng), rand_t({4, 1, 3, 3}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            return conv2d(t, v[0], v[1], std::nullopt, ConvSpec{1, 1, 4});
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "batch_norm_train",
        {rand_t({2, 3, 4, 4}, rng), rand_t({3}, rng, 0.5, 1.5), rand_t({3}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            TensorD rm = TensorD::zeros({3}), rv = TensorD::full({3}, 1.0);
            return batch_norm_train(t, v[0], v[1], v[2], rm, rv, 0.1, 1e-5);
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "batch_norm_eval",
        {rand_t({2, 3, 4, 4}, rng), rand_t({3}, rng, 0.5, 1.5), rand_t({3}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            TensorD rm = TensorD::zeros({3}), rv = TensorD::full({3}, 1.0);
            return batch_norm_eval(t, v[0], v[1], v[2], rm, rv, 1e-5);
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "layer_norm",
        {rand_t({2, 5, 3, 3}, rng), rand_t({5}, rng, 0.5, 1.5), rand_t({5}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            return layer_norm_channels(t, v[0], v[1], v[2], 1e-6);
        },
        seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "silu", {rand_t({30}, rng, -3.0, 3.0)},
        [](Tape<double>& t, std::vector<V>& v) { return silu(t, v[0]); }, seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "sigmoid", {rand_t({30}, rng, -3.0, 3.0)},
        [](Tape<double>& t, std::vector<V>& v) { return sigmoid(t, v[0]); }, seed, 1e-5, 1e-6));
    reps.push_back(scalarized(
        "channel_roll", {rand_t({2, 6, 3, 3}, rng)},
        [](Tape<double>& t, std::vector<V>& v) { return channel_roll(t, v[0], 2); }, seed, 1e-5,
        1e-6));
    reps.push_back(scalarized(
        "bilinear_resize", {rand_t({1, 2, 4, 5}, rng)},
        [](Tape<double>& t, std::vector<V>& v) { return bilinear_resize(t, v[0], 7, 6); }, seed,
        1e-5, 1e-6));
    reps.push_back(scalarized(
        "avg_pool", {rand_t({2, 2, 4, 4}, rng)},
        [](Tape<double>& t, std::vector<V>& v) { return avg_pool(t, v[0], 2); }, seed, 1e-5,
        1e-8));
    reps.push_back(scalarized(
        "adaptive_avg_pool", {rand_t({1, 2, 7, 7}, rng)},
        [](Tape<double>& t, std::vector<V>& v) { return adaptive_avg_pool(t, v[0], 3, 3); },
        seed, 1e-5, 1e-8));
    reps.push_back(scalarized(
        "global_avg_pool", {rand_t({2, 3, 4, 4}, rng)},
        [](Tape<double>& t, std::vector<V>& v) { return global_avg_pool(t, v[0]); }, seed, 1e-5,
        1e-8));
    reps.push_back(scalarized(
        "linear", {rand_t({3, 4}, rng), rand_t({2, 4}, rng), rand_t({2}, rng)},
        [](Tape<double>& t, std::vector<V>& v) {
            return linear(t, v[0], v[1], std::optional<V>(v[2]));
        },
        seed, 1e-5, 1e-8));
    reps.push_back(scalarized(
        "drop_path_masked", {rand_t({4, 2, 3, 3}, rng)},
        [seed](Tape<double>& t, std::vector<V>& v) {
            Rng r = derive_rng(seed, "gc-drop");  // same mask on every evaluation
            return drop_path(t, v[0], 0.4, r, Mode::Train);
        },
        seed, 1e-5, 1e-8));
    reps.push_back(scalarized(
        "dropout_masked", {rand_t({5, 6}, rng)},
        [seed](Tape<double>& t, std::vector<V>& v) {
            Rng r = derive_rng(seed, "gc-dropout");
            return dropout(t, v[0], 0.3, r, Mode::Train);
        },
        seed, 1e-5, 1e-8));
    {
        TensorD targets({3, 4});
        TensorD w({4});
        Rng lr = derive_rng(seed, "gc-bce");
        for (auto& v : targets.v) v = lr.below(2) ? 0.95 : 0.05;
        for (auto& v : w.v) v = lr.uniform(1.0, 5.0);
        reps.push_back(scalarized(
            "weighted_bce", {rand_t({3, 4}, rng, -4.0, 4.0)},
            [targets, w](Tape<double>& t, std::vector<V>& v) {
                return weighted_bce(t, v[0], targets, w);
            },
            seed, 1e-5, 1e-6));
    }
    reps.push_back(scalarized(
        "silu_chain", {rand_t({20}, rng, -2.0, 2.0)},
        [](Tape<double>& t, std::vector<V>& v) { return silu(t, silu(t, v[0])); }, seed, 1e-5,
        1e-6));
    return reps;
}

inline std::vector<GradCheckReport> gradcheck_blocks(u64 seed) {
    using gc_detail::rand_t;
    using gc_detail::scalarized;
    using V = Tape<double>::Var;
    std::vector<GradCheckReport> reps;
    Rng rng = derive_rng(seed, "gc-blocks");
    const i64 D = 8;

    {
        Rng init = derive_rng(seed, "gc-blocks-rolling");
        auto proj = make_conv<double>(D, 2 * 3 * D, 1, init);
        auto cfg = RollingConfig::from_dim(D);
        reps.push_back(scalarized(
            "rolling_product", {rand_t({1, D, 4, 4}, rng), rand_t({1, D, 4, 4}, rng)},
            [&](Tape<double>& t, std::vector<V>& v) {
                return rolling_product(t, v[0], v[1], cfg, proj);
            },
            seed, 1e-5, 1e-5));
    }
    {
        Rng init = derive_rng(seed, "gc-blocks-fusion");
        auto fusion = make_fusion<double>(D, init, 0.0);
        for (auto& x : fusion.layer_scale.value.v) x = 0.3;  // visible at FD scale
        reps.push_back(scalarized(
            "gated_residual_fuse",
            {rand_t({1, D, 4, 4}, rng), rand_t({1, D, 4, 4}, rng), rand_t({1, D, 4, 4}, rng)},
            [&](Tape<double>& t, std::vector<V>& v) {
                Rng r;
                return gated_residual_fuse(t, v[0], v[1], v[2], fusion, r, Mode::Eval);
            },
            seed, 1e-5, 1e-5));
    }
    {
        Rng init = derive_rng(seed, "gc-blocks-cross");
        auto blk = make_cross_block<double>(D, init);
        // layer scales at the 1e-5 init bury block gradients below FD noise
        for (auto& x : blk.fusion.layer_scale.value.v) x = 0.3;
        reps.push_back(scalarized(
            "cross_block", {rand_t({1, D, 4, 4}, rng), rand_t({1, D, 4, 4}, rng)},
            [&](Tape<double>& t, std::vector<V>& v) {
                Rng r;
                return cross_block_forward(t, v[0], v[1], blk, r, Mode::Train);
            },
            seed, 1e-5, 1e-4));
    }
    {
        Rng init = derive_rng(seed, "gc-blocks-self");
        auto blk = make_self_block<double>(D, init, 0.0);
        for (auto& x : blk.fusion.layer_scale.value.v) x = 0.3;
        reps.push_back(scalarized(
            "self_block", {rand_t({1, D, 4, 4}, rng)},
            [&](Tape<double>& t, std::vector<V>& v) {
                Rng r;
                return self_block_forward(t, v[0], blk, r, Mode::Train);
            },
            seed, 1e-5, 1e-4));
    }
    {
        Rng init = derive_rng(seed, "gc-blocks-energy");
        auto blk = make_energy<double>(D, init, 0.0);
        for (auto& x : blk.layer_scale.value.v) x = 0.3;
        reps.push_back(scalarized(
            "energy_gffn", {rand_t({1, D, 4, 4}, rng), rand_t({1, D, 2, 2}, rng)},
            [&](Tape<double>& t, std::vector<V>& v) {
                Rng r;
                return energy_gffn_forward(t, v[0], v[1], blk, r, Mode::Train);
            },
            seed, 1e-5, 1e-5));
    }
    return reps;
}

// Whole tiny model (D=8, input 32, N=2): every parameter plus the input
// image, against central differences.
inline GradCheckReport gradcheck_model(u64 seed) {
    ModelConfig cfg;
    cfg.input_size = 32;
    cfg.dim = 8;
    cfg.stem_width = 16;
    cfg.num_self_blocks = 2;
    cfg.use_energy = true;
    cfg.drop_path_max = 0.0;  // deterministic forward for FD
    cfg.head_dropout = 0.0;
    cfg.high_grid = 8;
    cfg.low_grid = 4;
    CliffordM<double> model = build_model<double>(cfg, seed);
    // Layer scales at 1e-5 make block gradients invisible to FD; lift them.
    for_each_param(model, [&](const std::string& name, Param<double>& p) {
        if (name.find("layer_scale") != std::string::npos)
            for (auto& v : p.value.v) v = 0.2;
    });

    Rng rng = derive_rng(seed, "gc-model-input");
    TensorD image = gc_detail::rand_t({1, 3, 32, 32}, rng);
    TensorD reduction({static_cast<i64>(cfg.num_classes)});
    for (auto& v : reduction.v) v = rng.uniform(-1.0, 1.0);

    GradCheckProblem prob;
    prob.inputs.push_back(&image);
    std::vector<Param<double>*> params;
    for_each_param(model, [&](const std::string&, Param<double>& p) {
        params.push_back(&p);
        prob.inputs.push_back(&p.value);
    });
    const auto reset_bn = [&] {
        for_each_bn(model, [](const std::string&, BatchNormLayer<double>& bn) {
            std::fill(bn.running_mean.v.begin(), bn.running_mean.v.end(), 0.0);
            std::fill(bn.running_var.v.begin(), bn.running_var.v.end(), 1.0);
        });
    };
    prob.eval = [&]() {
        reset_bn();
        Tape<double> t(false);
        Rng r;  // drop rates are zero; never consumed
        auto logits = model_forward(t, t.constant(image), model, Mode::Train, r);
        double acc = 0.0;
        for (i64 j = 0; j < reduction.numel(); ++j) acc += reduction[j] * t.val(logits)[j];
        return acc;
    };
    prob.analytic = [&]() {
        reset_bn();
        for (auto* p : params) {
            p->ensure_grad();
            p->zero_grad();
        }
        Tape<double> t(true);
        Rng r;
        auto img_var = t.input(image, true);
        auto logits = model_forward(t, img_var, model, Mode::Train, r);
        TensorD seed_grad({1, static_cast<i64>(cfg.num_classes)});
        for (i64 j = 0; j < reduction.numel(); ++j) seed_grad[j] = reduction[j];
        t.backward(logits, seed_grad);
        std::vector<TensorD> grads;
        grads.push_back(t.grad(img_var));
        for (auto* p : params) grads.push_back(p->grad);
        return grads;
    };
    return grad_check("tiny_model", prob, 1e-5, 1e-4);
}

}  // namespace cliffm
