#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "cliffm/checkpoint.hpp"
#include "cliffm/profile.hpp"

using namespace cliffm;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_size = 32;
    cfg.dim = 8;
    cfg.stem_width = 16;
    cfg.num_self_blocks = 2;
    cfg.high_grid = 8;
    cfg.low_grid = 4;
    return cfg;
}

Tensor random_image(int size, u64 seed, i64 batch = 1) {
    Rng rng(seed);
    Tensor img({batch, 3, size, size});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return img;
}

}  // namespace

TEST_CASE("build_model is deterministic given the seed") {
    ModelConfig cfg = tiny_config();
    auto a = build_model<float>(cfg, 1234);
    auto b = build_model<float>(cfg, 1234);
    auto c = build_model<float>(cfg, 1235);
    bool identical = true, differs = false;
    std::vector<Param<float>*> pa, pb, pc;
    for_each_param(a, [&](const std::string&, Param<float>& p) { pa.push_back(&p); });
    for_each_param(b, [&](const std::string&, Param<float>& p) { pb.push_back(&p); });
    for_each_param(c, [&](const std::string&, Param<float>& p) { pc.push_back(&p); });
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->value.v != pb[i]->value.v) identical = false;
        if (pa[i]->value.v != pc[i]->value.v) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("layer scales initialize to exactly 1e-5") {
    auto m = build_model<float>(tiny_config(), 7);
    int found = 0;
    for_each_param(m, [&](const std::string& name, Param<float>& p) {
        if (name.find("layer_scale") != std::string::npos) {
            found++;
            for (float v : p.value.v) CHECK(v == 1e-5f);
        }
    });
    CHECK(found == 4);  // cross + 2 self + energy
}

TEST_CASE("default parameter budget") {
    ModelConfig cfg;  // defaults: 448, D=96, N=6, energy on
    Profile p = count_params(cfg);
    CHECK(p.total_params >= 839115);  // 851900 * 0.985
    CHECK(p.total_params <= 864678);  // 851900 * 1.015

    ModelConfig noe = cfg;
    noe.use_energy = false;
    Profile q = count_params(noe);
    CHECK(q.total_params >= 803600);  // 820000 * 0.98
    CHECK(q.total_params <= 836400);  // 820000 * 1.02

    // energy component delta is self-consistent to the scalar
    CHECK(p.total_params - q.total_params == p.item("energy").params);

    // component totals sum to the total
    i64 sum = 0;
    for (const auto& it : p.items) sum += it.params;
    CHECK(sum == p.total_params);
}

TEST_CASE("profile matches the enumerated parameter tree exactly") {
    for (bool energy : {true, false}) {
        ModelConfig cfg = tiny_config();
        cfg.use_energy = energy;
        auto m = build_model<float>(cfg, 3);
        CHECK(count_params(cfg).total_params == total_param_count(m));
    }
    ModelConfig full;
    auto m = build_model<float>(full, 3);
    CHECK(count_params(full).total_params == total_param_count(m));
}

TEST_CASE("parameter count invariant to seed") {
    ModelConfig cfg = tiny_config();
    auto a = build_model<float>(cfg, 1);
    auto b = build_model<float>(cfg, 99);
    CHECK(total_param_count(a) == total_param_count(b));
}

TEST_CASE("stem produces the fixed dual-resolution grids") {
    for (int input : {448, 224}) {
        ModelConfig cfg;
        cfg.input_size = input;
        auto m = build_model<float>(cfg, 5);
        Tape<float> t(false);
        auto streams = stem_forward(t, t.constant(random_image(input, 42, 2)), m, Mode::Eval);
        CHECK(t.val(streams.high).shape == Shape{2, 96, 28, 28});
        CHECK(t.val(streams.low).shape == Shape{2, 96, 14, 14});
    }
}

TEST_CASE("constant image yields spatially constant streams away from borders") {
    // Zero padding makes the outermost cells see the image edge; every
    // interior cell of a constant image is identical.
    ModelConfig cfg = tiny_config();
    auto m = build_model<float>(cfg, 11);
    Tensor img = Tensor::full({1, 3, 32, 32}, 0.25f);
    Tape<float> t(false);
    auto streams = stem_forward(t, t.constant(img), m, Mode::Eval);
    const Tensor& high = t.val(streams.high);
    const Tensor& low = t.val(streams.low);
    for (i64 c = 0; c < cfg.dim; ++c) {
        const float v0 = high.at(0, c, 2, 2);
        for (i64 y = 2; y <= 5; ++y)
            for (i64 x = 2; x <= 5; ++x)
                CHECK(high.at(0, c, y, x) == doctest::Approx(v0).epsilon(1e-5));
        const float l0 = low.at(0, c, 1, 1);
        for (i64 y = 1; y <= 2; ++y)
            for (i64 x = 1; x <= 2; ++x)
                CHECK(low.at(0, c, y, x) == doctest::Approx(l0).epsilon(1e-5));
    }
}

TEST_CASE("alignment path outputs the high grid, constant preserved") {
    ModelConfig cfg = tiny_config();
    auto m = build_model<float>(cfg, 13);
    Tensor low = Tensor::full({2, 8, 4, 4}, 1.5f);
    Tape<float> t(false);
    auto up = low_to_high_align(t, t.constant(low), m, Mode::Eval);
    CHECK(t.val(up).shape == Shape{2, 8, 8, 8});
    for (i64 c = 0; c < 8; ++c) {
        const float v0 = t.val(up).at(0, c, 0, 0);
        for (i64 p = 1; p < 64; ++p)
            CHECK(t.val(up).at(0, c, p / 8, p % 8) == doctest::Approx(v0).epsilon(1e-6));
    }
}

TEST_CASE("model forward: logits shape and eval determinism without RNG use") {
    ModelConfig cfg = tiny_config();
    auto m = build_model<float>(cfg, 17);
    Tensor img = random_image(32, 3, 3);
    Tensor a = forward_eval(m, img);
    Tensor b = forward_eval(m, img);
    CHECK(a.shape == Shape{3, 8});
    CHECK(a.v == b.v);

    // eval mode consumes no randomness: a shared stream stays untouched
    Rng rng(5);
    const u32 before = [&] {
        Rng probe = rng;
        return probe.next_u32();
    }();
    Tape<float> t(false);
    model_forward(t, t.constant(img), m, Mode::Eval, rng);
    CHECK(rng.next_u32() == before);
}

TEST_CASE("zero layer scales make logits invariant to block parameters") {
    ModelConfig cfg = tiny_config();
    auto m1 = build_model<float>(cfg, 19);
    auto m2 = build_model<float>(cfg, 20);  // different block weights
    // Align everything outside the blocks so only block internals differ.
    std::vector<std::pair<std::string, Param<float>*>> p1, p2;
    for_each_param(m1, [&](const std::string& n, Param<float>& p) { p1.push_back({n, &p}); });
    for_each_param(m2, [&](const std::string& n, Param<float>& p) { p2.push_back({n, &p}); });
    for (size_t i = 0; i < p1.size(); ++i) {
        const std::string& n = p1[i].first;
        const bool block_internal = n.rfind("cross.", 0) == 0 || n.rfind("self.", 0) == 0 ||
                                    n.rfind("energy.", 0) == 0;
        if (!block_internal) p2[i].second->value = p1[i].second->value;
    }
    zero_layer_scales(m1);
    zero_layer_scales(m2);
    Tensor img = random_image(32, 29, 2);
    CHECK(forward_eval(m1, img).v == forward_eval(m2, img).v);
}

TEST_CASE("forward succeeds across the resolution sweep") {
    for (int input : {224, 448, 512, 672}) {
        ModelConfig cfg;
        cfg.input_size = input;
        auto m = build_model<float>(cfg, 23);
        Tensor out = forward_eval(m, random_image(input, 31));
        CHECK(out.shape == Shape{1, 8});
        CHECK(out.all_finite());
    }
}

TEST_CASE("FLOP profile: closed forms and published budget") {
    ModelConfig cfg;  // 448 defaults
    CHECK(stem_conv_flops(cfg, 448) == 708083712);

    Profile p = count_flops(cfg, 448);
    CHECK(static_cast<double>(p.total_flops) >= 3.327e9 * 0.85);
    CHECK(static_cast<double>(p.total_flops) <= 3.327e9 * 1.15);

    // interaction multiplies: 3*|S|*D*28^2 per rolling product, cross + N self
    const i64 per_call = 3 * 4 * 96 * 28 * 28;
    CHECK(p.interaction_multiplies == per_call * (1 + cfg.num_self_blocks));

    // halving spatial extents quarters the stem conv cost
    CHECK(stem_conv_flops(cfg, 448) == 4 * stem_conv_flops(cfg, 224));

    i64 sum = 0;
    for (const auto& it : p.items) sum += it.flops;
    CHECK(sum == p.total_flops);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "cliffm_ckpt_test").string();
    fs::create_directories(dir);
    const std::string path = dir + "/model.ckpt";

    ModelConfig cfg = tiny_config();
    auto m = build_model<float>(cfg, 37);
    // make buffers non-trivial
    Tensor img = random_image(32, 41, 2);
    {
        Tape<float> t(true);
        Rng r;
        model_forward(t, t.constant(img), m, Mode::Train, r);
    }
    save_checkpoint(path, m);
    auto loaded = load_checkpoint<float>(path);

    CHECK(forward_eval(m, img).v == forward_eval(loaded, img).v);
    std::vector<Param<float>*> pa, pb;
    for_each_param(m, [&](const std::string&, Param<float>& p) { pa.push_back(&p); });
    for_each_param(loaded, [&](const std::string&, Param<float>& p) { pb.push_back(&p); });
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value.v == pb[i]->value.v);

    // archive bytes themselves round-trip
    save_checkpoint(path + ".2", loaded);
    CHECK(read_file_bytes(path) == read_file_bytes(path + ".2"));

    fs::remove_all(dir);
}

TEST_CASE("model config validation") {
    ModelConfig cfg;
    cfg.input_size = 450;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.dim = 10;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.input_size = 64;  // stem grid 16 < 28
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("drop path ramp endpoints") {
    ModelConfig cfg;
    cfg.num_self_blocks = 6;
    cfg.drop_path_max = 0.2;
    CHECK(cfg.self_block_drop_rate(0) == doctest::Approx(0.0));
    CHECK(cfg.self_block_drop_rate(1) == doctest::Approx(0.04));
    CHECK(cfg.self_block_drop_rate(5) == doctest::Approx(0.2));
    cfg.num_self_blocks = 1;
    CHECK(cfg.self_block_drop_rate(0) == 0.0);
}
