#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "cliffm/augment.hpp"
#include "cliffm/cmt.hpp"
#include "cliffm/metrics.hpp"
#include "cliffm/png_io.hpp"
#include "cliffm/synth.hpp"

using namespace cliffm;
namespace fs = std::filesystem;

TEST_CASE("manifest parsing: example rows") {
    const std::string text =
        "patient_id,left,right,L0,L1,L2,L3,L4,L5,L6,L7\n"
        "p1,a.png,b.png,1,0,0,0,0,0,0,0\n"
        "p2,,c.png,0,1,0,0,0,0,0,0\n";
    auto recs = parse_manifest_text(text, 8, "test");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].patient_id == "p1");
    CHECK(recs[0].left_path == "a.png");
    CHECK(recs[0].right_path == "b.png");
    CHECK(recs[0].labels == std::vector<u8>{1, 0, 0, 0, 0, 0, 0, 0});
    CHECK(recs[1].left_path.empty());
    CHECK(recs[1].right_path == "c.png");
}

TEST_CASE("manifest parsing: diagnostics carry line numbers") {
    const std::string header = "patient_id,left,right,L0,L1,L2,L3,L4,L5,L6,L7\n";
    CHECK_THROWS_WITH_AS(parse_manifest_text(header + "p1,a.png,,2,0,0,0,0,0,0,0\n", 8, "m"),
                         doctest::Contains("m:2"), ConfigError);
    CHECK_THROWS_AS(parse_manifest_text(header + "p1,,,1,0,0,0,0,0,0,0\n", 8, "m"), ConfigError);
    CHECK_THROWS_AS(parse_manifest_text(header + "p1,a.png,1,0\n", 8, "m"), ConfigError);
    CHECK_THROWS_AS(parse_manifest_text("bad,header\np1,a,b,1,0,0,0,0,0,0,0\n", 8, "m"),
                    ConfigError);
}

namespace {

std::vector<SampleRecord> fake_records(int patients, u64 seed) {
    Rng rng(seed);
    std::vector<SampleRecord> recs;
    for (int p = 0; p < patients; ++p) {
        SampleRecord r;
        r.patient_id = "p" + std::to_string(p);
        r.left_path = "img/" + r.patient_id + "_L.png";
        if (rng.below(2)) r.right_path = "img/" + r.patient_id + "_R.png";
        r.labels.assign(8, 0);
        r.labels[rng.below(8)] = 1;
        if (rng.below(3) == 0) r.labels[rng.below(8)] = 1;
        recs.push_back(r);
    }
    return recs;
}

}  // namespace

TEST_CASE("patient aggregation and stratification key") {
    // two records of one patient aggregate by max; key = argmax (tie -> lowest)
    std::vector<SampleRecord> recs;
    SampleRecord a;
    a.patient_id = "x";
    a.left_path = "a.png";
    a.labels = {1, 0, 0, 0, 0, 0, 0, 0};
    SampleRecord b = a;
    b.labels = {0, 1, 0, 0, 0, 0, 0, 0};
    recs.push_back(a);
    recs.push_back(b);
    for (int i = 0; i < 9; ++i) {
        SampleRecord r;
        r.patient_id = "f" + std::to_string(i);
        r.left_path = "f.png";
        r.labels = {1, 0, 0, 0, 0, 0, 0, 0};
        recs.push_back(r);
    }
    PatientSplit split = patient_split(recs, 0.8, 1);
    // all of patient x's records live on one side
    const bool in_train = split.is_train("x");
    auto expanded = expand_eyes(recs, split);
    for (const auto& s : expanded)
        if (s.patient_id == "x")
            CHECK((s.split == SplitTag::Train) == in_train);
}

TEST_CASE("split hygiene: zero patient overlap, order invariance") {
    for (u64 seed = 1; seed <= 20; ++seed) {
        auto recs = fake_records(50, seed);
        PatientSplit split = patient_split(recs, 0.8, seed);
        std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
        for (const auto& id : split.val_ids) CHECK(train.count(id) == 0);

        // order invariance
        auto shuffled = recs;
        Rng rng(seed + 1000);
        for (size_t i = shuffled.size(); i > 1; --i)
            std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
        PatientSplit split2 = patient_split(shuffled, 0.8, seed);
        CHECK(split.train_ids == split2.train_ids);
        CHECK(split.val_ids == split2.val_ids);
    }
}

TEST_CASE("stratified fractions within one patient of 80:20") {
    auto recs = fake_records(100, 3);
    PatientSplit split = patient_split(recs, 0.8, 7);
    // recompute strata and count train membership per key
    std::map<std::string, std::vector<u8>> agg;
    for (const auto& r : recs) {
        auto& v = agg[r.patient_id];
        if (v.empty()) v.assign(8, 0);
        for (size_t i = 0; i < 8; ++i) v[i] = std::max(v[i], r.labels[i]);
    }
    std::map<int, std::pair<int, int>> per_key;  // key -> (train, total)
    std::set<std::string> train(split.train_ids.begin(), split.train_ids.end());
    for (const auto& [id, labels] : agg) {
        int key = 0;
        for (size_t i = 1; i < 8; ++i)
            if (labels[i] > labels[static_cast<size_t>(key)]) key = static_cast<int>(i);
        per_key[key].second++;
        if (train.count(id)) per_key[key].first++;
    }
    for (const auto& [key, counts] : per_key) {
        const double expect = 0.8 * counts.second;
        CHECK(std::abs(counts.first - expect) <= 1.0);
    }
}

TEST_CASE("singleton stratum goes to train with a warning") {
    std::vector<SampleRecord> recs;
    for (int i = 0; i < 10; ++i) {
        SampleRecord r;
        r.patient_id = "a" + std::to_string(i);
        r.left_path = "x.png";
        r.labels = {1, 0, 0, 0, 0, 0, 0, 0};
        recs.push_back(r);
    }
    SampleRecord lone;
    lone.patient_id = "zz";
    lone.left_path = "z.png";
    lone.labels = {0, 0, 0, 0, 0, 0, 0, 1};
    recs.push_back(lone);
    PatientSplit split = patient_split(recs, 0.8, 5);
    CHECK(split.is_train("zz"));
    CHECK(!split.warnings.empty());
}

TEST_CASE("expand_eyes preserves labels and counts") {
    auto recs = fake_records(200, 9);
    i64 expected = 0;
    for (const auto& r : recs)
        expected += (r.left_path.empty() ? 0 : 1) + (r.right_path.empty() ? 0 : 1);
    PatientSplit split = patient_split(recs, 0.8, 9);
    auto samples = expand_eyes(recs, split);
    CHECK(static_cast<i64>(samples.size()) == expected);
    for (const auto& s : samples) {
        CHECK(!s.image_path.empty());
        CHECK(s.labels.size() == 8);
    }
}

TEST_CASE("augmentation: degenerate config reduces to resize+normalize") {
    Rng rng(21);
    Tensor img({3, 20, 20});
    for (auto& v : img.v) v = static_cast<float>(rng.uniform());
    AugmentConfig cfg;
    cfg.target_size = 16;
    cfg.scale_min = cfg.scale_max = 1.0;
    cfg.aspect_min = cfg.aspect_max = 1.0;
    cfg.hflip_prob = cfg.vflip_prob = 0.0;
    Rng arng(3);
    Tensor out = augment_train(img, arng, cfg);
    Tensor want = preprocess_eval(img, 16);
    CHECK(max_abs_diff(out, want) == 0.0);
}

TEST_CASE("normalization closed form on a constant image") {
    Tensor img = Tensor::full({3, 8, 8}, 0.5f);
    Tensor out = normalize_image(img);
    for (i64 c = 0; c < 3; ++c) {
        const float want = (0.5f - kImageMean[c]) / kImageStd[c];
        for (i64 p = 0; p < 64; ++p)
            CHECK(out[c * 64 + p] == doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("crop scale distribution over 1e4 seeded draws") {
    AugmentConfig cfg;
    cfg.target_size = 112;
    Rng rng(12345);
    double sum = 0.0;
    double realized_min = 1e9, realized_max = -1e9;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        CropParams p = sample_crop(112, 112, rng, cfg);
        CHECK(p.sampled_scale >= 0.7);
        CHECK(p.sampled_scale <= 1.0);
        sum += p.sampled_scale;
        const double realized = static_cast<double>(p.h * p.w) / (112.0 * 112.0);
        realized_min = std::min(realized_min, realized);
        realized_max = std::max(realized_max, realized);
    }
    const double mean = sum / n;
    CHECK(std::abs(mean - 0.85) / 0.85 < 0.05);
    CHECK(realized_min > 0.68);  // rounding keeps realized area near the sampled one
    CHECK(realized_max < 1.0 + 1e-12);
}

TEST_CASE("CMT1 round trip, fixture, and error paths") {
    Rng rng(55);
    Tensor t({2, 3, 4, 5});
    for (auto& v : t.v) v = static_cast<float>(rng.normal());
    const auto bytes = cmt_encode(t);
    Tensor back = cmt_decode<float>(bytes);
    CHECK(back.shape == t.shape);
    CHECK(back.v == t.v);

    // hand-encoded f64 fixture: shape [2], payload {1.5, -2.0}
    std::vector<u8> fx{'C', 'M', 'T', '1', 2, 1};
    const u64 ext = 2;
    for (int i = 0; i < 8; ++i) fx.push_back(static_cast<u8>(ext >> (8 * i)));
    const double vals[2] = {1.5, -2.0};
    const u8* vb = reinterpret_cast<const u8*>(vals);
    fx.insert(fx.end(), vb, vb + 16);
    TensorD fixture = cmt_decode<double>(fx);
    CHECK(fixture.shape == Shape{2});
    CHECK(fixture[0] == 1.5);
    CHECK(fixture[1] == -2.0);

    // zero-dim rejected on encode
    TensorD scalar;
    scalar.v = {1.0};
    CHECK_THROWS_AS(cmt_encode(scalar), ConfigError);

    // bad magic / dtype / truncation
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(cmt_decode<float>(bad), IoError);
    bad = bytes;
    bad[4] = 9;
    CHECK_THROWS_AS(cmt_decode<float>(bad), IoError);
    bad = bytes;
    bad.resize(bad.size() - 3);
    CHECK_THROWS_AS(cmt_decode<float>(bad), IoError);
    CHECK_THROWS_AS(cmt_decode<double>(bytes), IoError);  // dtype mismatch
}

TEST_CASE("PNG round trip on random RGB") {
    const std::string dir = (fs::temp_directory_path() / "cliffm_png_test").string();
    fs::create_directories(dir);
    Rng rng(66);
    TensorU8 img({3, 21, 17});
    for (auto& v : img.v) v = static_cast<u8>(rng.below(256));
    png_write(dir + "/t.png", img);
    TensorU8 back = png_read(dir + "/t.png");
    CHECK(back.shape == img.shape);
    CHECK(back.v == img.v);
    CHECK_THROWS_AS(png_read(dir + "/missing.png"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("synthetic generation: determinism and background-only case") {
    Rng r1(9), r2(9);
    std::vector<u8> zeros(8, 0), ones(8, 0);
    ones[0] = 1;
    TensorU8 bg1 = synth_render(zeros, 32, r1);
    TensorU8 bg2 = synth_render(zeros, 32, r2);
    CHECK(bg1.v == bg2.v);
    Rng r3(9);
    TensorU8 disc = synth_render(ones, 32, r3);
    CHECK(bg1.v != disc.v);

    const std::string d1 = (fs::temp_directory_path() / "cliffm_synth_a").string();
    const std::string d2 = (fs::temp_directory_path() / "cliffm_synth_b").string();
    fs::remove_all(d1);
    fs::remove_all(d2);
    SynthSpec spec;
    spec.num_patients = 12;
    spec.image_size = 32;
    spec.seed = 4;
    auto a = synth_generate(spec, d1);
    auto b = synth_generate(spec, d2);
    CHECK(read_file_bytes(a.manifest_path) == read_file_bytes(b.manifest_path));
    for (const auto& rec : a.records) {
        if (rec.left_path.empty()) continue;
        CHECK(read_file_bytes(d1 + "/" + rec.left_path) ==
              read_file_bytes(d2 + "/" + rec.left_path));
        const std::string cmt = rec.left_path.substr(0, rec.left_path.size() - 4) + ".cmt";
        CHECK(read_file_bytes(d1 + "/" + cmt) == read_file_bytes(d2 + "/" + cmt));
    }
    // reparse round trip
    auto reparsed = parse_manifest(a.manifest_path, 8);
    CHECK(reparsed.size() == a.records.size());
    fs::remove_all(d1);
    fs::remove_all(d2);
}

namespace {

// 8x8 mean-pooled patch features (3*64 values) + bias.
std::vector<double> patch_features(const TensorU8& img) {
    const i64 S = img.dim(1);
    std::vector<double> f;
    f.reserve(3 * 64 + 1);
    for (i64 c = 0; c < 3; ++c)
        for (i64 py = 0; py < 8; ++py)
            for (i64 px = 0; px < 8; ++px) {
                const i64 y0 = py * S / 8, y1 = (py + 1) * S / 8;
                const i64 x0 = px * S / 8, x1 = (px + 1) * S / 8;
                double acc = 0.0;
                for (i64 y = y0; y < y1; ++y)
                    for (i64 x = x0; x < x1; ++x) acc += img.at(c, y, x);
                f.push_back(acc / (255.0 * static_cast<double>((y1 - y0) * (x1 - x0))) - 0.5);
            }
    f.push_back(1.0);
    return f;
}

}  // namespace

TEST_CASE("learnability oracle: linear probe reaches macro AUC > 0.8") {
    // Render a small synthetic set in memory and fit one-vs-rest logistic
    // regression on pooled patches.
    SynthSpec spec;
    spec.num_patients = 240;
    spec.image_size = 64;
    spec.seed = 77;
    std::vector<std::vector<double>> feats;
    std::vector<std::vector<u8>> labels;
    for (int p = 0; p < spec.num_patients; ++p) {
        Rng rng = derive_rng(spec.seed, "synth-patient", static_cast<u64>(p));
        std::vector<u8> lab(8, 0);
        for (int c = 0; c < 8; ++c)
            lab[static_cast<size_t>(c)] =
                rng.bernoulli(spec.label_priors[static_cast<size_t>(c)]) ? 1 : 0;
        rng.bernoulli(spec.second_eye_prob);  // keep stream layout identical to synth_generate
        feats.push_back(patch_features(synth_render(lab, spec.image_size, rng)));
        labels.push_back(lab);
    }
    const size_t n_train = 180, dim = feats[0].size();
    TensorD scores({static_cast<i64>(feats.size() - n_train), 8});
    TensorD truth({static_cast<i64>(feats.size() - n_train), 8});
    for (int cls = 0; cls < 8; ++cls) {
        std::vector<double> w(dim, 0.0);
        const double lr = 0.5;
        for (int epoch = 0; epoch < 120; ++epoch) {
            std::vector<double> grad(dim, 0.0);
            for (size_t i = 0; i < n_train; ++i) {
                double z = 0.0;
                for (size_t j = 0; j < dim; ++j) z += w[j] * feats[i][j];
                const double p = 1.0 / (1.0 + std::exp(-z));
                const double err = p - labels[i][static_cast<size_t>(cls)];
                for (size_t j = 0; j < dim; ++j) grad[j] += err * feats[i][j];
            }
            for (size_t j = 0; j < dim; ++j) w[j] -= lr * grad[j] / static_cast<double>(n_train);
        }
        for (size_t i = n_train; i < feats.size(); ++i) {
            double z = 0.0;
            for (size_t j = 0; j < dim; ++j) z += w[j] * feats[i][j];
            scores.at(static_cast<i64>(i - n_train), cls) = 1.0 / (1.0 + std::exp(-z));
            truth.at(static_cast<i64>(i - n_train), cls) = labels[i][static_cast<size_t>(cls)];
        }
    }
    const double auc = macro_auc(scores, truth);
    INFO("linear probe macro AUC = " << auc);
    CHECK(auc > 0.8);
}
