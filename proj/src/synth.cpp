#include "cliffm/synth.hpp"

#include <cmath>
#include <filesystem>

#include "cliffm/cmt.hpp"
#include "cliffm/png_io.hpp"
#include "cliffm/rng.hpp"

namespace fs = std::filesystem;

namespace cliffm {

namespace {

struct Canvas {
    int size;
    std::vector<float> r, g, b;
    explicit Canvas(int s)
        : size(s),
          r(static_cast<size_t>(s) * s),
          g(static_cast<size_t>(s) * s),
          b(static_cast<size_t>(s) * s) {}
    size_t idx(int y, int x) const { return static_cast<size_t>(y) * size + x; }
};

// Fundus-like background: warm radial falloff plus mild pixel noise.
void render_background(Canvas& c, Rng& rng) {
    const float cx = c.size / 2.0f, cy = c.size / 2.0f;
    const float rad = c.size / 2.0f;
    for (int y = 0; y < c.size; ++y) {
        for (int x = 0; x < c.size; ++x) {
            const float d = std::hypot(x - cx, y - cy) / rad;
            const float base = 1.0f - 0.5f * d * d;
            const float n = static_cast<float>(rng.uniform(-0.02, 0.02));
            c.r[c.idx(y, x)] = 100.0f * base + 25.0f + 255.0f * n;
            c.g[c.idx(y, x)] = 55.0f * base + 15.0f + 255.0f * n;
            c.b[c.idx(y, x)] = 35.0f * base + 10.0f + 255.0f * n;
        }
    }
}

// Patterns stay near the image center so random resized crops keep them.

// Class 0: bright disc, red/green heavy.
void render_disc(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float cx = static_cast<float>(rng.uniform(0.35, 0.65)) * s;
    const float cy = static_cast<float>(rng.uniform(0.35, 0.65)) * s;
    const float rad = static_cast<float>(rng.uniform(0.12, 0.18)) * s;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float d = std::hypot(x - cx, y - cy);
            if (d < rad) {
                const float w = 1.0f - d / rad;
                c.r[c.idx(y, x)] += 160.0f * w;
                c.g[c.idx(y, x)] += 150.0f * w;
            }
        }
}

// Class 1: dark gaussian blob in all channels.
void render_dark_blob(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float cx = static_cast<float>(rng.uniform(0.35, 0.65)) * s;
    const float cy = static_cast<float>(rng.uniform(0.35, 0.65)) * s;
    const float sigma = static_cast<float>(rng.uniform(0.10, 0.16)) * s;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const float w = std::exp(-d2 / (2.0f * sigma * sigma));
            c.r[c.idx(y, x)] -= 120.0f * w;
            c.g[c.idx(y, x)] -= 100.0f * w;
            c.b[c.idx(y, x)] -= 80.0f * w;
        }
}

// Class 2: green annulus.
void render_ring(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float cx = static_cast<float>(rng.uniform(0.4, 0.6)) * s;
    const float cy = static_cast<float>(rng.uniform(0.4, 0.6)) * s;
    const float rad = static_cast<float>(rng.uniform(0.20, 0.28)) * s;
    const float width = 0.06f * s;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float d = std::hypot(x - cx, y - cy);
            const float w = std::max(0.0f, 1.0f - std::abs(d - rad) / width);
            c.g[c.idx(y, x)] += 150.0f * w;
            c.b[c.idx(y, x)] += 50.0f * w;
        }
}

// Class 3: blue diagonal stripes.
void render_stripes(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float angle = static_cast<float>(rng.uniform(0.6, 1.0));  // radians, near diagonal
    const float freq = 2.0f * 3.14159265f / (0.09f * s);
    const float ca = std::cos(angle), sa = std::sin(angle);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float t = (ca * x + sa * y) * freq;
            const float w = 0.5f * (1.0f + std::sin(t));
            c.b[c.idx(y, x)] += 120.0f * w;
            c.g[c.idx(y, x)] += 30.0f * w;
        }
}

// Class 4: coarse checkerboard, red/blue.
void render_checker(Canvas& c, Rng& rng) {
    const int s = c.size;
    const int cell = std::max(4, static_cast<int>(s * rng.uniform(0.11, 0.15)));
    const int phase = static_cast<int>(rng.below(2));
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            if (((x / cell + y / cell) & 1) == phase) {
                c.r[c.idx(y, x)] += 70.0f;
                c.b[c.idx(y, x)] += 95.0f;
            }
        }
}

// Class 5: radial brightening toward the rim (green/blue cast).
void render_gradient(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float amp = static_cast<float>(rng.uniform(0.9, 1.2));
    const float cx = s / 2.0f, cy = s / 2.0f, rad = s / 2.0f;
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const float d = std::min(1.0f, std::hypot(x - cx, y - cy) / rad);
            c.g[c.idx(y, x)] += 110.0f * amp * d;
            c.b[c.idx(y, x)] += 90.0f * amp * d;
        }
}

// Class 6: cluster of small bright speckles near the center.
void render_speckles(Canvas& c, Rng& rng) {
    const int s = c.size;
    const float cx = static_cast<float>(rng.uniform(0.38, 0.62)) * s;
    const float cy = static_cast<float>(rng.uniform(0.38, 0.62)) * s;
    const float spread = 0.14f * s;
    const int count = 26 + static_cast<int>(rng.below(10));
    for (int i = 0; i < count; ++i) {
        const float dx = static_cast<float>(rng.normal()) * spread;
        const float dy = static_cast<float>(rng.normal()) * spread;
        const int px = static_cast<int>(cx + dx), py = static_cast<int>(cy + dy);
        const int rad = 1 + static_cast<int>(rng.below(2));
        for (int y = std::max(0, py - rad); y <= std::min(s - 1, py + rad); ++y)
            for (int x = std::max(0, px - rad); x <= std::min(s - 1, px + rad); ++x) {
                c.r[c.idx(y, x)] += 140.0f;
                c.g[c.idx(y, x)] += 140.0f;
                c.b[c.idx(y, x)] += 110.0f;
            }
    }
}

// Class 7: bright square frame at a fixed inset (survives edge crops).
void render_inset_frame(Canvas& c, Rng& rng) {
    const int s = c.size;
    const int inset = static_cast<int>(s * rng.uniform(0.18, 0.24));
    const int width = std::max(2, static_cast<int>(s * 0.05));
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            const int d = std::min(std::min(x, s - 1 - x), std::min(y, s - 1 - y));
            if (d >= inset && d < inset + width) {
                c.r[c.idx(y, x)] += 130.0f;
                c.g[c.idx(y, x)] += 110.0f;
            }
        }
}

}  // namespace

TensorU8 synth_render(const std::vector<u8>& labels, int size, Rng& rng) {
    if (labels.size() != 8) throw ConfigError("synth_render: 8 labels required");
    Canvas c(size);
    render_background(c, rng);
    if (labels[0]) render_disc(c, rng);
    if (labels[1]) render_dark_blob(c, rng);
    if (labels[2]) render_ring(c, rng);
    if (labels[3]) render_stripes(c, rng);
    if (labels[4]) render_checker(c, rng);
    if (labels[5]) render_gradient(c, rng);
    if (labels[6]) render_speckles(c, rng);
    if (labels[7]) render_inset_frame(c, rng);

    TensorU8 img({3, size, size});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto q = [](float v) {
                return static_cast<u8>(std::clamp(v, 0.0f, 255.0f));
            };
            img.at(0, y, x) = q(c.r[c.idx(y, x)]);
            img.at(1, y, x) = q(c.g[c.idx(y, x)]);
            img.at(2, y, x) = q(c.b[c.idx(y, x)]);
        }
    return img;
}

SynthDataset synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    fs::create_directories(fs::path(out_dir) / "images");

    SynthDataset ds;
    for (int p = 0; p < spec.num_patients; ++p) {
        Rng rng = derive_rng(spec.seed, "synth-patient", static_cast<u64>(p));
        std::vector<u8> labels(8, 0);
        for (int c = 0; c < 8; ++c)
            labels[static_cast<size_t>(c)] = rng.bernoulli(spec.label_priors[static_cast<size_t>(c)]) ? 1 : 0;
        const bool two_eyes = rng.bernoulli(spec.second_eye_prob);

        char id[16];
        std::snprintf(id, sizeof(id), "p%05d", p);
        SampleRecord rec;
        rec.patient_id = id;
        rec.labels = labels;

        const auto emit = [&](const char* side) {
            TensorU8 img = synth_render(labels, spec.image_size, rng);
            const std::string rel = std::string("images/") + id + "_" + side;
            png_write((fs::path(out_dir) / (rel + ".png")).string(), img);
            cmt_write((fs::path(out_dir) / (rel + ".cmt")).string(), img);
            ds.num_images++;
            return rel + ".png";
        };
        rec.left_path = emit("L");
        if (two_eyes) rec.right_path = emit("R");
        ds.records.push_back(std::move(rec));
    }
    ds.manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    write_manifest(ds.manifest_path, ds.records);
    return ds;
}

}  // namespace cliffm
