#pragma once

// Training-time image augmentation: random resized crop (area scale 0.7-1.0,
// aspect 0.85-1.15), horizontal flip p=0.5, vertical flip p=0.3, then
// normalization with the fixed published per-channel statistics. Validation
// applies resize + normalize only.

#include "cliffm/kernels.hpp"
#include "cliffm/rng.hpp"

namespace cliffm {

struct AugmentConfig {
    int target_size = 448;
    double scale_min = 0.7;
    double scale_max = 1.0;
    double aspect_min = 0.85;
    double aspect_max = 1.15;
    double hflip_prob = 0.5;
    double vflip_prob = 0.3;
};

inline constexpr float kImageMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageStd[3] = {0.229f, 0.224f, 0.225f};

struct CropParams {
    i64 y = 0, x = 0, h = 0, w = 0;
    double sampled_scale = 1.0;  // area fraction drawn from [scale_min, scale_max]
    bool fallback = false;
};

// Up to 10 attempts at a random area/aspect crop, then a centered full-extent
// square fallback.
inline CropParams sample_crop(i64 H, i64 W, Rng& rng, const AugmentConfig& cfg) {
    for (int attempt = 0; attempt < 10; ++attempt) {
        CropParams p;
        p.sampled_scale = rng.uniform(cfg.scale_min, cfg.scale_max);
        const double aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max);
        const double area = p.sampled_scale * static_cast<double>(H * W);
        p.w = static_cast<i64>(std::llround(std::sqrt(area * aspect)));
        p.h = static_cast<i64>(std::llround(std::sqrt(area / aspect)));
        if (p.w < 1 || p.h < 1 || p.w > W || p.h > H) continue;
        p.y = static_cast<i64>(rng.below(static_cast<u64>(H - p.h + 1)));
        p.x = static_cast<i64>(rng.below(static_cast<u64>(W - p.w + 1)));
        return p;
    }
    CropParams p;
    p.fallback = true;
    p.h = p.w = std::min(H, W);
    p.y = (H - p.h) / 2;
    p.x = (W - p.w) / 2;
    p.sampled_scale = static_cast<double>(p.h * p.w) / static_cast<double>(H * W);
    return p;
}

inline Tensor to_float_image(const TensorU8& img) {
    Tensor out(img.shape);
    for (i64 i = 0; i < img.numel(); ++i) out[i] = static_cast<float>(img[i]) / 255.0f;
    return out;
}

inline Tensor crop_region(const Tensor& img, const CropParams& p) {
    Tensor out({img.dim(0), p.h, p.w});
    for (i64 c = 0; c < img.dim(0); ++c)
        for (i64 y = 0; y < p.h; ++y)
            for (i64 x = 0; x < p.w; ++x) out.at(c, y, x) = img.at(c, p.y + y, p.x + x);
    return out;
}

inline Tensor resize_image(const Tensor& img, i64 size) {
    // Reuse the 4-D bilinear kernel on a singleton batch.
    Tensor batched({1, img.dim(0), img.dim(1), img.dim(2)});
    batched.v = img.v;
    Tensor resized = bilinear_fwd(batched, size, size);
    Tensor out({img.dim(0), size, size});
    out.v = std::move(resized.v);
    return out;
}

inline void flip_horizontal(Tensor& img) {
    const i64 C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (i64 c = 0; c < C; ++c)
        for (i64 y = 0; y < H; ++y)
            for (i64 x = 0; x < W / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, W - 1 - x));
}

inline void flip_vertical(Tensor& img) {
    const i64 C = img.dim(0), H = img.dim(1), W = img.dim(2);
    for (i64 c = 0; c < C; ++c)
        for (i64 y = 0; y < H / 2; ++y)
            for (i64 x = 0; x < W; ++x) std::swap(img.at(c, y, x), img.at(c, H - 1 - y, x));
}

inline Tensor normalize_image(Tensor img) {
    const i64 plane = img.dim(1) * img.dim(2);
    for (i64 c = 0; c < 3; ++c) {
        float* p = img.data() + c * plane;
        for (i64 i = 0; i < plane; ++i)
            p[i] = (p[i] - kImageMean[c]) / kImageStd[c];
    }
    return img;
}

// img: float 3 x H x W in [0,1]; returns normalized 3 x target x target.
inline Tensor augment_train(const Tensor& img, Rng& rng, const AugmentConfig& cfg) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ConfigError("augment_train: expected 3-channel image");
    const CropParams crop = sample_crop(img.dim(1), img.dim(2), rng, cfg);
    Tensor out = resize_image(crop_region(img, crop), cfg.target_size);
    if (rng.uniform() < cfg.hflip_prob) flip_horizontal(out);
    if (rng.uniform() < cfg.vflip_prob) flip_vertical(out);
    return normalize_image(std::move(out));
}

inline Tensor preprocess_eval(const Tensor& img, int target_size) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ConfigError("preprocess_eval: expected 3-channel image");
    return normalize_image(resize_image(img, target_size));
}

}  // namespace cliffm
