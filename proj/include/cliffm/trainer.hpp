#pragma once

// The optimization protocol: AdamW with decoupled decay, linear warmup +
// cosine annealing, gradient clipping, gradient accumulation, EMA weights,
// MixUp/CutMix branch augmentation, early stopping on validation macro AUC.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cliffm/augment.hpp"
#include "cliffm/checkpoint.hpp"
#include "cliffm/cmt.hpp"
#include "cliffm/loss.hpp"
#include "cliffm/manifest.hpp"
#include "cliffm/metrics.hpp"
#include "cliffm/png_io.hpp"
#include "cliffm/run_config.hpp"

namespace cliffm {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;
inline constexpr double kMinLr = 1e-7;

// Linear warmup from 0 to base over warmup_steps optimizer steps, then cosine
// annealing to min_lr, reaching it exactly at the final step.
inline double lr_at(i64 step, i64 total_steps, i64 warmup_steps, double base_lr,
                    double min_lr = kMinLr) {
    if (step < 0 || total_steps < 1) throw ConfigError("lr_at: bad step/total");
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    const i64 last = total_steps - 1;
    if (last <= warmup_steps) return base_lr;
    double t = static_cast<double>(step - warmup_steps) / static_cast<double>(last - warmup_steps);
    t = std::min(t, 1.0);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// optimizer / EMA / clipping
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    std::vector<TensorT<T>> m, v;
    i64 step_count = 0;

    static AdamState init(const std::vector<Param<T>*>& params) {
        AdamState st;
        for (auto* p : params) {
            st.m.push_back(TensorT<T>::zeros(p->value.shape));
            st.v.push_back(TensorT<T>::zeros(p->value.shape));
        }
        return st;
    }
};

// Bias-corrected Adam with decoupled weight decay on decay-flagged tensors.
template <typename T>
void adamw_step(const std::vector<Param<T>*>& params, AdamState<T>& st, double lr,
                double weight_decay) {
    st.step_count++;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(st.step_count));
    for (size_t i = 0; i < params.size(); ++i) {
        Param<T>& p = *params[i];
        p.ensure_grad();
        TensorT<T>& m = st.m[i];
        TensorT<T>& v = st.v[i];
        const double wd = p.decay ? weight_decay : 0.0;
        for (i64 j = 0; j < p.value.numel(); ++j) {
            const double g = static_cast<double>(p.grad[j]);
            const double mj = kAdamBeta1 * static_cast<double>(m[j]) + (1.0 - kAdamBeta1) * g;
            const double vj =
                kAdamBeta2 * static_cast<double>(v[j]) + (1.0 - kAdamBeta2) * g * g;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double update = (mj / bc1) / (std::sqrt(vj / bc2) + kAdamEps);
            p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) -
                                        lr * (update + wd * static_cast<double>(p.value[j])));
        }
    }
}

// Returns the pre-clip global L2 norm.
template <typename T>
double clip_global_norm(const std::vector<Param<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params) {
        if (p->grad.empty()) continue;
        for (i64 j = 0; j < p->grad.numel(); ++j) {
            const double g = static_cast<double>(p->grad[j]);
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const T s = static_cast<T>(max_norm / norm);
        for (auto* p : params) {
            if (p->grad.empty()) continue;
            for (i64 j = 0; j < p->grad.numel(); ++j) p->grad[j] *= s;
        }
    }
    return norm;
}

template <typename T>
struct EmaState {
    std::vector<TensorT<T>> shadow;

    static EmaState init(const std::vector<Param<T>*>& params) {
        EmaState st;
        for (auto* p : params) st.shadow.push_back(p->value);
        return st;
    }

    void update(const std::vector<Param<T>*>& params, double decay) {
        for (size_t i = 0; i < params.size(); ++i) {
            TensorT<T>& s = shadow[i];
            const TensorT<T>& p = params[i]->value;
            for (i64 j = 0; j < s.numel(); ++j)
                s[j] = static_cast<T>(decay * static_cast<double>(s[j]) +
                                      (1.0 - decay) * static_cast<double>(p[j]));
        }
    }

    void swap_into(const std::vector<Param<T>*>& params) {
        for (size_t i = 0; i < params.size(); ++i) std::swap(shadow[i].v, params[i]->value.v);
    }
};

// ---------------------------------------------------------------------------
// mixed-sample augmentation
// ---------------------------------------------------------------------------

enum class MixMode { None, MixUp, CutMix };

struct MixResult {
    MixMode mode = MixMode::None;
    double lambda = 1.0;
    double realized = 0.0;  // CutMix: pasted area fraction
};

template <typename T>
void mixup_apply(TensorT<T>& images, TensorT<T>& targets, const std::vector<i64>& perm,
                 double lambda) {
    const i64 B = images.dim(0);
    const i64 img_stride = images.numel() / B;
    const i64 C = targets.dim(1);
    const TensorT<T> img_src = images;
    const TensorT<T> tgt_src = targets;
    const T lam = static_cast<T>(lambda);
    for (i64 b = 0; b < B; ++b) {
        const i64 q = perm[static_cast<size_t>(b)];
        for (i64 j = 0; j < img_stride; ++j)
            images[b * img_stride + j] =
                lam * img_src[b * img_stride + j] + (T(1) - lam) * img_src[q * img_stride + j];
        for (i64 c = 0; c < C; ++c)
            targets.at(b, c) = lam * tgt_src.at(b, c) + (T(1) - lam) * tgt_src.at(q, c);
    }
}

// Pastes a rectangle of area fraction (1 - lambda) centered at (cy, cx) from
// the permuted batch; targets mix by the realized (clipped) area fraction.
template <typename T>
double cutmix_apply(TensorT<T>& images, TensorT<T>& targets, const std::vector<i64>& perm,
                    double lambda, i64 cy, i64 cx) {
    const i64 B = images.dim(0), C = targets.dim(1);
    const i64 H = images.dim(2), W = images.dim(3);
    const double cut = std::sqrt(1.0 - lambda);
    const i64 ch = static_cast<i64>(std::llround(H * cut));
    const i64 cw = static_cast<i64>(std::llround(W * cut));
    const i64 y0 = std::max<i64>(0, cy - ch / 2), y1 = std::min<i64>(H, cy + (ch + 1) / 2);
    const i64 x0 = std::max<i64>(0, cx - cw / 2), x1 = std::min<i64>(W, cx + (cw + 1) / 2);
    const double realized =
        static_cast<double>(std::max<i64>(0, y1 - y0) * std::max<i64>(0, x1 - x0)) /
        static_cast<double>(H * W);
    const TensorT<T> img_src = images;
    const TensorT<T> tgt_src = targets;
    const T a = static_cast<T>(realized);
    for (i64 b = 0; b < B; ++b) {
        const i64 q = perm[static_cast<size_t>(b)];
        for (i64 c3 = 0; c3 < images.dim(1); ++c3)
            for (i64 y = y0; y < y1; ++y)
                for (i64 x = x0; x < x1; ++x)
                    images.at(b, c3, y, x) = img_src.at(q, c3, y, x);
        for (i64 c = 0; c < C; ++c)
            targets.at(b, c) = (T(1) - a) * tgt_src.at(b, c) + a * tgt_src.at(q, c);
    }
    return realized;
}

// Exactly one of MixUp/CutMix per batch, drawn with probability 0.5 each.
template <typename T>
MixResult mix_batch(TensorT<T>& images, TensorT<T>& targets, Rng& rng, double mixup_alpha,
                    double cutmix_alpha) {
    const i64 B = images.dim(0);
    MixResult res;
    if (B < 2) return res;  // pass-through; caller may warn
    std::vector<i64> perm(static_cast<size_t>(B));
    for (i64 i = 0; i < B; ++i) perm[static_cast<size_t>(i)] = i;
    for (i64 i = B; i > 1; --i)
        std::swap(perm[static_cast<size_t>(i - 1)], perm[rng.below(static_cast<u64>(i))]);

    if (rng.bernoulli(0.5)) {
        res.mode = MixMode::MixUp;
        res.lambda = rng.beta(mixup_alpha, mixup_alpha);
        mixup_apply(images, targets, perm, res.lambda);
        return res;
    }
    res.mode = MixMode::CutMix;
    res.lambda = rng.beta(cutmix_alpha, cutmix_alpha);
    const i64 cy = static_cast<i64>(rng.below(static_cast<u64>(images.dim(2))));
    const i64 cx = static_cast<i64>(rng.below(static_cast<u64>(images.dim(3))));
    res.realized = cutmix_apply(images, targets, perm, res.lambda, cy, cx);
    return res;
}

// Best-metric bookkeeping with patience. update() returns true when the run
// should stop after the current epoch.
struct EarlyStopTracker {
    int patience;
    double best = 0.0;
    int best_epoch = -1;
    int since_improve = 0;

    explicit EarlyStopTracker(int p) : patience(p) {}

    bool update(int epoch, double metric) {
        if (best_epoch < 0 || metric > best) {
            best = metric;
            best_epoch = epoch;
            since_improve = 0;
            return false;
        }
        return ++since_improve >= patience;
    }
};

// ---------------------------------------------------------------------------
// dataset cache
// ---------------------------------------------------------------------------

// Loads every referenced image once (PNG or CMT1 u8), relative paths resolved
// against the manifest directory.
class ImageCache {
public:
    ImageCache(const std::vector<ExpandedSample>& samples, const std::string& root) {
        images_.reserve(samples.size());
        for (const auto& s : samples) images_.push_back(load(resolve(root, s.image_path)));
    }

    const TensorU8& operator[](size_t i) const { return images_[i]; }
    size_t size() const { return images_.size(); }

    static std::string resolve(const std::string& root, const std::string& path) {
        std::filesystem::path p(path);
        if (p.is_absolute() || root.empty()) return path;
        return (std::filesystem::path(root) / p).string();
    }

    static TensorU8 load(const std::string& path) {
        if (path.size() > 4 && path.substr(path.size() - 4) == ".cmt")
            return cmt_read<u8>(path);
        return png_read(path);
    }

private:
    std::vector<TensorU8> images_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double lr = 0.0;
    double val_auc = 0.0;
    double val_f1opt = 0.0;
    double val_f1_fixed = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    double best_auc = 0.0;
    int best_epoch = -1;
    bool early_stopped = false;
    int skipped_steps = 0;
    std::string best_checkpoint, last_checkpoint, history_path, header_path;
};

struct TrainJob {
    RunConfig cfg;
    std::vector<SampleRecord> records;
    std::string data_root;  // manifest directory
    std::string out_dir;
    bool quiet = false;
};

inline std::string format_csv_row(const EpochStats& e) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g", e.epoch, e.train_loss, e.lr,
                  e.val_auc, e.val_f1opt, e.val_f1_fixed);
    return buf;
}

template <typename T>
TensorT<T> batch_images(const std::vector<Tensor>& prepped, const std::vector<size_t>& idx) {
    const i64 C = prepped[idx[0]].dim(0), S = prepped[idx[0]].dim(1);
    TensorT<T> out({static_cast<i64>(idx.size()), C, S, S});
    for (size_t b = 0; b < idx.size(); ++b)
        for (i64 j = 0; j < C * S * S; ++j)
            out[static_cast<i64>(b) * C * S * S + j] = static_cast<T>(prepped[idx[b]][j]);
    return out;
}

inline TrainResult train_model(const TrainJob& job) {
    const RunConfig& cfg = job.cfg;
    cfg.validate();
    namespace fs = std::filesystem;
    fs::create_directories(job.out_dir);

    // Patient-level split, fixed 80:20 protocol ratio.
    PatientSplit split = patient_split(job.records, 0.8, cfg.seed);
    std::vector<ExpandedSample> all = expand_eyes(job.records, split);
    std::vector<ExpandedSample> train_s, val_s;
    for (auto& s : all) (s.split == SplitTag::Train ? train_s : val_s).push_back(s);
    if (train_s.empty() || val_s.empty())
        throw ConfigError("train: empty train or validation split");

    {  // split lists for replay
        std::ofstream tr(fs::path(job.out_dir) / "train_patients.txt");
        for (const auto& id : split.train_ids) tr << id << "\n";
        std::ofstream va(fs::path(job.out_dir) / "val_patients.txt");
        for (const auto& id : split.val_ids) va << id << "\n";
    }

    ImageCache train_images(train_s, job.data_root);
    ImageCache val_images(val_s, job.data_root);

    // Class weights from the training split.
    LossConfig loss_cfg;
    loss_cfg.num_classes = cfg.num_classes;
    loss_cfg.smoothing = cfg.smoothing;
    loss_cfg.weight_cap = cfg.weight_cap;
    loss_cfg.validate();
    const i64 N = static_cast<i64>(train_s.size());
    Tensor train_labels({N, static_cast<i64>(cfg.num_classes)});
    for (i64 i = 0; i < N; ++i)
        for (int c = 0; c < cfg.num_classes; ++c)
            train_labels.at(i, c) = static_cast<float>(train_s[static_cast<size_t>(i)].labels[static_cast<size_t>(c)]);
    const Tensor weights =
        class_weights(train_labels, static_cast<float>(loss_cfg.weight_cap));

    ModelConfig mcfg = cfg.model_config();
    CliffordM<float> model = build_model<float>(mcfg, cfg.seed);
    std::vector<Param<float>*> params;
    for_each_param(model, [&](const std::string&, Param<float>& p) { params.push_back(&p); });
    AdamState<float> adam = AdamState<float>::init(params);
    EmaState<float> ema = EmaState<float>::init(params);
    for (auto* p : params) p->ensure_grad();

    const i64 micro_per_epoch = (N + cfg.batch_size - 1) / cfg.batch_size;
    const i64 steps_per_epoch = (micro_per_epoch + cfg.accum_steps - 1) / cfg.accum_steps;
    const i64 total_steps = steps_per_epoch * cfg.epochs;
    const i64 warmup_steps = steps_per_epoch * cfg.warmup_epochs;

    TrainResult result;
    result.header_path = (fs::path(job.out_dir) / "run_header.txt").string();
    {
        // The key=value lines fully determine the run; '#' lines are
        // informational, so the header itself replays as a config file.
        std::ofstream hd(result.header_path);
        hd << cfg.to_text();
        hd << "# param_count=" << total_param_count(model) << "\n";
        hd << "# train_samples=" << train_s.size() << "\n";
        hd << "# val_samples=" << val_s.size() << "\n";
        hd << "# steps_per_epoch=" << steps_per_epoch << "\n";
        hd << "# threads=" << worker_threads() << "\n";
        hd << "# eval_weights=ema\n";
    }
    result.history_path = (fs::path(job.out_dir) / "history.csv").string();
    std::ofstream hist(result.history_path, std::ios::trunc);
    hist << "epoch,train_loss,lr,val_macro_auc,val_macro_f1opt,val_macro_f1_0.5\n";
    hist.flush();

    // Validation inputs are deterministic; preprocess once.
    std::vector<Tensor> val_prepped;
    val_prepped.reserve(val_s.size());
    for (size_t i = 0; i < val_s.size(); ++i)
        val_prepped.push_back(
            preprocess_eval(to_float_image(val_images[i]), cfg.input_size));
    TensorD val_labels({static_cast<i64>(val_s.size()), static_cast<i64>(cfg.num_classes)});
    for (size_t i = 0; i < val_s.size(); ++i)
        for (int c = 0; c < cfg.num_classes; ++c)
            val_labels.at(static_cast<i64>(i), c) = val_s[i].labels[static_cast<size_t>(c)];

    const auto validate = [&]() {
        ema.swap_into(params);
        TensorD scores({static_cast<i64>(val_s.size()), static_cast<i64>(cfg.num_classes)});
        const size_t vb = 32;
        for (size_t start = 0; start < val_s.size(); start += vb) {
            std::vector<size_t> idx;
            for (size_t i = start; i < std::min(val_s.size(), start + vb); ++i) idx.push_back(i);
            Tensor batch = batch_images<float>(val_prepped, idx);
            Tensor logits = forward_eval(model, batch);
            for (size_t b = 0; b < idx.size(); ++b)
                for (int c = 0; c < cfg.num_classes; ++c)
                    scores.at(static_cast<i64>(idx[b]), c) = static_cast<double>(
                        sigmoid_scalar(logits.at(static_cast<i64>(b), c)));
        }
        ema.swap_into(params);
        return evaluate_multilabel(scores, val_labels);
    };

    const AugmentConfig aug{cfg.input_size, 0.7, 1.0, 0.85, 1.15, 0.5, 0.3};
    i64 opt_step = 0, micro_in_group = 0;
    int nonfinite_streak = 0;
    double last_lr = 0.0;
    EarlyStopTracker stopper(cfg.patience);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Per-epoch order from a derived stream; sample augmentation streams
        // depend only on (seed, epoch, sample index), not on batch order.
        std::vector<size_t> order(train_s.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = derive_rng(cfg.seed, "epoch-shuffle", static_cast<u64>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0;
        i64 loss_count = 0;
        for (i64 mb = 0; mb < micro_per_epoch; ++mb) {
            std::vector<size_t> idx;
            for (i64 i = mb * cfg.batch_size;
                 i < std::min<i64>(N, (mb + 1) * cfg.batch_size); ++i)
                idx.push_back(order[static_cast<size_t>(i)]);

            const i64 B = static_cast<i64>(idx.size());
            Tensor batch({B, 3, cfg.input_size, cfg.input_size});
            Tensor targets({B, static_cast<i64>(cfg.num_classes)});
            for (i64 b = 0; b < B; ++b) {
                Rng arng = derive_rng(cfg.seed, "augment",
                                      (static_cast<u64>(epoch) << 32) | idx[static_cast<size_t>(b)]);
                Tensor img = augment_train(to_float_image(train_images[idx[static_cast<size_t>(b)]]),
                                           arng, aug);
                std::copy(img.v.begin(), img.v.end(),
                          batch.v.begin() + static_cast<size_t>(b) * img.v.size());
                for (int c = 0; c < cfg.num_classes; ++c)
                    targets.at(b, c) =
                        train_s[idx[static_cast<size_t>(b)]].labels[static_cast<size_t>(c)];
            }
            if (cfg.mix_enabled && B >= 2) {
                Rng mrng = derive_rng(cfg.seed, "mix",
                                      static_cast<u64>(epoch) * 1000003ULL + static_cast<u64>(mb));
                mix_batch(batch, targets, mrng, cfg.mixup_alpha, cfg.cutmix_alpha);
            }
            const Tensor smoothed = smooth_targets(targets, static_cast<float>(cfg.smoothing));

            Rng srng = derive_rng(cfg.seed, "stochastic",
                                  static_cast<u64>(epoch) * 1000003ULL + static_cast<u64>(mb));
            Tape<float> tape(true);
            auto image_var = tape.constant(batch);
            auto logits = model_forward(tape, image_var, model, Mode::Train, srng);
            auto loss = weighted_bce(tape, logits, smoothed, weights,
                                     static_cast<float>(20.0));
            const double loss_value = tape.val(loss)[0];
            if (!std::isfinite(loss_value)) {
                nonfinite_streak++;
                if (nonfinite_streak >= 2)
                    throw NumericError("train: non-finite loss in two consecutive micro-batches");
                for (auto* p : params) p->zero_grad();
                micro_in_group = 0;
                continue;
            }
            nonfinite_streak = 0;
            loss_sum += loss_value;
            loss_count++;
            tape.backward(scale(tape, loss, 1.0f / static_cast<float>(cfg.accum_steps)));
            micro_in_group++;

            if (micro_in_group == cfg.accum_steps || mb == micro_per_epoch - 1) {
                bool finite = true;
                for (auto* p : params)
                    if (!p->grad.all_finite()) finite = false;
                if (!finite) {
                    result.skipped_steps++;
                    if (!job.quiet)
                        std::cerr << "warning: non-finite gradients, step skipped\n";
                } else {
                    clip_global_norm(params, cfg.grad_clip);
                    last_lr = lr_at(opt_step, total_steps, warmup_steps, cfg.lr);
                    adamw_step(params, adam, last_lr, cfg.weight_decay);
                    ema.update(params, cfg.ema_decay);
                }
                opt_step++;
                micro_in_group = 0;
                for (auto* p : params) p->zero_grad();
            }
        }

        MetricsReport rep = validate();
        EpochStats es;
        es.epoch = epoch;
        es.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        es.lr = last_lr;
        es.val_auc = rep.macro_auc;
        es.val_f1opt = rep.macro_f1opt;
        es.val_f1_fixed = rep.macro_f1_fixed;
        result.history.push_back(es);
        hist << format_csv_row(es) << "\n";
        hist.flush();
        if (!job.quiet)
            std::cout << "epoch " << epoch << " loss " << es.train_loss << " val_auc "
                      << es.val_auc << "\n";

        const bool improved = result.best_epoch < 0 || rep.macro_auc > result.best_auc;
        result.early_stopped = stopper.update(epoch, rep.macro_auc);
        if (improved) {
            result.best_auc = rep.macro_auc;
            result.best_epoch = epoch;
            result.best_checkpoint = (fs::path(job.out_dir) / "best.ckpt").string();
            ema.swap_into(params);  // best checkpoint holds the evaluated EMA weights
            save_checkpoint(result.best_checkpoint, model,
                            {{"run_header", cfg.to_text() + "best_epoch=" +
                                                std::to_string(epoch) + "\n"}});
            ema.swap_into(params);
        }

        result.last_checkpoint = (fs::path(job.out_dir) / "last.ckpt").string();
        save_checkpoint(result.last_checkpoint, model, {{"run_header", cfg.to_text()}});
        if (result.early_stopped) break;
    }
    return result;
}

}  // namespace cliffm
