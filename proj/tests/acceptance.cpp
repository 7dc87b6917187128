// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Run via ctest or directly; artifacts land in a temp directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>

#include "cliffm/bench.hpp"
#include "cliffm/gradcheck_suites.hpp"
#include "cliffm/metrics.hpp"
#include "cliffm/profile.hpp"
#include "cliffm/synth.hpp"
#include "cliffm/trainer.hpp"

using namespace cliffm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) g_failures++;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TensorD rand_t(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(s));
    for (auto& v : t.v) v = rng.uniform(lo, hi);
    return t;
}

// --------------------------------------------------------------------------

void criterion_1_params() {
    char detail[256];
    ModelConfig cfg;
    Profile p = count_params(cfg);
    ModelConfig noe = cfg;
    noe.use_energy = false;
    Profile q = count_params(noe);
    bool pass = p.total_params >= 839115 && p.total_params <= 864678;   // 851900 +/- 1.5%
    pass = pass && q.total_params >= 803600 && q.total_params <= 836400;  // 820000 +/- 2%
    std::printf("  per-component params:");
    for (const auto& it : p.items)
        std::printf(" %s=%lld", it.component.c_str(), static_cast<long long>(it.params));
    std::printf("\n");
    std::snprintf(detail, sizeof(detail),
                  "total=%lld (target 851900 +/-1.5%%), noEnergy=%lld (target 820000 +/-2%%)",
                  static_cast<long long>(p.total_params),
                  static_cast<long long>(q.total_params));
    report(1, "parameter budget", pass, detail);
}

void criterion_2_flops() {
    char detail[256];
    ModelConfig cfg;
    Profile p = count_flops(cfg, 448);
    const i64 stem_conv = stem_conv_flops(cfg, 448);
    bool pass = stem_conv == 708083712;
    pass = pass && static_cast<double>(p.total_flops) >= 3.327e9 * 0.85 &&
           static_cast<double>(p.total_flops) <= 3.327e9 * 1.15;
    std::snprintf(detail, sizeof(detail),
                  "stem7x7=%lld (exact target 708083712), total=%.4f G (target 3.327 +/-15%%)",
                  static_cast<long long>(stem_conv), p.total_flops / 1e9);
    report(2, "FLOP budget", pass, detail);
}

void criterion_3_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    bool pass = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& r : gradcheck_ops(42)) {
        pass = pass && r.pass;
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.op;
        }
    }
    for (const auto& r : gradcheck_blocks(42)) {
        pass = pass && r.pass;
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_name = r.op;
        }
    }
    GradCheckReport m = gradcheck_model(42);
    pass = pass && m.pass;
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "ops+blocks worst=%.2e (%s), tiny model=%.2e (tol 1e-4), %.0f s", worst,
                  worst_name.c_str(), m.max_rel_err, seconds_since(t0));
    report(3, "gradient correctness", pass && seconds_since(t0) < 300.0, detail);
}

void criterion_4_algebra() {
    bool pass = true;
    double worst_anti = 0.0;
    Rng rng(2024);
    for (int it = 0; it < 100; ++it) {
        const i64 D = 8;
        TensorD a = rand_t({1, D, 3, 3}, rng, -2.0, 2.0);
        TensorD c = rand_t({1, D, 3, 3}, rng, -2.0, 2.0);
        for (i64 s : shift_set(D)) {
            TensorD ra = channel_roll_fwd(a, s), rc = channel_roll_fwd(c, s);
            for (i64 i = 0; i < a.numel(); ++i) {
                const double w_ac = a[i] * rc[i] - c[i] * ra[i];
                const double w_ca = c[i] * ra[i] - a[i] * rc[i];
                worst_anti = std::max(worst_anti, std::abs(w_ac + w_ca));
                worst_anti = std::max(worst_anti, std::abs(a[i] * ra[i] - a[i] * ra[i]));
            }
        }
    }
    pass = pass && worst_anti <= 1e-15;

    // tiny-instance scalar-loop equivalence (independent reference, 1e-12)
    double worst_eq = 0.0;
    {
        const i64 D = 8;
        const auto shifts = shift_set(D);
        TensorD u = rand_t({2, D, 2, 2}, rng), v = rand_t({2, D, 2, 2}, rng);
        TensorD pre = rolling_pre_fused(u, v, shifts);
        const i64 ns = static_cast<i64>(shifts.size());
        for (i64 b = 0; b < 2; ++b)
            for (i64 si = 0; si < ns; ++si)
                for (i64 c = 0; c < D; ++c)
                    for (i64 p = 0; p < 4; ++p) {
                        const i64 s = shifts[static_cast<size_t>(si)];
                        const i64 src = (c - s + D) % D;
                        const double uc = u.at(b, c, p / 2, p % 2);
                        const double Cc = v.at(b, c, p / 2, p % 2) - uc;
                        const double Cr =
                            v.at(b, src, p / 2, p % 2) - u.at(b, src, p / 2, p % 2);
                        const double ur = u.at(b, src, p / 2, p % 2);
                        const double wedge = uc * Cr - Cc * ur;
                        const double prod = uc * Cr;
                        const double inner =
                            prod * (prod >= 0 ? 1.0 / (1.0 + std::exp(-prod))
                                              : std::exp(prod) / (1.0 + std::exp(prod)));
                        worst_eq = std::max(
                            worst_eq, std::abs(pre.at(b, 2 * si * D + c, p / 2, p % 2) - wedge));
                        worst_eq = std::max(
                            worst_eq,
                            std::abs(pre.at(b, (2 * si + 1) * D + c, p / 2, p % 2) - inner));
                    }
        pass = pass && worst_eq < 1e-12;
    }

    // blocks are exact identities at zero layer scale
    bool identity = true;
    {
        Rng init(7);
        const i64 D = 8;
        auto cross = make_cross_block<double>(D, init);
        auto self = make_self_block<double>(D, init, 0.0);
        auto energy = make_energy<double>(D, init, 0.0);
        std::fill(cross.fusion.layer_scale.value.v.begin(),
                  cross.fusion.layer_scale.value.v.end(), 0.0);
        std::fill(self.fusion.layer_scale.value.v.begin(),
                  self.fusion.layer_scale.value.v.end(), 0.0);
        std::fill(energy.layer_scale.value.v.begin(), energy.layer_scale.value.v.end(), 0.0);
        TensorD xh = rand_t({2, D, 4, 4}, rng), xl = rand_t({2, D, 4, 4}, rng);
        TensorD low = rand_t({2, D, 2, 2}, rng);
        Tape<double> t(false);
        Rng r;
        identity = identity &&
                   t.val(cross_block_forward(t, t.constant(xh), t.constant(xl), cross, r,
                                             Mode::Eval)).v == xh.v;
        identity = identity &&
                   t.val(self_block_forward(t, t.constant(xh), self, r, Mode::Eval)).v == xh.v;
        identity = identity && t.val(energy_gffn_forward(t, t.constant(xh), t.constant(low),
                                                         energy, r, Mode::Eval)).v == xh.v;
    }
    pass = pass && identity;

    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "antisymmetry<=%.1e (100 instances), scalar equivalence<=%.1e, "
                  "identities at zero scale: %s",
                  worst_anti, worst_eq, identity ? "exact" : "BROKEN");
    report(4, "rolling-product algebra", pass, detail);
}

void criterion_5_metric_oracles() {
    bool pass = true;
    Rng rng(555);
    // AUC vs pairwise brute force, exact, >= 200 instances
    int auc_checked = 0;
    while (auc_checked < 200) {
        const size_t n = 5 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> l(n);
        bool hp = false, hn = false;
        for (size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(12)) / 11.0;
            l[i] = rng.below(2) ? 1 : 0;
            (l[i] ? hp : hn) = true;
        }
        if (!hp || !hn) continue;
        double wins = 0.0;
        i64 np = 0, nn = 0;
        for (size_t i = 0; i < n; ++i) {
            if (!l[i]) continue;
            np++;
            for (size_t j = 0; j < n; ++j) {
                if (l[j]) continue;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
        }
        nn = static_cast<i64>(n) - np;
        const double brute = wins / (static_cast<double>(np) * static_cast<double>(nn));
        pass = pass && binary_auc(s, l).auc == brute;
        auc_checked++;
    }
    // worked AUC example
    pass = pass && binary_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}).auc == 0.75;

    // F1opt vs exhaustive enumeration, exact, >= 200 instances
    int f1_checked = 0;
    while (f1_checked < 200) {
        const size_t n = 6 + rng.below(50);
        std::vector<double> s(n);
        std::vector<int> l(n);
        bool hp = false, hn = false;
        for (size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(21)) / 20.0;
            l[i] = rng.below(2) ? 1 : 0;
            (l[i] ? hp : hn) = true;
        }
        if (!hp || !hn) continue;
        double best_f1 = -1.0, best_t = 0.0;
        for (int gi = 0; gi <= 15; ++gi) {
            const double t = static_cast<double>(10 + 5 * gi) / 100.0;
            i64 tp = 0, fp = 0, fn = 0;
            for (size_t k = 0; k < n; ++k) {
                const bool pred = s[k] >= t;
                if (pred && l[k]) tp++;
                else if (pred && !l[k]) fp++;
                else if (!pred && l[k]) fn++;
            }
            const double pr = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
            const double rc = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
            const double f1 = (pr + rc) > 0 ? 2.0 * pr * rc / (pr + rc) : 0.0;
            if (f1 > best_f1) {
                best_f1 = f1;
                best_t = t;
            }
        }
        TensorD sc({static_cast<i64>(n), 1}), lb({static_cast<i64>(n), 1});
        for (size_t i = 0; i < n; ++i) {
            sc.at(static_cast<i64>(i), 0) = s[i];
            lb.at(static_cast<i64>(i), 0) = l[i];
        }
        MetricsReport rep = evaluate_multilabel(sc, lb);
        pass = pass && rep.per_class[0].best_f1 == best_f1 &&
               rep.per_class[0].best_threshold == best_t;
        f1_checked++;
    }
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "AUC brute-force x%d exact, F1opt enumeration x%d exact, example 0.75 ok",
                  auc_checked, f1_checked);
    report(5, "metric oracles", pass, detail);
}

void criterion_6_protocol_units() {
    bool pass = true;
    // lr schedule landmarks
    pass = pass && lr_at(50, 1000, 100, 2e-4) == 1e-4;
    pass = pass && std::abs(lr_at(999, 1000, 100, 2e-4) - 1e-7) < 1e-18;
    // class weight cap
    {
        TensorD l({1000, 1});
        for (i64 i = 0; i < 50; ++i) l.at(i, 0) = 1.0;
        pass = pass && class_weights(l, 15.0)[0] == 15.0;
    }
    // smoothing fixed points
    {
        TensorD y({3, 1});
        y.at(0, 0) = 1.0;
        y.at(1, 0) = 0.0;
        y.at(2, 0) = 0.5;
        TensorD s = smooth_targets(y, 0.1);
        pass = pass && std::abs(s.at(0, 0) - 0.95) < 1e-15 &&
               std::abs(s.at(1, 0) - 0.05) < 1e-15 && std::abs(s.at(2, 0) - 0.5) < 1e-15;
    }
    // BCE closed form to 1e-9
    {
        Tape<double> t(false);
        TensorD z({1, 1});
        TensorD y({1, 1});
        y[0] = 0.95;
        TensorD w = TensorD::full({1}, 1.0);
        const double loss = t.val(weighted_bce(t, t.constant(z), y, w))[0];
        pass = pass && std::abs(loss - std::log(2.0)) < 1e-9;
    }
    // clipping bound
    {
        Param<double> a(TensorD::full({16}, 0.5));
        a.ensure_grad();
        Rng rng(8);
        for (auto& g : a.grad.v) g = rng.normal();
        std::vector<Param<double>*> ps{&a};
        clip_global_norm(ps, 0.5);
        double sq = 0.0;
        for (double g : a.grad.v) sq += g * g;
        pass = pass && std::sqrt(sq) <= 0.5 + 1e-9;
    }
    // EMA closed form to 1e-12
    {
        EmaState<double> ema;
        ema.shadow.push_back(TensorD::zeros({1}));
        Param<double> one(TensorD::full({1}, 1.0));
        std::vector<Param<double>*> ps{&one};
        bool ema_ok = true;
        for (int k = 1; k <= 40; ++k) {
            ema.update(ps, 0.9998);
            ema_ok = ema_ok && std::abs(ema.shadow[0][0] - (1.0 - std::pow(0.9998, k))) < 1e-12;
        }
        pass = pass && ema_ok;
    }
    // accumulation equivalence to 1e-10 (linear model, both routes)
    {
        Rng rng(17);
        const i64 B = 4, F = 6, C = 3;
        TensorD x({B, F}), y({B, C});
        for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
        for (auto& v : y.v) v = rng.below(2) ? 0.95 : 0.05;
        TensorD wc = TensorD::full({C}, 1.0);
        const auto make = [&](Param<double>& w, Param<double>& b) {
            Rng init(23);
            w = Param<double>(TensorD({C, F}), true);
            for (auto& v : w.value.v) v = init.uniform(-0.5, 0.5);
            b = Param<double>(TensorD::zeros({C}));
            w.ensure_grad();
            b.ensure_grad();
        };
        const auto loss_on = [&](Tape<double>& t, Param<double>& w, Param<double>& b, i64 lo,
                                 i64 hi) {
            TensorD xb({hi - lo, F}), yb({hi - lo, C});
            for (i64 i = lo; i < hi; ++i)
                for (i64 j = 0; j < F; ++j) xb.at(i - lo, j) = x.at(i, j);
            for (i64 i = lo; i < hi; ++i)
                for (i64 j = 0; j < C; ++j) yb.at(i - lo, j) = y.at(i, j);
            auto logits = linear(t, t.constant(xb), t.param(w),
                                 std::optional<Tape<double>::Var>(t.param(b)));
            return weighted_bce(t, logits, yb, wc);
        };
        Param<double> w1, b1, w2, b2;
        make(w1, b1);
        {
            Tape<double> t(true);
            t.backward(loss_on(t, w1, b1, 0, 4));
        }
        std::vector<Param<double>*> p1{&w1, &b1};
        AdamState<double> s1 = AdamState<double>::init(p1);
        clip_global_norm(p1, 0.5);
        adamw_step(p1, s1, 2e-4, 0.08);
        make(w2, b2);
        {
            Tape<double> t(true);
            t.backward(scale(t, loss_on(t, w2, b2, 0, 2), 0.5));
        }
        {
            Tape<double> t(true);
            t.backward(scale(t, loss_on(t, w2, b2, 2, 4), 0.5));
        }
        std::vector<Param<double>*> p2{&w2, &b2};
        AdamState<double> s2 = AdamState<double>::init(p2);
        clip_global_norm(p2, 0.5);
        adamw_step(p2, s2, 2e-4, 0.08);
        pass = pass && max_abs_diff(w1.value, w2.value) < 1e-10 &&
               max_abs_diff(b1.value, b2.value) < 1e-10;
    }
    report(6, "protocol unit values", pass,
           "lr landmarks, weight cap, smoothing, BCE log2, clip, EMA, accumulation");
}

void criterion_7_split_hygiene() {
    bool pass = true;
    Rng rng(99);
    int overlap_violations = 0, fraction_violations = 0;
    for (int m = 0; m < 1000; ++m) {
        const int patients = 20 + static_cast<int>(rng.below(80));
        std::vector<SampleRecord> recs;
        for (int p = 0; p < patients; ++p) {
            SampleRecord r;
            r.patient_id = "m" + std::to_string(m) + "p" + std::to_string(p);
            r.left_path = "x.png";
            if (rng.below(2)) r.right_path = "y.png";
            r.labels.assign(8, 0);
            r.labels[rng.below(8)] = 1;
            recs.push_back(r);
        }
        PatientSplit sp = patient_split(recs, 0.8, 1000 + static_cast<u64>(m));
        std::set<std::string> train(sp.train_ids.begin(), sp.train_ids.end());
        for (const auto& id : sp.val_ids)
            if (train.count(id)) overlap_violations++;

        // per-stratum counts within one patient of 80:20
        std::map<int, std::pair<int, int>> per_key;
        for (const auto& r : recs) {
            int key = 0;
            for (size_t i = 1; i < 8; ++i)
                if (r.labels[i] > r.labels[static_cast<size_t>(key)]) key = static_cast<int>(i);
            per_key[key].second++;
            if (train.count(r.patient_id)) per_key[key].first++;
        }
        for (const auto& [key, counts] : per_key) {
            if (counts.second == 1) continue;  // singleton rule: train + warn
            if (std::abs(counts.first - 0.8 * counts.second) > 1.0) fraction_violations++;
        }
    }
    pass = overlap_violations == 0 && fraction_violations == 0;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "1000 manifests: overlaps=%d, stratum fraction violations=%d",
                  overlap_violations, fraction_violations);
    report(7, "split hygiene", pass, detail);
}

void criterion_8_desk_training() {
    const std::string root = (fs::temp_directory_path() / "cliffm_acceptance").string();
    fs::remove_all(root);
    SynthSpec spec;
    spec.num_patients = 800;
    spec.image_size = 112;
    spec.seed = 1;
    SynthDataset ds = synth_generate(spec, root + "/data");

    // Full protocol with desk-scale schedule values: the published 200-epoch
    // settings (warmup 10, lr 2e-4, EMA 0.9998) target ~60k-step runs.
    RunConfig cfg;
    cfg.set("input_size", "112");
    cfg.set("dim", "32");
    cfg.set("num_self_blocks", "3");
    cfg.set("epochs", "8");  // must reach 0.90 within 30; crosses at epoch 4 here
    cfg.set("warmup_epochs", "1");
    cfg.set("batch_size", "16");
    cfg.set("accum_steps", "2");
    cfg.set("lr", "5e-4");
    cfg.set("ema_decay", "0.99");
    cfg.set("seed", "42");

    worker_threads() = 1;  // reference mode for both runs
    TrainJob job;
    job.cfg = cfg;
    job.records = parse_manifest(ds.manifest_path, 8);
    job.data_root = root + "/data";
    job.out_dir = root + "/run1";
    job.quiet = true;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r1 = train_model(job);
    const double train_minutes = seconds_since(t0) / 60.0;

    job.out_dir = root + "/run2";
    TrainResult r2 = train_model(job);

    const bool auc_ok = r1.best_auc >= 0.90;
    const bool time_ok = train_minutes <= 30.0;
    const bool identical = read_file_bytes(root + "/run1/history.csv") ==
                           read_file_bytes(root + "/run2/history.csv");
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "best val macro AUC=%.4f at epoch %d (>=0.90 within %d epochs), "
                  "first run %.1f min (<=30), same-seed reference-mode CSVs identical=%s",
                  r1.best_auc, r1.best_epoch, cfg.epochs, train_minutes,
                  identical ? "yes" : "NO");
    report(8, "desk-scale end-to-end", auc_ok && time_ok && identical, detail);
    fs::remove_all(root);
}

void criterion_9_bench_schema() {
    // Published accuracy/latency tables are hardware- and dataset-bound and
    // are NOT reproduced here: ODIR-5K AUC 0.8142 +/- 0.0105 and F1opt
    // 0.5481 +/- 0.0152, the RFMiD transfer numbers, and the 20.02 ms CPU
    // latency are reported by the profile/bench commands as context only.
    ModelConfig cfg;  // default 448 model
    BenchReport rep = run_bench(cfg, 3, 1, 7);
    const bool fields_ok = rep.mean_ms > 0 && rep.p90_ms >= rep.mean_ms * 0.5 &&
                           rep.throughput > 0 && rep.threads >= 1;
    char detail[256];
    std::snprintf(detail, sizeof(detail),
                  "kernel max|diff|=%.2e (<=1e-6), mean=%.1f ms p90=%.1f ms %.2f img/s "
                  "threads=%d (absolute latencies not asserted)",
                  rep.kernel_max_abs_diff, rep.mean_ms, rep.p90_ms, rep.throughput,
                  rep.threads);
    report(9, "bench equivalence + schema", rep.kernel_equivalent && fields_ok, detail);
}

}  // namespace

int main() {
    worker_threads() = 2;
    std::printf("acceptance suite\n");
    criterion_1_params();
    criterion_2_flops();
    criterion_3_gradients();
    criterion_4_algebra();
    criterion_5_metric_oracles();
    criterion_6_protocol_units();
    criterion_7_split_hygiene();
    criterion_8_desk_training();
    criterion_9_bench_schema();
    std::printf("%s\n", g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT");
    return g_failures == 0 ? 0 : 1;
}
