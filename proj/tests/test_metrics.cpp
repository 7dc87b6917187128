#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cliffm/metrics.hpp"
#include "cliffm/rng.hpp"

using namespace cliffm;

namespace {

// Brute-force pairwise AUC: P(score+ > score-) + 0.5 P(tie).
double auc_bruteforce(const std::vector<double>& s, const std::vector<int>& l) {
    double wins = 0.0;
    i64 np = 0, nn = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (l[i] == 0) continue;
        np++;
        for (size_t j = 0; j < s.size(); ++j) {
            if (l[j] != 0) continue;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) wins += 0.5;
        }
    }
    for (int x : l) nn += (x == 0);
    return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

// Exhaustive enumeration over the grid, independent of f1opt internals.
std::pair<double, double> f1opt_bruteforce(const std::vector<double>& s,
                                           const std::vector<int>& l) {
    double best_f1 = -1.0, best_t = 0.0;
    for (int i = 0; i <= 15; ++i) {
        const double t = static_cast<double>(10 + 5 * i) / 100.0;
        i64 tp = 0, fp = 0, fn = 0;
        for (size_t k = 0; k < s.size(); ++k) {
            const bool pred = s[k] >= t;
            if (pred && l[k]) tp++;
            else if (pred && !l[k]) fp++;
            else if (!pred && l[k]) fn++;
        }
        const double p = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double r = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_t = t;
        }
    }
    return {best_t, best_f1};
}

}  // namespace

TEST_CASE("binary AUC: separable, mixed, degenerate") {
    CHECK(binary_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}).auc == 1.0);
    CHECK(binary_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}).auc == 0.75);
    CHECK(binary_auc({0.9, 0.8}, {1, 1}).degenerate);
    CHECK(binary_auc({0.9, 0.8}, {0, 0}).degenerate);
}

TEST_CASE("AUC handles ties as half-weight") {
    CHECK(binary_auc({0.5, 0.5}, {1, 0}).auc == 0.5);
    CHECK(binary_auc({0.7, 0.5, 0.5, 0.2}, {1, 1, 0, 0}).auc ==
          auc_bruteforce({0.7, 0.5, 0.5, 0.2}, {1, 1, 0, 0}));
}

TEST_CASE("AUC equals brute-force counting exactly over 200 random instances") {
    Rng rng(777);
    for (int it = 0; it < 200; ++it) {
        const size_t n = 5 + rng.below(60);
        std::vector<double> s(n);
        std::vector<int> l(n);
        bool has_pos = false, has_neg = false;
        for (size_t i = 0; i < n; ++i) {
            // quantized scores force plenty of ties
            s[i] = static_cast<double>(rng.below(12)) / 11.0;
            l[i] = rng.below(2) ? 1 : 0;
            (l[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        CHECK(binary_auc(s, l).auc == auc_bruteforce(s, l));
    }
}

TEST_CASE("AUC invariant under strictly monotone score transforms") {
    Rng rng(779);
    for (int it = 0; it < 30; ++it) {
        const size_t n = 20;
        std::vector<double> s(n), s_affine(n), s_logit(n);
        std::vector<int> l(n);
        for (size_t i = 0; i < n; ++i) {
            s[i] = 0.05 + 0.9 * rng.uniform();
            l[i] = rng.below(2) ? 1 : 0;
            s_affine[i] = 3.0 * s[i] + 2.0;
            s_logit[i] = std::log(s[i] / (1.0 - s[i]));
        }
        auto base = binary_auc(s, l);
        if (base.degenerate) continue;
        CHECK(binary_auc(s_affine, l).auc == doctest::Approx(base.auc).epsilon(1e-15));
        CHECK(binary_auc(s_logit, l).auc == doctest::Approx(base.auc).epsilon(1e-15));
    }
}

TEST_CASE("metrics are permutation-invariant over samples") {
    Rng rng(781);
    const i64 B = 40, C = 3;
    TensorD scores({B, C}), labels({B, C});
    for (i64 i = 0; i < B * C; ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.below(2);
    }
    MetricsReport a = evaluate_multilabel(scores, labels);
    std::vector<i64> perm(B);
    for (i64 i = 0; i < B; ++i) perm[static_cast<size_t>(i)] = i;
    for (i64 i = B; i > 1; --i)
        std::swap(perm[static_cast<size_t>(i - 1)], perm[rng.below(static_cast<u64>(i))]);
    TensorD s2({B, C}), l2({B, C});
    for (i64 i = 0; i < B; ++i)
        for (i64 c = 0; c < C; ++c) {
            s2.at(i, c) = scores.at(perm[static_cast<size_t>(i)], c);
            l2.at(i, c) = labels.at(perm[static_cast<size_t>(i)], c);
        }
    MetricsReport b = evaluate_multilabel(s2, l2);
    CHECK(a.macro_auc == b.macro_auc);
    CHECK(a.macro_f1opt == b.macro_f1opt);
}

TEST_CASE("macro AUC aggregation") {
    // classes with AUC 1.0 and 0.5 -> 0.75
    TensorD scores({4, 2}), labels({4, 2});
    const double s0[4] = {0.9, 0.8, 0.3, 0.1};
    const int l0[4] = {1, 1, 0, 0};
    const double s1[4] = {0.5, 0.5, 0.5, 0.5};
    const int l1[4] = {1, 0, 1, 0};
    for (i64 i = 0; i < 4; ++i) {
        scores.at(i, 0) = s0[i];
        labels.at(i, 0) = l0[i];
        scores.at(i, 1) = s1[i];
        labels.at(i, 1) = l1[i];
    }
    CHECK(macro_auc(scores, labels) == doctest::Approx(0.75));

    // degenerate classes are excluded from the macro mean
    TensorD l_deg = labels;
    for (i64 i = 0; i < 4; ++i) l_deg.at(i, 1) = 1.0;
    MetricsReport rep = evaluate_multilabel(scores, l_deg);
    CHECK(rep.degenerate_classes == 1);
    CHECK(rep.macro_auc == 1.0);
    CHECK_FALSE(rep.per_class[1].auc.has_value());

    TensorD all_deg({2, 1}), all_lab({2, 1});
    all_lab.at(0, 0) = all_lab.at(1, 0) = 1.0;
    CHECK_THROWS_AS(evaluate_multilabel(all_deg, all_lab), ConfigError);
}

TEST_CASE("f1_at known confusion matrices") {
    // perfect predictions
    CHECK(f1_at({0.9, 0.9, 0.1, 0.1}, {1, 1, 0, 0}, 0.5).f1 == 1.0);
    // all-negative predictions with positives present
    CHECK(f1_at({0.1, 0.1, 0.1}, {1, 1, 0}, 0.5).f1 == 0.0);
    // hand-computed case: preds (0,1,1,1) at t=0.40
    F1Stats s = f1_at({0.2, 0.4, 0.6, 0.8}, {0, 0, 1, 1}, 0.40);
    CHECK(s.tp == 2);
    CHECK(s.fp == 1);
    CHECK(s.fn == 0);
    CHECK(s.f1 == doctest::Approx(0.8));
    // empty confusion: zero by convention
    CHECK(f1_at({0.1, 0.2}, {0, 0}, 0.5).f1 == 0.0);
}

TEST_CASE("threshold rule is >= (ties count as positive)") {
    F1Stats s = f1_at({0.5, 0.4}, {1, 0}, 0.5);
    CHECK(s.tp == 1);
    CHECK(s.fp == 0);
}

TEST_CASE("f1opt grid shape and known optima") {
    const auto grid = f1opt_grid();
    REQUIRE(grid.size() == 16);
    CHECK(grid.front() == doctest::Approx(0.10));
    CHECK(grid.back() == doctest::Approx(0.85));
    for (size_t i = 1; i < grid.size(); ++i)
        CHECK(grid[i] - grid[i - 1] == doctest::Approx(0.05));

    // best F1 = 1.0 first achieved at grid point 0.45 under the >= rule
    TensorD scores({4, 1}), labels({4, 1});
    const double s0[4] = {0.2, 0.4, 0.6, 0.8};
    const int l0[4] = {0, 0, 1, 1};
    for (i64 i = 0; i < 4; ++i) {
        scores.at(i, 0) = s0[i];
        labels.at(i, 0) = l0[i];
    }
    MetricsReport rep = evaluate_multilabel(scores, labels);
    CHECK(rep.per_class[0].best_f1 == 1.0);
    CHECK(rep.per_class[0].best_threshold == doctest::Approx(0.45));
}

TEST_CASE("constant-score batch optimum matches the closed form") {
    // all scores 0.5: thresholds <= 0.5 predict everything positive,
    // so best F1 = 2p/(p+B) with p positives out of B.
    const i64 B = 10;
    TensorD scores({B, 1}), labels({B, 1});
    i64 pos = 0;
    Rng rng(31);
    for (i64 i = 0; i < B; ++i) {
        scores.at(i, 0) = 0.5;
        labels.at(i, 0) = rng.below(2);
        pos += labels.at(i, 0) != 0.0;
    }
    if (pos > 0 && pos < B) {
        MetricsReport rep = evaluate_multilabel(scores, labels);
        const double expected = 2.0 * static_cast<double>(pos) / static_cast<double>(pos + B);
        CHECK(rep.per_class[0].best_f1 == doctest::Approx(expected).epsilon(1e-15));
        std::vector<double> s(static_cast<size_t>(B), 0.5);
        std::vector<int> l(static_cast<size_t>(B));
        for (i64 i = 0; i < B; ++i) l[static_cast<size_t>(i)] = labels.at(i, 0) != 0.0;
        CHECK(rep.per_class[0].best_f1 == f1opt_bruteforce(s, l).second);
    }
}

TEST_CASE("f1opt equals exhaustive enumeration exactly over 200 random instances") {
    Rng rng(787);
    int checked = 0;
    while (checked < 200) {
        const size_t n = 6 + rng.below(50);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.below(21)) / 20.0;  // hits grid points exactly
            l[i] = rng.below(2) ? 1 : 0;
        }
        TensorD scores({static_cast<i64>(n), 1}), labels({static_cast<i64>(n), 1});
        for (size_t i = 0; i < n; ++i) {
            scores.at(static_cast<i64>(i), 0) = s[i];
            labels.at(static_cast<i64>(i), 0) = l[i];
        }
        bool pos = false, neg = false;
        for (int x : l) (x ? pos : neg) = true;
        if (!pos || !neg) continue;
        MetricsReport rep = evaluate_multilabel(scores, labels);
        const auto [bt, bf] = f1opt_bruteforce(s, l);
        CHECK(rep.per_class[0].best_f1 == bf);
        CHECK(rep.per_class[0].best_threshold == bt);
        checked++;
    }
}

TEST_CASE("macro F1opt dominates fixed-threshold macro F1 at 0.5") {
    Rng rng(791);
    for (int it = 0; it < 50; ++it) {
        const i64 B = 30, C = 4;
        TensorD scores({B, C}), labels({B, C});
        for (i64 i = 0; i < B * C; ++i) {
            scores[i] = rng.uniform();
            labels[i] = rng.below(2);
        }
        MetricsReport rep = evaluate_multilabel(scores, labels);
        CHECK(rep.macro_f1opt >= rep.macro_f1_fixed);
        for (const auto& cm : rep.per_class) CHECK(cm.best_f1 >= cm.f1_at_half);
    }
}
