#include "cliffm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cliffm {

BinaryAuc binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ConfigError("binary_auc: need equal-length non-empty score/label vectors");
    BinaryAuc r;
    for (int l : labels) (l != 0 ? r.positives : r.negatives)++;
    if (r.positives == 0 || r.negatives == 0) {
        r.degenerate = true;
        return r;
    }
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups; rank sums stay exact half-integers.
    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] != 0) pos_rank_sum += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(r.positives);
    const double nn = static_cast<double>(r.negatives);
    r.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
    return r;
}

F1Stats f1_at(const std::vector<double>& scores, const std::vector<int>& labels,
              double threshold) {
    if (scores.size() != labels.size())
        throw ConfigError("f1_at: score/label length mismatch");
    F1Stats s;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool pos = labels[i] != 0;
        if (pred && pos)
            s.tp++;
        else if (pred && !pos)
            s.fp++;
        else if (!pred && pos)
            s.fn++;
    }
    s.precision = (s.tp + s.fp) > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp)
                                    : 0.0;
    s.recall =
        (s.tp + s.fn) > 0 ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
}

std::vector<double> f1opt_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 15; ++i) g.push_back(static_cast<double>(10 + 5 * i) / 100.0);
    return g;
}

MetricsReport evaluate_multilabel(const TensorD& scores, const TensorD& labels) {
    if (scores.rank() != 2 || !scores.same_shape(labels))
        throw ConfigError("evaluate_multilabel: B x C score/label tensors required");
    if (!scores.all_finite()) throw NumericError("evaluate_multilabel: non-finite scores");
    const i64 B = scores.dim(0), C = scores.dim(1);
    if (B < 1) throw ConfigError("evaluate_multilabel: empty batch");

    MetricsReport rep;
    const auto grid = f1opt_grid();
    double auc_sum = 0.0, f1opt_sum = 0.0, f1fixed_sum = 0.0;
    int live = 0;
    for (i64 c = 0; c < C; ++c) {
        std::vector<double> sc(static_cast<size_t>(B));
        std::vector<int> lb(static_cast<size_t>(B));
        for (i64 b = 0; b < B; ++b) {
            sc[static_cast<size_t>(b)] = scores.at(b, c);
            lb[static_cast<size_t>(b)] = labels.at(b, c) != 0.0 ? 1 : 0;
        }
        ClassMetrics cm;
        BinaryAuc auc = binary_auc(sc, lb);
        double best_f1 = -1.0, best_t = grid.front();
        for (double t : grid) {
            const double f1 = f1_at(sc, lb, t).f1;
            if (f1 > best_f1) {  // strict: ties keep the lowest threshold
                best_f1 = f1;
                best_t = t;
            }
        }
        cm.best_threshold = best_t;
        cm.best_f1 = best_f1;
        cm.f1_at_half = f1_at(sc, lb, 0.5).f1;
        if (auc.degenerate) {
            rep.degenerate_classes++;
        } else {
            cm.auc = auc.auc;
            auc_sum += auc.auc;
            f1opt_sum += cm.best_f1;
            f1fixed_sum += cm.f1_at_half;
            live++;
        }
        rep.per_class.push_back(cm);
    }
    if (live == 0) throw ConfigError("evaluate_multilabel: every class is degenerate");
    rep.macro_auc = auc_sum / live;
    rep.macro_f1opt = f1opt_sum / live;
    rep.macro_f1_fixed = f1fixed_sum / live;
    return rep;
}

double macro_auc(const TensorD& scores, const TensorD& labels) {
    return evaluate_multilabel(scores, labels).macro_auc;
}

}  // namespace cliffm
