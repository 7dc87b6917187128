#pragma once

#include <optional>
#include <vector>

#include "cliffm/tensor.hpp"

namespace cliffm {

struct BinaryAuc {
    bool degenerate = false;  // no positives or no negatives
    double auc = 0.0;
    i64 positives = 0;
    i64 negatives = 0;
};

// One-vs-rest ranking AUC by the rank (Mann-Whitney) method; ties contribute
// half weight.
BinaryAuc binary_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct F1Stats {
    i64 tp = 0, fp = 0, fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Predict positive iff score >= threshold. Zero-denominator convention: a
// precision/recall/F1 with an empty denominator is 0.
F1Stats f1_at(const std::vector<double>& scores, const std::vector<int>& labels,
              double threshold);

// The 16-point threshold grid {0.10, 0.15, ..., 0.85}.
std::vector<double> f1opt_grid();

struct ClassMetrics {
    std::optional<double> auc;  // absent if degenerate
    double best_threshold = 0.0;
    double best_f1 = 0.0;
    double f1_at_half = 0.0;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_auc = 0.0;
    double macro_f1opt = 0.0;
    double macro_f1_fixed = 0.0;  // threshold 0.5
    int degenerate_classes = 0;
};

// scores: B x C in [0,1]; labels: B x C in {0,1}. Macro values average the
// non-degenerate classes; throws if every class is degenerate.
MetricsReport evaluate_multilabel(const TensorD& scores, const TensorD& labels);

double macro_auc(const TensorD& scores, const TensorD& labels);

}  // namespace cliffm
