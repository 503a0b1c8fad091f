#pragma once

#include <string>
#include <vector>

#include "dynconv/tensor.hpp"

namespace dynconv {

class Model;

// Per-class true/false positives and false negatives over pixel label maps.
struct ConfusionCounts {
    i64 num_classes = 0;
    std::vector<i64> tp, fp, fn;

    explicit ConfusionCounts(i64 c) : num_classes(c), tp(c, 0), fp(c, 0), fn(c, 0) {}
    void add(const std::vector<i64>& pred, const std::vector<i64>& gt);
};

struct FoldResult {
    i64 fold_index = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct KfoldStats {
    double mean = 0.0;
    double std_dev = 0.0;  // population (divide by n)
};

struct FlopEntry {
    std::string layer;
    std::string category;  // convolution | attention-generator | dense | other
    i64 flops = 0;
};

struct FlopReport {
    std::vector<FlopEntry> entries;

    void add(std::string layer, std::string category, i64 flops) {
        entries.push_back({std::move(layer), std::move(category), flops});
    }
    i64 total() const;
    i64 by_category(const std::string& category) const;
};

// Fraction of exact matches; errors on empty input.
double accuracy(const std::vector<i64>& predictions, const std::vector<i64>& labels);

// 1/C * sum_c TP/(TP+FP+FN); classes absent from both masks count as IoU 1.
double miou(const std::vector<i64>& pred_mask, const std::vector<i64>& gt_mask, i64 num_classes);
double miou_from_counts(const ConfusionCounts& counts);

// Mean and POPULATION standard deviation over fold accuracies.
KfoldStats kfold_stats(const std::vector<FoldResult>& folds);

// One multiply-accumulate counts as 2 FLOPs; bias ignored.
i64 flops_conv2d(i64 cin, i64 cout, i64 kh, i64 kw, i64 hout, i64 wout);
i64 flops_conv1d(i64 cin, i64 cout, i64 k, i64 lout);
i64 flops_dense(i64 din, i64 dout);

FlopReport flops_model(const Model& model);

}  // namespace dynconv
