#include "dynconv/metrics.hpp"

#include <cmath>

#include "dynconv/model.hpp"

namespace dynconv {

void ConfusionCounts::add(const std::vector<i64>& pred, const std::vector<i64>& gt) {
    if (pred.size() != gt.size())
        throw DimensionError("confusion counts: pred size " + std::to_string(pred.size()) +
                             " != gt size " + std::to_string(gt.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const i64 p = pred[i], g = gt[i];
        if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
            throw ValidationError("confusion counts: label outside [0," + std::to_string(num_classes) +
                                  ") at index " + std::to_string(i));
        if (p == g) {
            tp[static_cast<std::size_t>(p)] += 1;
        } else {
            fp[static_cast<std::size_t>(p)] += 1;
            fn[static_cast<std::size_t>(g)] += 1;
        }
    }
}

double accuracy(const std::vector<i64>& predictions, const std::vector<i64>& labels) {
    if (predictions.empty()) throw ValidationError("accuracy: empty input");
    if (predictions.size() != labels.size())
        throw DimensionError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(labels.size()) + " labels");
    i64 hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double miou_from_counts(const ConfusionCounts& counts) {
    double sum = 0.0;
    for (i64 c = 0; c < counts.num_classes; ++c) {
        const auto i = static_cast<std::size_t>(c);
        const i64 denom = counts.tp[i] + counts.fp[i] + counts.fn[i];
        // A class absent from both masks was handled perfectly.
        sum += denom == 0 ? 1.0 : static_cast<double>(counts.tp[i]) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(counts.num_classes);
}

double miou(const std::vector<i64>& pred_mask, const std::vector<i64>& gt_mask, i64 num_classes) {
    ConfusionCounts counts(num_classes);
    counts.add(pred_mask, gt_mask);
    return miou_from_counts(counts);
}

KfoldStats kfold_stats(const std::vector<FoldResult>& folds) {
    if (folds.size() < 2) throw ValidationError("kfold_stats: need at least 2 folds");
    const double n = static_cast<double>(folds.size());
    double mean = 0.0;
    for (const auto& f : folds) mean += f.accuracy;
    mean /= n;
    double var = 0.0;
    for (const auto& f : folds) var += (f.accuracy - mean) * (f.accuracy - mean);
    return {mean, std::sqrt(var / n)};
}

i64 FlopReport::total() const {
    i64 t = 0;
    for (const auto& e : entries) t += e.flops;
    return t;
}

i64 FlopReport::by_category(const std::string& category) const {
    i64 t = 0;
    for (const auto& e : entries)
        if (e.category == category) t += e.flops;
    return t;
}

i64 flops_conv2d(i64 cin, i64 cout, i64 kh, i64 kw, i64 hout, i64 wout) {
    return 2 * cout * cin * kh * kw * hout * wout;
}

i64 flops_conv1d(i64 cin, i64 cout, i64 k, i64 lout) { return 2 * cout * cin * k * lout; }

i64 flops_dense(i64 din, i64 dout) { return 2 * din * dout; }

FlopReport flops_model(const Model& model) {
    FlopReport report;
    for (const auto& layer : model.layers()) layer->add_flops(report);
    return report;
}

}  // namespace dynconv
