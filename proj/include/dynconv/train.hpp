#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dynconv/model.hpp"

namespace dynconv {

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// One in-memory split. For segment tasks, masks holds N*H*W pixel labels in
// row-major order; otherwise labels holds N class indices.
struct LabeledData {
    Tensor inputs;  // [N, ...] in the model's input layout
    std::vector<i64> labels;
    std::vector<i64> masks;

    bool is_segment() const { return !masks.empty(); }
    i64 size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

struct TrainConfig {
    double learning_rate = 0.001;
    i64 batch_size = 32;
    i64 epochs = 30;
    double dropout = 0.2;
    std::uint64_t seed = 0;

    // Stop once eval-mode train accuracy reaches this value (0 disables);
    // not part of the standard configuration, used by sanity harnesses.
    double stop_at_train_accuracy = 0.0;
    // Write best-metric checkpoints here when non-empty.
    std::string checkpoint_dir;
    // Runs after each epoch's callbacks (attention dumps and the like); must
    // not consume the training rng.
    std::function<void(Model&, const struct EpochLog&)> epoch_hook;

    void validate() const {
        if (learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("dropout must be in [0,1)");
    }
};

// Bias-corrected Adam moments; beta/epsilon are the canonical defaults.
struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    i64 t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<Param*>& params);
};

// One step over all non-frozen params; grads are read from Param::grad.
// Aborts with the parameter name on a non-finite gradient.
void adam_step(std::vector<Param*>& params, OptimizerState& state, double lr);

// Plateau/early-stop bookkeeping, both monitoring validation loss with strict
// improvement; checkpointing monitors the validation metric.
struct CallbackState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    double best_val_metric = -std::numeric_limits<double>::infinity();
    i64 epochs_since_improve_lr = 0;
    i64 epochs_since_improve_stop = 0;
    double current_lr = 0.001;

    double lr_factor = 0.1;
    i64 lr_patience = 5;
    double min_lr = 1e-6;
    i64 stop_patience = 10;
};

// lr <- max(lr*factor, min_lr) after `lr_patience` epochs without improvement.
double reduce_lr_on_plateau(CallbackState& state, double val_loss);

// True once `stop_patience` epochs pass without improvement.
bool early_stopping(CallbackState& state, double val_loss);

// Saves when val_metric strictly exceeds the best seen; returns the filename.
// I/O failures emit a warning and training continues.
std::optional<std::string> checkpoint_best(Model& model, CallbackState& state, double val_metric,
                                           i64 epoch, const std::string& dir);

struct EpochLog {
    i64 epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;  // running, classify/timeseries only
    double val_loss = 0.0;
    double val_metric = 0.0;  // accuracy or mIoU by task
    double lr = 0.0;          // rate used during this epoch
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    double best_val_metric = 0.0;
    i64 best_epoch = 0;
    double final_train_metric = 0.0;  // eval-mode pass at the end
    std::vector<std::string> checkpoints;
    bool stopped_early = false;
};

// Loss + gradient for a model output under the task's cross-entropy.
std::pair<double, Tensor> task_loss(const Tensor& output, const LabeledData& data,
                                    const std::vector<i64>& batch_index);

// Eval-mode loss and metric over a whole split.
std::pair<double, double> evaluate(Model& model, const LabeledData& data, i64 batch_size);

TrainingLog train(Model& model, const LabeledData& train_data, const LabeledData& val_data,
                  const TrainConfig& config);

// Argmax class per row of [N,C] logits.
std::vector<i64> argmax_rows(const Tensor& logits);

// [N,C,H,W] logits to [N*H*W, C] rows and back (segment loss plumbing).
Tensor pixel_logits_to_rows(const Tensor& output);
Tensor rows_grad_to_pixel(const Tensor& grad_rows, const Shape& output_shape);

}  // namespace dynconv
