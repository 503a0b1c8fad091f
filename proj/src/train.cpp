#include "dynconv/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include "dynconv/checkpoint.hpp"
#include "dynconv/metrics.hpp"

namespace dynconv {

void OptimizerState::init(const std::vector<Param*>& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const Param* p : params) {
        m.emplace_back(p->value.shape());
        v.emplace_back(p->value.shape());
    }
}

void adam_step(std::vector<Param*>& params, OptimizerState& state, double lr) {
    if (state.m.size() != params.size()) state.init(params);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        if (p.frozen) continue;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (i64 j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad[j];
            if (!std::isfinite(g))
                throw TrainingError("adam_step: non-finite gradient in parameter '" + p.name +
                                    "' at flat index " + std::to_string(j));
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

double reduce_lr_on_plateau(CallbackState& state, double val_loss) {
    if (val_loss < state.best_val_loss) {
        state.epochs_since_improve_lr = 0;
    } else {
        state.epochs_since_improve_lr += 1;
        if (state.epochs_since_improve_lr >= state.lr_patience) {
            state.current_lr = std::max(state.current_lr * state.lr_factor, state.min_lr);
            state.epochs_since_improve_lr = 0;
        }
    }
    return state.current_lr;
}

bool early_stopping(CallbackState& state, double val_loss) {
    if (val_loss < state.best_val_loss) {
        state.epochs_since_improve_stop = 0;
    } else {
        state.epochs_since_improve_stop += 1;
    }
    return state.epochs_since_improve_stop >= state.stop_patience;
}

std::optional<std::string> checkpoint_best(Model& model, CallbackState& state, double val_metric,
                                           i64 epoch, const std::string& dir) {
    if (!(val_metric > state.best_val_metric)) return std::nullopt;
    state.best_val_metric = val_metric;
    char fname[64];
    std::snprintf(fname, sizeof(fname), "best_%02lld_%.3f.ckpt", static_cast<long long>(epoch),
                  val_metric);
    const std::string path = (std::filesystem::path(dir) / fname).string();
    try {
        save_checkpoint(model, path);
    } catch (const std::exception& e) {
        std::cerr << "warning: checkpoint write failed (" << e.what() << "), training continues\n";
        return std::nullopt;
    }
    return path;
}

std::vector<i64> argmax_rows(const Tensor& logits) {
    const i64 N = logits.dim(0), C = logits.dim(1);
    std::vector<i64> out(static_cast<std::size_t>(N));
    for (i64 n = 0; n < N; ++n) {
        const double* row = logits.data() + n * C;
        i64 best = 0;
        for (i64 c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<std::size_t>(n)] = best;
    }
    return out;
}

Tensor pixel_logits_to_rows(const Tensor& output) {
    const i64 N = output.dim(0), C = output.dim(1), H = output.dim(2), W = output.dim(3);
    Tensor rows({N * H * W, C});
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 h = 0; h < H; ++h)
                for (i64 w = 0; w < W; ++w) rows.at2((n * H + h) * W + w, c) = output.at4(n, c, h, w);
    return rows;
}

Tensor rows_grad_to_pixel(const Tensor& grad_rows, const Shape& output_shape) {
    const i64 N = output_shape[0], C = output_shape[1], H = output_shape[2], W = output_shape[3];
    Tensor out(output_shape);
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 h = 0; h < H; ++h)
                for (i64 w = 0; w < W; ++w) out.at4(n, c, h, w) = grad_rows.at2((n * H + h) * W + w, c);
    return out;
}

namespace {

i64 row_numel(const Tensor& t) { return t.numel() / t.dim(0); }

Tensor gather_rows(const Tensor& t, const std::vector<i64>& index) {
    Shape s = t.shape();
    s[0] = static_cast<i64>(index.size());
    Tensor out(s);
    const i64 row = row_numel(t);
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy(t.data() + index[i] * row, t.data() + (index[i] + 1) * row,
                  out.data() + static_cast<i64>(i) * row);
    return out;
}

}  // namespace

std::pair<double, Tensor> task_loss(const Tensor& output, const LabeledData& data,
                                    const std::vector<i64>& batch_index) {
    if (!data.is_segment()) {
        std::vector<i64> labels(batch_index.size());
        for (std::size_t i = 0; i < batch_index.size(); ++i)
            labels[i] = data.labels[static_cast<std::size_t>(batch_index[i])];
        return ops::softmax_xent(output, labels);
    }
    const i64 H = output.dim(2), W = output.dim(3);
    const i64 pixels = H * W;
    std::vector<i64> labels;
    labels.reserve(batch_index.size() * static_cast<std::size_t>(pixels));
    for (const i64 idx : batch_index)
        for (i64 p = 0; p < pixels; ++p)
            labels.push_back(data.masks[static_cast<std::size_t>(idx * pixels + p)]);
    auto [loss, grad_rows] = ops::softmax_xent(pixel_logits_to_rows(output), labels);
    return {loss, rows_grad_to_pixel(grad_rows, output.shape())};
}

std::pair<double, double> evaluate(Model& model, const LabeledData& data, i64 batch_size) {
    const i64 N = data.size();
    double loss_sum = 0.0;
    i64 loss_weight = 0;
    i64 hits = 0;
    ConfusionCounts counts(data.is_segment() ? model.spec().num_classes : 1);

    for (i64 start = 0; start < N; start += batch_size) {
        const i64 stop = std::min(N, start + batch_size);
        std::vector<i64> index(static_cast<std::size_t>(stop - start));
        std::iota(index.begin(), index.end(), start);
        ForwardCtx ctx;
        ctx.training = false;
        Tensor out = model.forward(gather_rows(data.inputs, index), ctx);
        auto [loss, grad] = task_loss(out, data, index);
        (void)grad;
        const i64 w = data.is_segment() ? (stop - start) * out.dim(2) * out.dim(3) : (stop - start);
        loss_sum += loss * static_cast<double>(w);
        loss_weight += w;
        if (data.is_segment()) {
            const auto pred = argmax_rows(pixel_logits_to_rows(out));
            const i64 pixels = out.dim(2) * out.dim(3);
            std::vector<i64> gt;
            gt.reserve(pred.size());
            for (const i64 idx : index)
                for (i64 p = 0; p < pixels; ++p) gt.push_back(data.masks[static_cast<std::size_t>(idx * pixels + p)]);
            counts.add(pred, gt);
        } else {
            const auto pred = argmax_rows(out);
            for (std::size_t i = 0; i < index.size(); ++i)
                if (pred[i] == data.labels[static_cast<std::size_t>(index[i])]) ++hits;
        }
    }

    const double mean_loss = loss_sum / static_cast<double>(loss_weight);
    const double metric = data.is_segment() ? miou_from_counts(counts)
                                            : static_cast<double>(hits) / static_cast<double>(N);
    return {mean_loss, metric};
}

TrainingLog train(Model& model, const LabeledData& train_data, const LabeledData& val_data,
                  const TrainConfig& config) {
    config.validate();
    if (train_data.size() == 0 || val_data.size() == 0)
        throw ValidationError("train: both splits must be non-empty");

    Prng rng(config.seed);
    auto params = model.params();
    OptimizerState opt;
    opt.init(params);
    CallbackState cb;
    cb.current_lr = config.learning_rate;

    TrainingLog log;
    std::vector<i64> order(static_cast<std::size_t>(train_data.size()));
    std::iota(order.begin(), order.end(), 0);

    for (i64 epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        const double epoch_lr = cb.current_lr;
        double loss_sum = 0.0;
        i64 loss_weight = 0;
        i64 hits = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<i64> index(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            ForwardCtx ctx;
            ctx.training = true;
            ctx.dropout_rate = config.dropout;
            ctx.dropout_rng = &rng;

            Tensor out = model.forward(gather_rows(train_data.inputs, index), ctx);
            auto [loss, grad] = task_loss(out, train_data, index);
            if (!std::isfinite(loss))
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch starting at sample " + std::to_string(start));
            const i64 w = static_cast<i64>(index.size());
            loss_sum += loss * static_cast<double>(w);
            loss_weight += w;
            if (!train_data.is_segment()) {
                const auto pred = argmax_rows(out);
                for (std::size_t i = 0; i < index.size(); ++i)
                    if (pred[i] == train_data.labels[static_cast<std::size_t>(index[i])]) ++hits;
            }

            model.zero_grads();
            model.backward(grad, ctx);
            adam_step(params, opt, cb.current_lr);
        }

        auto [val_loss, val_metric] = evaluate(model, val_data, config.batch_size);

        EpochLog row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(loss_weight);
        row.train_accuracy =
            train_data.is_segment() ? 0.0 : static_cast<double>(hits) / static_cast<double>(train_data.size());
        row.val_loss = val_loss;
        row.val_metric = val_metric;
        row.lr = epoch_lr;
        log.epochs.push_back(row);
        if (config.epoch_hook) config.epoch_hook(model, row);

        if (log.best_epoch == 0 || val_metric > log.best_val_metric) {
            log.best_val_metric = val_metric;
            log.best_epoch = epoch;
        }
        if (!config.checkpoint_dir.empty()) {
            if (auto path = checkpoint_best(model, cb, val_metric, epoch, config.checkpoint_dir))
                log.checkpoints.push_back(*path);
        } else if (val_metric > cb.best_val_metric) {
            cb.best_val_metric = val_metric;
        }

        // Both plateau callbacks monitor val_loss with strict improvement;
        // update the shared best only after each has compared against it.
        reduce_lr_on_plateau(cb, val_loss);
        const bool stop = early_stopping(cb, val_loss);
        if (val_loss < cb.best_val_loss) cb.best_val_loss = val_loss;

        if (stop) {
            log.stopped_early = true;
            break;
        }
        if (config.stop_at_train_accuracy > 0.0 && !train_data.is_segment() &&
            row.train_accuracy >= config.stop_at_train_accuracy) {
            const auto [tl, tm] = evaluate(model, train_data, config.batch_size);
            (void)tl;
            if (tm >= config.stop_at_train_accuracy) break;
        }
    }

    const auto [final_loss, final_metric] = evaluate(model, train_data, config.batch_size);
    (void)final_loss;
    log.final_train_metric = final_metric;
    return log;
}

}  // namespace dynconv
