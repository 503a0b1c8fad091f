// Command-line front end: dataset generation, training, evaluation, k-fold
// experiments, gradient checking and FLOPs reporting.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "dynconv/checkpoint.hpp"
#include "dynconv/data.hpp"
#include "dynconv/gradcheck.hpp"
#include "dynconv/metrics.hpp"
#include "dynconv/model.hpp"
#include "dynconv/train.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dynconv;

namespace {

constexpr int kSchemaVersion = 1;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Run configuration (JSON file, fixed schema, unknown keys rejected).

struct RunConfig {
    std::string preset = "base_cnn";
    std::string task = "classify";
    std::string data;
    std::string out = "runs/out";
    double learning_rate = 0.001;
    i64 batch_size = 32;
    i64 epochs = 30;
    double dropout = 0.2;
    std::uint64_t seed = 0;
    i64 folds = 10;
    i64 kernels_per_bank = 4;
    i64 k_active = 0;
    i64 kr_dim = 32;
    double width_multiplier = 1.0;
    i64 depth = 2;
    i64 num_classes = 0;  // 0 = take from the dataset
    i64 pretrain_epochs = 10;
    i64 attention_dump_samples = 8;

    json to_json() const {
        json j;
        j["preset"] = preset;
        j["task"] = task;
        j["data"] = data;
        j["out"] = out;
        j["learning_rate"] = learning_rate;
        j["batch_size"] = batch_size;
        j["epochs"] = epochs;
        j["dropout"] = dropout;
        j["seed"] = seed;
        j["folds"] = folds;
        j["kernels_per_bank"] = kernels_per_bank;
        j["k_active"] = k_active;
        j["kr_dim"] = kr_dim;
        j["width_multiplier"] = width_multiplier;
        j["depth"] = depth;
        j["num_classes"] = num_classes;
        j["pretrain_epochs"] = pretrain_epochs;
        j["attention_dump_samples"] = attention_dump_samples;
        return j;
    }
};

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("config JSON parse error in " + path + ": " + e.what());
    }

    RunConfig cfg;
    const std::map<std::string, std::function<void(const json&)>> setters = {
        {"preset", [&](const json& v) { cfg.preset = v.get<std::string>(); }},
        {"task", [&](const json& v) { cfg.task = v.get<std::string>(); }},
        {"data", [&](const json& v) { cfg.data = v.get<std::string>(); }},
        {"out", [&](const json& v) { cfg.out = v.get<std::string>(); }},
        {"learning_rate", [&](const json& v) { cfg.learning_rate = v.get<double>(); }},
        {"batch_size", [&](const json& v) { cfg.batch_size = v.get<i64>(); }},
        {"epochs", [&](const json& v) { cfg.epochs = v.get<i64>(); }},
        {"dropout", [&](const json& v) { cfg.dropout = v.get<double>(); }},
        {"seed", [&](const json& v) { cfg.seed = v.get<std::uint64_t>(); }},
        {"folds", [&](const json& v) { cfg.folds = v.get<i64>(); }},
        {"kernels_per_bank", [&](const json& v) { cfg.kernels_per_bank = v.get<i64>(); }},
        {"k_active", [&](const json& v) { cfg.k_active = v.get<i64>(); }},
        {"kr_dim", [&](const json& v) { cfg.kr_dim = v.get<i64>(); }},
        {"width_multiplier", [&](const json& v) { cfg.width_multiplier = v.get<double>(); }},
        {"depth", [&](const json& v) { cfg.depth = v.get<i64>(); }},
        {"num_classes", [&](const json& v) { cfg.num_classes = v.get<i64>(); }},
        {"pretrain_epochs", [&](const json& v) { cfg.pretrain_epochs = v.get<i64>(); }},
        {"attention_dump_samples", [&](const json& v) { cfg.attention_dump_samples = v.get<i64>(); }},
    };
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ParseError("unknown config key '" + key + "' in " + path);
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw ParseError("config key '" + key + "': " + e.what());
        }
    }
    return cfg;
}

ModelSpec model_spec_from(const RunConfig& cfg, const Shape& input_shape, i64 num_classes) {
    ModelSpec spec;
    spec.preset = preset_from_string(cfg.preset);
    spec.task = task_from_string(cfg.task);
    spec.width_multiplier = cfg.width_multiplier;
    spec.depth = cfg.depth;
    spec.num_classes = cfg.num_classes > 0 ? cfg.num_classes : num_classes;
    spec.input_shape = input_shape;
    spec.kernels_per_bank = cfg.kernels_per_bank;
    spec.k_active = cfg.k_active;
    spec.kr_dim = cfg.kr_dim;
    return spec;
}

// ---------------------------------------------------------------------------
// Dataset loading.

struct LoadedSplits {
    LabeledData train, test;
    Shape input_shape;
    i64 num_classes = 0;
};

LoadedSplits load_timeseries(const std::string& path, std::uint64_t seed) {
    LoadedSplits out;
    const fs::path p(path);
    if (fs::is_directory(p)) {
        const TimeSeriesDataset train = read_ucr_tsv((p / "train.tsv").string());
        const TimeSeriesDataset test = read_ucr_tsv((p / "test.tsv").string());
        if (train.length != test.length)
            throw ValidationError("train/test series lengths differ: " + std::to_string(train.length) +
                                  " vs " + std::to_string(test.length));
        out.train = train.to_labeled();
        out.test = test.to_labeled();
        out.input_shape = {1, train.length};
        out.num_classes = std::max(train.num_classes, test.num_classes);
        return out;
    }
    // Single file: deterministic stratified 80/20 split.
    const TimeSeriesDataset all = read_ucr_tsv(path);
    const auto folds = stratified_kfold(all.labels, 5, seed);
    const LabeledData full = all.to_labeled();
    auto take = [&](const std::vector<i64>& index) {
        LabeledData part;
        Shape s = full.inputs.shape();
        s[0] = static_cast<i64>(index.size());
        part.inputs = Tensor(s);
        const i64 row = full.inputs.numel() / full.inputs.dim(0);
        for (std::size_t i = 0; i < index.size(); ++i) {
            std::copy(full.inputs.data() + index[i] * row, full.inputs.data() + (index[i] + 1) * row,
                      part.inputs.data() + static_cast<i64>(i) * row);
            part.labels.push_back(full.labels[static_cast<std::size_t>(index[i])]);
        }
        return part;
    };
    out.train = take(folds[0].train_index);
    out.test = take(folds[0].test_index);
    out.input_shape = {1, all.length};
    out.num_classes = all.num_classes;
    return out;
}

LoadedSplits load_images(const std::string& dir, bool need_masks) {
    LoadedSplits out;
    const ImageDataset train = load_image_split(dir, "train");
    const ImageDataset test = load_image_split(dir, "test");
    if (need_masks && (!train.has_masks() || !test.has_masks()))
        throw ValidationError("segment task needs train-masks.idx and test-masks.idx in " + dir);
    out.train = train.to_labeled();
    out.test = test.to_labeled();
    if (!need_masks) {
        out.train.masks.clear();
        out.test.masks.clear();
    }
    out.input_shape = {train.images.dim(1), train.images.dim(2), train.images.dim(3)};
    out.num_classes = std::max(train.num_classes, test.num_classes);
    return out;
}

LoadedSplits load_splits(const RunConfig& cfg) {
    const Task task = task_from_string(cfg.task);
    if (cfg.data.empty()) throw ValidationError("config field 'data' (dataset path) is required");
    if (task == Task::Timeseries) return load_timeseries(cfg.data, cfg.seed);
    return load_images(cfg.data, task == Task::Segment);
}

// ---------------------------------------------------------------------------
// Output writers.

void ensure_out_dir(const std::string& dir, bool force) {
    const fs::path p(dir);
    if (fs::exists(p) && !fs::is_empty(p) && !force)
        throw ValidationError("output directory " + dir + " exists and is not empty (use --force)");
    fs::create_directories(p);
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    out << content;
}

std::string curves_csv(const TrainingLog& log) {
    std::string csv = "epoch,train_loss,val_loss,val_metric,lr\n";
    for (const auto& e : log.epochs)
        csv += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," +
               fmt(e.val_metric) + "," + fmt(e.lr) + "\n";
    return csv;
}

void dump_attention(Model& model, const LabeledData& val, i64 samples, const std::string& path) {
    if (model.attention_layers().empty()) return;
    const i64 n = std::min<i64>(samples, val.size());
    Shape s = val.inputs.shape();
    s[0] = n;
    Tensor sub(s);
    std::copy(val.inputs.data(), val.inputs.data() + sub.numel(), sub.data());
    ForwardCtx ctx;
    model.forward(sub, ctx);

    std::string csv = "sample,layer,weight_index,value\n";
    for (const Layer* layer : model.attention_layers()) {
        const Tensor* a = layer->last_attention();
        for (i64 row = 0; row < a->dim(0); ++row)
            for (i64 c = 0; c < a->dim(1); ++c)
                csv += std::to_string(row) + "," + layer->name + "," + std::to_string(c) + "," +
                       fmt(a->at2(row, c)) + "\n";
    }
    write_text(path, csv);
}

json epochs_json(const TrainingLog& log) {
    json rows = json::array();
    for (const auto& e : log.epochs) {
        json r;
        r["epoch"] = e.epoch;
        r["train_loss"] = e.train_loss;
        r["train_accuracy"] = e.train_accuracy;
        r["val_loss"] = e.val_loss;
        r["val_metric"] = e.val_metric;
        r["lr"] = e.lr;
        rows.push_back(std::move(r));
    }
    return rows;
}

json flop_report_json(const FlopReport& report) {
    json layers = json::array();
    for (const auto& e : report.entries) {
        json r;
        r["layer"] = e.layer;
        r["category"] = e.category;
        r["flops"] = e.flops;
        layers.push_back(std::move(r));
    }
    json j;
    j["layers"] = std::move(layers);
    for (const char* cat : {"convolution", "attention-generator", "dense", "other"})
        j["by_category"][cat] = report.by_category(cat);
    j["total"] = report.total();
    return j;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(std::string kind, i64 classes, i64 per_class, i64 count, i64 size, i64 length,
                 double noise, std::uint64_t seed, bool rotate_test, const std::string& out,
                 bool force) {
    for (char& c : kind)
        if (c == '_') c = '-';
    ensure_out_dir(out, force);
    Prng rng(seed);
    json manifest;
    manifest["schema_version"] = kSchemaVersion;
    manifest["kind"] = kind;
    manifest["seed"] = seed;

    if (kind == "oriented-bars") {
        const i64 test_per_class = std::max<i64>(1, per_class / 5);
        ImageDataset train = gen_oriented_bars(per_class, size, classes, rng, noise);
        ImageDataset test = gen_oriented_bars(test_per_class, size, classes, rng, noise);
        if (rotate_test) test = rotate_bars_90(test, classes);
        save_image_split(train, out, "train");
        save_image_split(test, out, "test");
        manifest["classes"] = classes;
        manifest["train_samples"] = train.size();
        manifest["test_samples"] = test.size();
        manifest["size"] = size;
        manifest["noise"] = noise;
        manifest["rotated_test"] = rotate_test;
    } else if (kind == "shapes-seg") {
        const i64 test_count = std::max<i64>(1, count / 5);
        const ImageDataset train = gen_shapes_seg(count, size, rng, noise);
        const ImageDataset test = gen_shapes_seg(test_count, size, rng, noise);
        save_image_split(train, out, "train");
        save_image_split(test, out, "test");
        manifest["classes"] = 3;
        manifest["train_samples"] = train.size();
        manifest["test_samples"] = test.size();
        manifest["size"] = size;
        manifest["noise"] = noise;
    } else if (kind == "synth-timeseries") {
        const i64 test_per_class = std::max<i64>(1, per_class / 5);
        const TimeSeriesDataset train = gen_synth_timeseries(per_class, length, classes, rng, noise);
        const TimeSeriesDataset test = gen_synth_timeseries(test_per_class, length, classes, rng, noise);
        write_ucr_tsv(train, out + "/train.tsv");
        write_ucr_tsv(test, out + "/test.tsv");
        manifest["classes"] = classes;
        manifest["train_samples"] = train.size();
        manifest["test_samples"] = test.size();
        manifest["length"] = length;
        manifest["noise"] = noise;
    } else {
        throw ValidationError("unknown dataset kind '" + kind +
                              "' (expected oriented-bars, shapes-seg or synth-timeseries)");
    }
    write_text(out + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << kind << " dataset to " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const RunConfig& cfg, bool force) {
    const auto t0 = std::chrono::steady_clock::now();
    ensure_out_dir(cfg.out, force);
    const LoadedSplits splits = load_splits(cfg);
    const ModelSpec spec = model_spec_from(cfg, splits.input_shape, splits.num_classes);

    Prng rng(cfg.seed);
    Model model = build_model(spec, rng);

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.epochs;
    tc.dropout = cfg.dropout;
    tc.seed = cfg.seed;
    tc.checkpoint_dir = cfg.out;

    // Attention dumps piggyback on the epoch hook.
    std::vector<std::string> attn_files;
    tc.epoch_hook = [&](Model& m, const EpochLog& e) {
        if (m.attention_layers().empty()) return;
        const std::string path = cfg.out + "/attn_epoch" + std::to_string(e.epoch) + ".csv";
        dump_attention(m, splits.test, cfg.attention_dump_samples, path);
        attn_files.push_back(path);
    };

    const TrainingLog log = train(model, splits.train, splits.test, tc);
    save_checkpoint(model, cfg.out + "/final.ckpt");

    write_text(cfg.out + "/curves.csv", curves_csv(log));

    const FlopReport flops = flops_model(model);
    json report;
    report["schema_version"] = kSchemaVersion;
    report["command"] = "train";
    report["config"] = cfg.to_json();
    report["epochs"] = epochs_json(log);
    report["final"]["train_metric"] = log.final_train_metric;
    report["final"]["train_loss"] = log.epochs.back().train_loss;
    report["final"]["val_loss"] = log.epochs.back().val_loss;
    report["final"]["val_metric"] = log.epochs.back().val_metric;
    report["best"]["epoch"] = log.best_epoch;
    report["best"]["val_metric"] = log.best_val_metric;
    report["stopped_early"] = log.stopped_early;
    report["checkpoints"] = log.checkpoints;
    report["attention_files"] = attn_files;
    report["flops_total"] = flops.total();
    report["param_count"] = model.param_count();
    report["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(cfg.out + "/report.json", report.dump(2) + "\n");

    std::cout << "trained " << cfg.preset << " for " << log.epochs.size() << " epochs; final val "
              << fmt(log.epochs.back().val_metric) << ", best val " << fmt(log.best_val_metric)
              << " (epoch " << log.best_epoch << ")\n"
              << "report: " << cfg.out << "/report.json\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& preset_flag,
             const std::string& task_flag, const std::string& split, const std::string& out_dir) {
    Model model = load_checkpoint(checkpoint);
    const Task task = model.spec().task;
    if (!preset_flag.empty() && preset_from_string(preset_flag) != model.spec().preset)
        throw ValidationError("checkpoint " + checkpoint + " records preset '" +
                              to_string(model.spec().preset) + "' but --preset says '" + preset_flag +
                              "'");
    if (!task_flag.empty() && task_from_string(task_flag) != task)
        throw ValidationError("checkpoint " + checkpoint + " was trained for task '" +
                              to_string(task) + "' but --task says '" + task_flag + "'");

    LabeledData eval_data;
    if (task == Task::Timeseries) {
        const fs::path p(data);
        if (fs::is_directory(p)) {
            const TimeSeriesDataset ds = read_ucr_tsv((p / (split + ".tsv")).string());
            eval_data = ds.to_labeled();
        } else {
            eval_data = read_ucr_tsv(data).to_labeled();
        }
    } else {
        ImageDataset ds = load_image_split(data, split);
        if (task == Task::Segment && !ds.has_masks())
            throw ValidationError("segment eval needs " + split + "-masks.idx in " + data);
        eval_data = ds.to_labeled();
        if (task == Task::Classify) eval_data.masks.clear();
    }

    const auto [loss, metric] = evaluate(model, eval_data, 32);
    const char* metric_name = task == Task::Segment ? "miou" : "accuracy";
    std::cout << metric_name << " " << fmt(metric) << "\nloss " << fmt(loss) << "\n";

    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = "eval";
    j["checkpoint"] = checkpoint;
    j["data"] = data;
    j["split"] = split;
    j["task"] = to_string(task);
    j["preset"] = to_string(model.spec().preset);
    j[metric_name] = metric;
    j["loss"] = loss;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/eval.json", j.dump(2) + "\n");
    }
    return 0;
}

// ---------------------------------------------------------------------------
// kfold

LabeledData take_rows(const LabeledData& full, const std::vector<i64>& index) {
    LabeledData part;
    Shape s = full.inputs.shape();
    s[0] = static_cast<i64>(index.size());
    part.inputs = Tensor(s);
    const i64 row = full.inputs.numel() / full.inputs.dim(0);
    for (std::size_t i = 0; i < index.size(); ++i) {
        std::copy(full.inputs.data() + index[i] * row, full.inputs.data() + (index[i] + 1) * row,
                  part.inputs.data() + static_cast<i64>(i) * row);
        part.labels.push_back(full.labels[static_cast<std::size_t>(index[i])]);
    }
    return part;
}

// Collects every dynamic conv1d layer in the model, in order.
std::vector<DynamicConv1dLayer*> dynamic_conv1d_layers(Model& model) {
    std::vector<DynamicConv1dLayer*> out;
    for (auto& layer : model.layers())
        if (auto* d = dynamic_cast<DynamicConv1dLayer*>(layer.get())) out.push_back(d);
    return out;
}

// The static sibling is the same preset with K = 1 (which reduces every
// dynamic layer to a plain convolution). Its pretrained kernels are tiled
// into the bank with small symmetry-breaking noise, then frozen.
void pretrain_and_freeze(Model& model, const LabeledData& fold_train, const LabeledData& fold_val,
                         const RunConfig& cfg, std::uint64_t fold_seed) {
    ModelSpec twin_spec = model.spec();
    twin_spec.kernels_per_bank = 1;
    Prng twin_rng(fold_seed + 1);
    Model twin = build_model(twin_spec, twin_rng);

    TrainConfig tc;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = cfg.batch_size;
    tc.epochs = cfg.pretrain_epochs;
    tc.dropout = cfg.dropout;
    tc.seed = fold_seed + 1;
    train(twin, fold_train, fold_val, tc);

    auto twin_layers = dynamic_conv1d_layers(twin);
    auto model_layers = dynamic_conv1d_layers(model);
    Prng noise(fold_seed + 2);
    for (std::size_t i = 0; i < model_layers.size(); ++i) {
        const Tensor& pretrained = twin_layers[i]->bank_.kernels[0].value;
        for (auto& kernel : model_layers[i]->bank_.kernels) {
            for (i64 j = 0; j < kernel.value.numel(); ++j)
                kernel.value[j] = pretrained[j] + noise.normal(0.0, 0.01);
        }
        model_layers[i]->bank_.set_frozen(true);
    }
}

int cmd_kfold_from_file(const std::string& path, const std::string& out_dir) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fold file: " + path);
    std::vector<FoldResult> folds;
    std::string line;
    i64 line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        for (char& c : line)
            if (c == ',' || c == '\t') c = ' ';
        std::istringstream row(line);
        std::vector<double> values;
        double v;
        while (row >> v) values.push_back(v);
        if (values.empty()) continue;
        FoldResult fr;
        fr.fold_index = static_cast<i64>(folds.size());
        fr.accuracy = values.back();
        if (values.size() >= 2) fr.loss = values[values.size() - 2];
        folds.push_back(fr);
    }
    if (folds.size() < 2) throw ValidationError("fold file needs at least 2 rows: " + path);

    const KfoldStats stats = kfold_stats(folds);
    std::printf("%-6s %-8s %-8s\n", "fold", "loss", "accuracy");
    for (const auto& f : folds)
        std::printf("%-6lld %-8.3f %-8.3f\n", static_cast<long long>(f.fold_index), f.loss, f.accuracy);
    std::printf("mean accuracy %.3f\npopulation std %.3f\n", stats.mean, stats.std_dev);

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        json j;
        j["schema_version"] = kSchemaVersion;
        j["command"] = "kfold";
        j["folds_from_file"] = path;
        json rows = json::array();
        for (const auto& f : folds)
            rows.push_back({{"fold", f.fold_index}, {"loss", f.loss}, {"accuracy", f.accuracy}});
        j["folds"] = std::move(rows);
        j["mean_accuracy"] = stats.mean;
        j["std_accuracy"] = stats.std_dev;
        write_text(out_dir + "/report.json", j.dump(2) + "\n");
    }
    return 0;
}

int cmd_kfold(const RunConfig& cfg, bool force) {
    const auto t0 = std::chrono::steady_clock::now();
    if (task_from_string(cfg.task) != Task::Timeseries)
        throw ValidationError("kfold runs on the timeseries task only");
    ensure_out_dir(cfg.out, force);

    // Fold over the union of both splits, UCR-protocol style.
    TimeSeriesDataset all;
    const fs::path p(cfg.data);
    if (fs::is_directory(p)) {
        const TimeSeriesDataset train = read_ucr_tsv((p / "train.tsv").string());
        const TimeSeriesDataset test = read_ucr_tsv((p / "test.tsv").string());
        if (train.length != test.length) throw ValidationError("train/test series lengths differ");
        all.length = train.length;
        all.num_classes = std::max(train.num_classes, test.num_classes);
        all.series = Tensor({train.size() + test.size(), all.length});
        std::copy(train.series.data(), train.series.data() + train.series.numel(), all.series.data());
        std::copy(test.series.data(), test.series.data() + test.series.numel(),
                  all.series.data() + train.series.numel());
        all.labels = train.labels;
        all.labels.insert(all.labels.end(), test.labels.begin(), test.labels.end());
    } else {
        all = read_ucr_tsv(cfg.data);
    }
    const LabeledData full = all.to_labeled();

    const auto splits = stratified_kfold(all.labels, cfg.folds, cfg.seed);
    const ModelSpec spec = model_spec_from(cfg, {1, all.length}, all.num_classes);
    const bool dynamic_preset = spec.preset != Preset::BaseCnn;

    std::vector<FoldResult> folds;
    std::printf("%-6s %-8s %-8s\n", "fold", "loss", "accuracy");
    for (std::size_t f = 0; f < splits.size(); ++f) {
        const std::uint64_t fold_seed = cfg.seed + f;  // independent stream per fold
        const LabeledData fold_train = take_rows(full, splits[f].train_index);
        const LabeledData fold_test = take_rows(full, splits[f].test_index);

        Prng rng(fold_seed);
        Model model = build_model(spec, rng);
        if (dynamic_preset) pretrain_and_freeze(model, fold_train, fold_test, cfg, fold_seed);

        TrainConfig tc;
        tc.learning_rate = cfg.learning_rate;
        tc.batch_size = cfg.batch_size;
        tc.epochs = cfg.epochs;
        tc.dropout = cfg.dropout;
        tc.seed = fold_seed;
        train(model, fold_train, fold_test, tc);

        const auto [loss, acc] = evaluate(model, fold_test, cfg.batch_size);
        folds.push_back({static_cast<i64>(f), loss, acc});
        std::printf("%-6zu %-8.3f %-8.3f\n", f, loss, acc);
        std::fflush(stdout);
    }
    const KfoldStats stats = kfold_stats(folds);
    std::printf("mean accuracy %.3f\npopulation std %.3f\n", stats.mean, stats.std_dev);

    json report;
    report["schema_version"] = kSchemaVersion;
    report["command"] = "kfold";
    report["config"] = cfg.to_json();
    json rows = json::array();
    for (const auto& f : folds)
        rows.push_back({{"fold", f.fold_index}, {"loss", f.loss}, {"accuracy", f.accuracy}});
    report["folds"] = std::move(rows);
    report["mean_accuracy"] = stats.mean;
    report["std_accuracy"] = stats.std_dev;
    report["pretrained_frozen_banks"] = dynamic_preset;
    report["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(cfg.out + "/report.json", report.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& preset_name, std::uint64_t seed) {
    const Preset preset = preset_from_string(preset_name);
    const GradCheckReport report = gradcheck_model(gradcheck_spec(preset), seed);
    if (report.surrogate_path)
        std::cout << "note: hard attention checked on its soft surrogate path\n";
    for (const auto& g : report.groups)
        std::printf("%-5s %-32s worst rel err %.3e (analytic %.6e, numeric %.6e)\n",
                    g.pass ? "pass" : "FAIL", g.param.c_str(), g.max_rel_err, g.worst_analytic,
                    g.worst_numeric);
    std::cout << (report.pass ? "gradcheck passed" : "gradcheck FAILED") << " for " << preset_name
              << " (seed " << seed << ")\n";
    return report.pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// flops

Shape parse_shape(const std::string& text) {
    Shape shape;
    std::string token;
    for (const char c : text + "x") {
        if (c == 'x' || c == 'X') {
            if (token.empty()) throw ValidationError("bad shape string '" + text + "'");
            shape.push_back(std::stoll(token));
            token.clear();
        } else {
            token.push_back(c);
        }
    }
    return shape;
}

int cmd_flops(const RunConfig& cfg, const std::string& shape_text, const std::string& out_dir) {
    const Shape input_shape = parse_shape(shape_text);
    const i64 classes = cfg.num_classes > 0 ? cfg.num_classes : 10;
    const ModelSpec spec = model_spec_from(cfg, input_shape, classes);
    Prng rng(cfg.seed);
    Model model = build_model(spec, rng);
    const FlopReport report = flops_model(model);

    std::printf("per-layer breakdown for %s (%s):\n", cfg.preset.c_str(), shape_text.c_str());
    for (const auto& e : report.entries)
        std::printf("  %-28s %-20s %12lld\n", e.layer.c_str(), e.category.c_str(),
                    static_cast<long long>(e.flops));
    for (const char* cat : {"convolution", "attention-generator", "dense", "other"})
        std::printf("%-22s %12lld\n", cat, static_cast<long long>(report.by_category(cat)));
    std::printf("total per-sample FLOPs %12lld\n", static_cast<long long>(report.total()));

    json j;
    j["schema_version"] = kSchemaVersion;
    j["command"] = "flops";
    j["preset"] = cfg.preset;
    j["input_shape"] = input_shape;
    j["report"] = flop_report_json(report);

    // Variant comparison on the same backbone (image tasks only).
    if (spec.task != Task::Timeseries) {
        std::printf("\nvariant comparison (same backbone, hard attention at k_active = K):\n");
        json comparison = json::array();
        for (const Preset p : {Preset::BaseCnn, Preset::GlobalSoft, Preset::LocalSoft,
                               Preset::HardAttention, Preset::OdConv}) {
            ModelSpec vs = spec;
            vs.preset = p;
            vs.k_active = p == Preset::HardAttention ? vs.kernels_per_bank : 0;
            Prng vr(cfg.seed);
            Model vm = build_model(vs, vr);
            const i64 total = flops_model(vm).total();
            std::printf("  %-16s %12lld\n", to_string(p), static_cast<long long>(total));
            comparison.push_back({{"preset", to_string(p)}, {"total", total}});
        }
        j["comparison"] = std::move(comparison);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir + "/flops.json", j.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dynamic-convolution toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_flag;
    std::optional<std::uint64_t> seed_flag;
    bool force = false;
    int threads = 0;
    app.add_option("--config", config_path, "JSON run configuration")->configurable(false);
    app.add_option("--seed", seed_flag, "override the config seed");
    app.add_option("--out", out_flag, "override the output directory");
    app.add_flag("--force", force, "allow writing into a non-empty output directory");
    app.add_option("--threads", threads, "OpenMP thread count (0 = library default)");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    std::string gen_kind;
    i64 gen_classes = 4, gen_per_class = 50, gen_count = 60, gen_size = 16, gen_length = 64;
    double gen_noise = 0.05;
    bool gen_rotate_test = false;
    gen->add_option("kind", gen_kind, "oriented-bars | shapes-seg | synth-timeseries")->required();
    gen->add_option("--classes", gen_classes, "class count (orientations / waveforms)");
    gen->add_option("--per-class", gen_per_class, "training samples per class");
    gen->add_option("--count", gen_count, "training samples (shapes-seg)");
    gen->add_option("--size", gen_size, "image side length");
    gen->add_option("--length", gen_length, "series length (synth-timeseries)");
    gen->add_option("--noise", gen_noise, "additive noise std");
    gen->add_flag("--rotate-test-90", gen_rotate_test,
                  "rotate the test split 90 degrees and relabel by symmetry class");

    auto* tr = app.add_subcommand("train", "train a model from a run configuration");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ckpt, ev_data, ev_preset, ev_task, ev_split = "test";
    ev->add_option("checkpoint", ev_ckpt)->required();
    ev->add_option("data", ev_data)->required();
    ev->add_option("--preset", ev_preset, "expected preset (errors when it mismatches the checkpoint)");
    ev->add_option("--task", ev_task, "expected task (errors when it mismatches the checkpoint)");
    ev->add_option("--split", ev_split, "train or test (default test)");

    auto* kf = app.add_subcommand("kfold", "k-fold experiment on a timeseries dataset");
    std::string kf_from_file;
    kf->add_option("--folds-from-file", kf_from_file,
                   "skip training; summarize per-fold accuracies from a file");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a preset");
    std::string gc_preset;
    gc->add_option("preset", gc_preset)->required();

    auto* fl = app.add_subcommand("flops", "per-layer FLOPs breakdown and variant comparison");
    std::string fl_shape;
    fl->add_option("--input-shape", fl_shape, "CxHxW or CxL (default 3x32x32 / 1x64)");

    for (CLI::App* sub : {gen, tr, ev, kf, gc, fl}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_run_config(config_path);
        if (seed_flag) cfg.seed = *seed_flag;
        if (!out_flag.empty()) cfg.out = out_flag;

        if (gen->parsed())
            return cmd_gen_data(gen_kind, gen_classes, gen_per_class, gen_count, gen_size, gen_length,
                                gen_noise, cfg.seed, gen_rotate_test, cfg.out, force);
        if (tr->parsed()) {
            if (config_path.empty()) throw ValidationError("train needs --config");
            return cmd_train(cfg, force);
        }
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_preset, ev_task, ev_split, out_flag);
        if (kf->parsed()) {
            if (!kf_from_file.empty()) return cmd_kfold_from_file(kf_from_file, out_flag);
            if (config_path.empty()) throw ValidationError("kfold needs --config (or --folds-from-file)");
            return cmd_kfold(cfg, force);
        }
        if (gc->parsed()) return cmd_gradcheck(gc_preset, cfg.seed);
        if (fl->parsed()) {
            std::string shape = fl_shape;
            if (shape.empty()) shape = task_from_string(cfg.task) == Task::Timeseries ? "1x64" : "3x32x32";
            return cmd_flops(cfg, shape, cfg.out == "runs/out" && out_flag.empty() ? "" : cfg.out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
