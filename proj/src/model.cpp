#include "dynconv/model.hpp"

#include <algorithm>
#include <cmath>

namespace dynconv {

const char* to_string(Preset p) {
    switch (p) {
        case Preset::BaseCnn: return "base_cnn";
        case Preset::GlobalSoft: return "global_soft";
        case Preset::LocalSoft: return "local_soft";
        case Preset::HardAttention: return "hard_attention";
        case Preset::OdConv: return "odconv";
        case Preset::Net1Dcnn: return "net1_dcnn";
        default: return "net2_dcnn";
    }
}

const char* to_string(Task t) {
    switch (t) {
        case Task::Classify: return "classify";
        case Task::Segment: return "segment";
        default: return "timeseries";
    }
}

Preset preset_from_string(const std::string& s) {
    for (Preset p : {Preset::BaseCnn, Preset::GlobalSoft, Preset::LocalSoft, Preset::HardAttention,
                     Preset::OdConv, Preset::Net1Dcnn, Preset::Net2Dcnn})
        if (s == to_string(p)) return p;
    throw ValidationError("unknown preset '" + s + "'");
}

Task task_from_string(const std::string& s) {
    for (Task t : {Task::Classify, Task::Segment, Task::Timeseries})
        if (s == to_string(t)) return t;
    throw ValidationError("unknown task '" + s + "'");
}

static const char* kSupportedMatrix =
    "supported preset/task combinations: {base_cnn, global_soft, local_soft, hard_attention, odconv} x "
    "{classify, segment}; {base_cnn, net1_dcnn, net2_dcnn} x {timeseries}";

void ModelSpec::validate() const {
    const bool image_preset = preset == Preset::BaseCnn || preset == Preset::GlobalSoft ||
                              preset == Preset::LocalSoft || preset == Preset::HardAttention ||
                              preset == Preset::OdConv;
    const bool series_preset =
        preset == Preset::BaseCnn || preset == Preset::Net1Dcnn || preset == Preset::Net2Dcnn;
    const bool ok = (task == Task::Timeseries) ? series_preset : image_preset;
    if (!ok)
        throw ValidationError(std::string("preset ") + to_string(preset) + " does not support task " +
                              to_string(task) + "; " + kSupportedMatrix);
    if (task == Task::Timeseries) {
        if (input_shape.size() != 2)
            throw ValidationError("timeseries input shape must be {C,L}, got " + shape_str(input_shape));
        if (input_shape[1] < 4) throw ValidationError("timeseries length must be >= 4");
    } else {
        if (input_shape.size() != 3)
            throw ValidationError("image input shape must be {C,H,W}, got " + shape_str(input_shape));
        if (task == Task::Segment && (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0))
            throw ValidationError("segment task needs H and W divisible by 4 (two stride-2 stages), got " +
                                  shape_str(input_shape));
    }
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
    if (kernels_per_bank < 1) throw ValidationError("K (kernels_per_bank) must be >= 1");
    if (depth < 1) throw ValidationError("depth must be >= 1");
    if (width_multiplier <= 0.0) throw ValidationError("width_multiplier must be > 0");
    const i64 K = kernels_per_bank;
    if (k_active != 0 && (k_active < 1 || k_active > K))
        throw ValidationError("k_active must be in [1,K]");
}

Tensor Model::forward(const Tensor& x, ForwardCtx& ctx) {
    if (spec_.uses_kr()) {
        ctx.kr = Tensor({x.dim(0), spec_.kr_dim});
        ctx.kr_layer_index = 0;
    }
    Tensor h = x;
    for (auto& layer : layers_) h = layer->forward(h, ctx);
    return h;
}

void Model::backward(const Tensor& grad_out, ForwardCtx& ctx) {
    if (spec_.uses_kr()) ctx.kr_grad = Tensor({grad_out.dim(0), spec_.kr_dim});
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, ctx);
}

std::vector<Param*> Model::params() {
    std::vector<Param*> out;
    for (auto& layer : layers_) layer->collect_params(out);
    return out;
}

void Model::zero_grads() {
    for (Param* p : params()) p->zero_grad();
}

i64 Model::param_count() {
    i64 n = 0;
    for (Param* p : params()) n += p->value.numel();
    return n;
}

Shape Model::output_shape(i64 n) const {
    Shape s{n};
    s.insert(s.end(), out_shape_tail_.begin(), out_shape_tail_.end());
    return s;
}

namespace {

i64 scaled(i64 width, double multiplier) {
    return std::max<i64>(1, static_cast<i64>(std::llround(width * multiplier)));
}

struct BlockFactory {
    const ModelSpec& spec;
    Prng& rng;

    LayerPtr make_conv(const std::string& name, i64 cin, i64 cout, i64 stride, i64 h, i64 w) const {
        const ConvSpec cs{stride, stride, 1, 1};
        const i64 K = spec.kernels_per_bank;
        switch (spec.preset) {
            case Preset::LocalSoft:
                return std::make_unique<DynamicConv2dLayer>(name, cin, cout, 3, cs, K, spec.kr_dim, h, w,
                                                            rng);
            case Preset::HardAttention: {
                auto l = std::make_unique<DynamicConv2dLayer>(name, cin, cout, 3, cs, K, spec.kr_dim, h,
                                                              w, rng);
                l->mode_ = DynamicConv2dBase::Attention::Hard;
                l->k_active_ = spec.k_active > 0 ? spec.k_active : std::max<i64>(1, K / 2);
                return l;
            }
            case Preset::OdConv:
                return std::make_unique<OdConv2dLayer>(name, cin, cout, 3, cs, K, h, w, rng);
            default:
                return std::make_unique<Conv2dLayer>(name, cin, cout, 3, cs, h, w, rng);
        }
    }

    LayerPtr make_block(const std::string& name, i64 cin, i64 cout, i64 stride, i64 h, i64 w) const {
        const i64 oh = (h + 2 - 3) / stride + 1;
        const i64 ow = (w + 2 - 3) / stride + 1;
        LayerPtr c1 = make_conv(name + ".conv1", cin, cout, stride, h, w);
        LayerPtr c2 = make_conv(name + ".conv2", cout, cout, 1, oh, ow);
        LayerPtr proj;
        if (cin != cout || stride != 1)
            proj = std::make_unique<Conv2dLayer>(name + ".proj", cin, cout, 1,
                                                 ConvSpec{stride, stride, 0, 0}, h, w, rng);
        return std::make_unique<ResidualBlock>(name, std::move(c1), std::move(c2), std::move(proj));
    }
};

void register_attention(Model& model) {
    for (auto& layer : model.layers_) {
        if (layer->last_attention()) {
            model.attention_layers_.push_back(layer.get());
        } else if (auto* block = dynamic_cast<ResidualBlock*>(layer.get())) {
            if (block->conv1()->last_attention()) model.attention_layers_.push_back(block->conv1());
            if (block->conv2()->last_attention()) model.attention_layers_.push_back(block->conv2());
        }
    }
}

Model build_image_model(const ModelSpec& spec, Prng& rng) {
    const i64 cin = spec.input_shape[0];
    i64 h = spec.input_shape[1], w = spec.input_shape[2];
    const i64 widths[3] = {scaled(16, spec.width_multiplier), scaled(32, spec.width_multiplier),
                           scaled(64, spec.width_multiplier)};

    Model m;
    m.spec_ = spec;
    BlockFactory factory{spec, rng};

    m.layers_.push_back(std::make_unique<Conv2dLayer>("stem", cin, widths[0], 3, ConvSpec{1, 1, 1, 1}, h,
                                                      w, rng));
    m.layers_.push_back(std::make_unique<ReluLayer>("stem.relu"));

    i64 channels = widths[0];
    i64 downsample = 1;
    for (int stage = 0; stage < 3; ++stage) {
        const i64 out_ch = widths[stage];
        for (i64 block = 0; block < spec.depth; ++block) {
            const i64 stride = (stage > 0 && block == 0) ? 2 : 1;
            const std::string name =
                "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block);
            m.layers_.push_back(factory.make_block(name, channels, out_ch, stride, h, w));
            if (stride == 2) {
                h = (h + 2 - 3) / 2 + 1;
                w = (w + 2 - 3) / 2 + 1;
                downsample *= 2;
            }
            channels = out_ch;
            if (spec.preset == Preset::GlobalSoft)
                m.layers_.push_back(std::make_unique<ChannelGateLayer>(name + ".se", channels, h, w, rng));
        }
    }

    if (spec.task == Task::Classify) {
        m.layers_.push_back(std::make_unique<GapLayer>("head.gap"));
        m.layers_.push_back(std::make_unique<DropoutLayer>("head.dropout"));
        m.layers_.push_back(std::make_unique<DenseLayer>("head.fc", channels, spec.num_classes, rng));
        m.out_shape_tail_ = {spec.num_classes};
    } else {  // per-pixel head + nearest-neighbor upsample back to input resolution
        m.layers_.push_back(std::make_unique<Conv2dLayer>("head.pixel", channels, spec.num_classes, 1,
                                                          ConvSpec{1, 1, 0, 0}, h, w, rng));
        m.layers_.push_back(std::make_unique<UpsampleNearestLayer>("head.upsample", downsample));
        m.out_shape_tail_ = {spec.num_classes, spec.input_shape[1], spec.input_shape[2]};
    }
    register_attention(m);
    return m;
}

Model build_series_model(const ModelSpec& spec, Prng& rng) {
    const i64 cin = spec.input_shape[0];
    const i64 len = spec.input_shape[1];
    const i64 f1 = scaled(16, spec.width_multiplier);
    const i64 f2 = scaled(32, spec.width_multiplier);
    const i64 hidden = scaled(64, spec.width_multiplier);
    const i64 K = spec.kernels_per_bank;

    Model m;
    m.spec_ = spec;

    auto add_conv = [&](const std::string& name, i64 ci, i64 co, i64 ksize, i64 in_len) {
        const ConvSpec cs{1, 1, 0, (ksize - 1) / 2};
        if (spec.preset == Preset::BaseCnn)
            m.layers_.push_back(std::make_unique<Conv1dLayer>(name, ci, co, ksize, cs, in_len, rng));
        else
            m.layers_.push_back(
                std::make_unique<DynamicConv1dLayer>(name, ci, co, ksize, cs, K, in_len, rng));
    };

    add_conv("conv1", cin, f1, 7, len);
    m.layers_.push_back(std::make_unique<ReluLayer>("conv1.relu"));
    m.layers_.push_back(std::make_unique<MaxPool1dLayer>("pool1", 2, 2));
    i64 cur_len = len / 2;
    i64 channels = f1;

    if (spec.preset == Preset::Net2Dcnn) {
        add_conv("conv2", f1, f2, 5, cur_len);
        m.layers_.push_back(std::make_unique<ReluLayer>("conv2.relu"));
        m.layers_.push_back(std::make_unique<MaxPool1dLayer>("pool2", 2, 2));
        cur_len /= 2;
        channels = f2;
    }

    m.layers_.push_back(std::make_unique<FlattenLayer>("flatten"));
    m.layers_.push_back(std::make_unique<DenseLayer>("fc1", channels * cur_len, hidden, rng));
    m.layers_.push_back(std::make_unique<ReluLayer>("fc1.relu"));
    m.layers_.push_back(std::make_unique<DropoutLayer>("fc1.dropout"));
    m.layers_.push_back(std::make_unique<DenseLayer>("fc2", hidden, spec.num_classes, rng));
    m.out_shape_tail_ = {spec.num_classes};
    register_attention(m);
    return m;
}

}  // namespace

Model build_model(const ModelSpec& spec, Prng& rng) {
    spec.validate();
    if (spec.task == Task::Timeseries) return build_series_model(spec, rng);
    return build_image_model(spec, rng);
}

}  // namespace dynconv
