#pragma once

#include <string>
#include <vector>

#include "dynconv/layers.hpp"

namespace dynconv {

enum class Preset { BaseCnn, GlobalSoft, LocalSoft, HardAttention, OdConv, Net1Dcnn, Net2Dcnn };
enum class Task { Classify, Segment, Timeseries };

const char* to_string(Preset p);
const char* to_string(Task t);
Preset preset_from_string(const std::string& s);
Task task_from_string(const std::string& s);

struct ModelSpec {
    Preset preset = Preset::BaseCnn;
    Task task = Task::Classify;
    double width_multiplier = 1.0;
    i64 depth = 2;  // residual blocks per stage
    i64 num_classes = 10;
    Shape input_shape;        // {C,H,W} for 2-D tasks, {C,L} for timeseries
    i64 kernels_per_bank = 4;  // K
    i64 k_active = 0;          // 0 -> max(1, K/2)
    i64 kr_dim = 32;

    void validate() const;
    bool uses_kr() const { return preset == Preset::LocalSoft || preset == Preset::HardAttention; }
};

// A built network: ordered layer list plus the parameter store. One Model
// instance serves one batch at a time; concurrent folds build their own.
class Model {
public:
    Model() = default;

    Tensor forward(const Tensor& x, ForwardCtx& ctx);
    // Seeds the backward pass with d(loss)/d(output); parameter grads accumulate.
    void backward(const Tensor& grad_out, ForwardCtx& ctx);

    std::vector<Param*> params();
    void zero_grads();
    i64 param_count();

    const std::vector<LayerPtr>& layers() const { return layers_; }
    std::vector<LayerPtr>& layers() { return layers_; }
    const std::vector<Layer*>& attention_layers() const { return attention_layers_; }

    const ModelSpec& spec() const { return spec_; }

    // Output shape of forward for a batch of n samples.
    Shape output_shape(i64 n) const;

    ModelSpec spec_;
    std::vector<LayerPtr> layers_;
    std::vector<Layer*> attention_layers_;
    Shape out_shape_tail_;  // output shape without the batch axis
};

Model build_model(const ModelSpec& spec, Prng& rng);

}  // namespace dynconv
