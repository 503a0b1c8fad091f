#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dynconv/ops.hpp"
#include "dynconv/tensor.hpp"

namespace dynconv {

struct FlopReport;

// A learnable tensor with its gradient buffer. Frozen parameters are skipped
// by both gradient accumulation and the optimizer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool frozen = false;

    Param() = default;
    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
    void zero_grad() { grad.fill(0.0); }
};

// K parallel convolution kernels sharing one shape; the W_i of the dynamic
// aggregation. K = 1 reduces the layer to a static convolution.
struct KernelBank {
    std::vector<Param> kernels;
    bool frozen = false;

    i64 K() const { return static_cast<i64>(kernels.size()); }
    const Shape& kernel_shape() const { return kernels.front().value.shape(); }
    void set_frozen(bool f) {
        frozen = f;
        for (auto& k : kernels) k.frozen = f;
    }
};

// Binary kernel on/off selection; exactly k_active ones.
struct GateMask {
    std::vector<std::uint8_t> mask;
    i64 k_active = 0;
};

// Layer-to-layer recurrent state driving kernel attention; components are
// tanh-bounded to (-1,1).
struct KernelRepresentation {
    Tensor state;  // [N, D]
    i64 layer_index = 0;
};

// Two-layer bottleneck (reduction ratio 4) producing attention logits from
// concat(kr_state, gap_feat). The kr part may be absent (gap-only generators,
// used by odconv and the 1-D nets).
struct AttnGenParams {
    Param w1, b1, w2, b2;

    static i64 hidden_dim(i64 in_dim) { return std::max<i64>(1, in_dim / 4); }
};

// Weights of the KR recurrence next = tanh(U*prev + V*gap + b).
struct KrUpdateParams {
    Param u, v, b;
};

// -- spec-level operations (stateless; the layer classes build on these) -----

// A = sigmoid(weight * gap(F) + bias), one length-C vector per sample.
Tensor channel_attention(const Tensor& F, const Tensor& weight, const Tensor& bias);

// F_new[n,c,h,w] = A[n,c] * F[n,c,h,w].
Tensor apply_channel_gate(const Tensor& F, const Tensor& A);

// Softmax attention over the bank from concat(kr_state, gap_feat) through the
// bottleneck; kr_state may be an empty tensor for gap-only generators.
Tensor kernel_attention(const Tensor& kr_state, const Tensor& gap_feat, const AttnGenParams& p);

// W_dynamic = sum_i a[i] * W_i for one sample's attention row.
Tensor aggregate_kernels(const KernelBank& bank, const double* attention);

KernelRepresentation update_kernel_representation(const KernelRepresentation& prev,
                                                  const Tensor& gap_feat, const KrUpdateParams& p);

// Top-k_active mask over logits, ties broken by lowest index.
GateMask hard_select(const std::vector<double>& logits, i64 k_active);

// The 8 dihedral variants of each base kernel (rotations by 0/90/180/270
// degrees CCW and their horizontal mirrors); output kernel j*8+t is variant t
// of base kernel j. Spatial kernels must be square.
std::vector<Tensor> orient_bank(const KernelBank& bank);

// Spatial dihedral transform of a [Cout,Cin,K,K] kernel, t in 0..7;
// 90-degree CCW rotation maps out[i][j] = in[j][K-1-i].
Tensor dihedral_transform(const Tensor& kernel, int t);
// Adjoint: scatter grad on variant t back onto the base kernel.
void dihedral_transform_adjoint(const Tensor& grad_variant, int t, Tensor& grad_base);

// Column-wise concat/split of [N,A] and [N,B] matrices.
Tensor concat_cols(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_cols(const Tensor& t, i64 width_a);

// -- layer graph ---------------------------------------------------------------

// Per-forward state threaded through the layer list. The KR tensors are only
// touched by KR-driven dynamic layers.
struct ForwardCtx {
    bool training = false;
    double dropout_rate = 0.0;
    Prng* dropout_rng = nullptr;
    // Hard-attention layers run their soft surrogate forward when set; used by
    // the finite-difference harness, which can only see the surrogate path.
    bool soft_surrogate = false;

    Tensor kr;       // [N, D] flowing forward
    Tensor kr_grad;  // [N, D] flowing backward
    i64 kr_layer_index = 0;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual const char* kind() const = 0;
    virtual Tensor forward(const Tensor& x, ForwardCtx& ctx) = 0;
    // Accumulates parameter gradients, returns grad w.r.t. the input.
    virtual Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) = 0;
    virtual void collect_params(std::vector<Param*>& out) {}
    virtual void add_flops(FlopReport& report) const {}
    // Attention weights from the most recent forward, when this layer emits any.
    virtual const Tensor* last_attention() const { return nullptr; }

    std::string name;
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 in_h, i64 in_w,
                Prng& rng);
    const char* kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override { out.push_back(&weight_); }
    void add_flops(FlopReport& report) const override;

    Param weight_;  // [Cout,Cin,K,K]
    ConvSpec spec_;
    i64 out_h_ = 0, out_w_ = 0;

private:
    i64 cin_, cout_, ksize_;
    Tensor x_;
};

// Shared machinery for the kernel-attention convolution variants. Forward:
// per-sample attention over the slot kernels -> aggregated kernel -> conv.
class DynamicConv2dBase : public Layer {
public:
    enum class Attention { Soft, Hard };

    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override;
    void add_flops(FlopReport& report) const override;
    const Tensor* last_attention() const override { return &attention_; }

    // Test/diagnostic hook: bypass the generator with fixed per-sample rows.
    std::optional<Tensor> attention_override;

    KernelBank bank_;
    AttnGenParams gen_;
    KrUpdateParams kr_;  // present iff kr_dim_ > 0
    Attention mode_ = Attention::Soft;
    i64 k_active_ = 0;  // hard mode only
    i64 kr_dim_ = 0;
    ConvSpec spec_;
    i64 out_h_ = 0, out_w_ = 0;

protected:
    DynamicConv2dBase(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 K, i64 kr_dim,
                      i64 attn_slots, i64 in_h, i64 in_w, Prng& rng);

    i64 slots() const { return attn_slots_; }
    // Materializes the aggregation slot kernels for this forward/backward pair.
    virtual void refresh_slot_kernels();
    // Scatter one slot's aggregated-kernel gradient back onto the bank.
    virtual void accumulate_slot_grad(i64 slot, const Tensor& grad);

    i64 cin_ = 0, cout_ = 0, ksize_ = 0, attn_slots_ = 0;
    i64 in_h_ = 0, in_w_ = 0;

    std::vector<Tensor> slot_kernels_;
    Tensor x_, gap_feat_, gen_in_, kr_in_, kr_out_, z1_, h1_, logits_, soft_attention_, attention_;
    std::vector<GateMask> masks_;
};

class DynamicConv2dLayer : public DynamicConv2dBase {
public:
    DynamicConv2dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 K, i64 kr_dim,
                       i64 in_h, i64 in_w, Prng& rng)
        : DynamicConv2dBase(std::move(name_), cin, cout, ksize, spec, K, kr_dim, K, in_h, in_w, rng) {}
    const char* kind() const override {
        return mode_ == Attention::Hard ? "hard_dynamic_conv2d" : "dynamic_conv2d";
    }
};

// Orientation-pooling convolution: attention-weighted aggregation over the 8K
// dihedral variants of the bank, conditioned on gap(input) alone.
class OdConv2dLayer : public DynamicConv2dBase {
public:
    OdConv2dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 K, i64 in_h,
                  i64 in_w, Prng& rng)
        : DynamicConv2dBase(std::move(name_), cin, cout, ksize, spec, K, 0, 8 * K, in_h, in_w, rng) {}
    const char* kind() const override { return "odconv2d"; }

protected:
    void refresh_slot_kernels() override;
    void accumulate_slot_grad(i64 slot, const Tensor& grad) override;
};

class Conv1dLayer : public Layer {
public:
    Conv1dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 in_len, Prng& rng);
    const char* kind() const override { return "conv1d"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override { out.push_back(&weight_); }
    void add_flops(FlopReport& report) const override;

    Param weight_;  // [Cout,Cin,K]
    ConvSpec spec_;
    i64 out_len_ = 0;

private:
    i64 cin_, cout_, ksize_;
    Tensor x_;
};

// 1-D dynamic convolution with gap-conditioned kernel attention (no KR).
class DynamicConv1dLayer : public Layer {
public:
    DynamicConv1dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 K, i64 in_len,
                       Prng& rng);
    const char* kind() const override { return "dynamic_conv1d"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override;
    void add_flops(FlopReport& report) const override;
    const Tensor* last_attention() const override { return &attention_; }

    std::optional<Tensor> attention_override;

    KernelBank bank_;
    AttnGenParams gen_;
    ConvSpec spec_;
    i64 out_len_ = 0;

private:
    i64 cin_, cout_, ksize_, in_len_;
    Tensor x_, gap_feat_, z1_, h1_, logits_, attention_;
};

// Squeeze-and-excitation channel gate: sigmoid(W * gap(F) + b) scaling.
class ChannelGateLayer : public Layer {
public:
    ChannelGateLayer(std::string name_, i64 channels, i64 in_h, i64 in_w, Prng& rng);
    const char* kind() const override { return "channel_gate"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void add_flops(FlopReport& report) const override;
    const Tensor* last_attention() const override { return &attention_; }

    Param weight_, bias_;

private:
    i64 channels_, in_h_, in_w_;
    Tensor x_, gap_feat_, attention_;
};

class ReluLayer : public Layer {
public:
    explicit ReluLayer(std::string name_) { name = std::move(name_); }
    const char* kind() const override { return "relu"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    Tensor x_;
};

class MaxPool2dLayer : public Layer {
public:
    MaxPool2dLayer(std::string name_, i64 win, i64 stride) : win_(win), stride_(stride) {
        name = std::move(name_);
    }
    const char* kind() const override { return "maxpool2d"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    i64 win_, stride_;
    Tensor x_;
};

class MaxPool1dLayer : public Layer {
public:
    MaxPool1dLayer(std::string name_, i64 win, i64 stride) : win_(win), stride_(stride) {
        name = std::move(name_);
    }
    const char* kind() const override { return "maxpool1d"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    i64 win_, stride_;
    Tensor x_;
};

class GapLayer : public Layer {
public:
    explicit GapLayer(std::string name_) { name = std::move(name_); }
    const char* kind() const override { return "gap"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    Shape in_shape_;
};

class FlattenLayer : public Layer {
public:
    explicit FlattenLayer(std::string name_) { name = std::move(name_); }
    const char* kind() const override { return "flatten"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    Shape in_shape_;
};

class DenseLayer : public Layer {
public:
    DenseLayer(std::string name_, i64 din, i64 dout, Prng& rng);
    const char* kind() const override { return "dense"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }
    void add_flops(FlopReport& report) const override;

    Param weight_, bias_;

private:
    Tensor x_;
};

// Inverted dropout, active only in training forward passes.
class DropoutLayer : public Layer {
public:
    explicit DropoutLayer(std::string name_) { name = std::move(name_); }
    const char* kind() const override { return "dropout"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    Tensor mask_;
    bool active_ = false;
};

class UpsampleNearestLayer : public Layer {
public:
    UpsampleNearestLayer(std::string name_, i64 factor) : factor_(factor) { name = std::move(name_); }
    const char* kind() const override { return "upsample_nearest"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;

private:
    i64 factor_;
};

// relu(conv2(relu(conv1(x))) + shortcut(x)); the main-path convolutions are
// supplied by the preset (static, dynamic, hard or oriented), the projection
// shortcut stays static.
class ResidualBlock : public Layer {
public:
    ResidualBlock(std::string name_, LayerPtr conv1, LayerPtr conv2, LayerPtr projection);
    const char* kind() const override { return "residual_block"; }
    Tensor forward(const Tensor& x, ForwardCtx& ctx) override;
    Tensor backward(const Tensor& grad_out, ForwardCtx& ctx) override;
    void collect_params(std::vector<Param*>& out) override;
    void add_flops(FlopReport& report) const override;

    Layer* conv1() { return conv1_.get(); }
    Layer* conv2() { return conv2_.get(); }
    Layer* projection() { return projection_.get(); }

private:
    LayerPtr conv1_, conv2_, projection_;  // projection may be null (identity)
    Tensor y1_, a1_, pre_out_;
};

// He-normal initialization, std = sqrt(2/fan_in); biases start at zero.
Tensor he_normal(const Shape& shape, i64 fan_in, Prng& rng);

}  // namespace dynconv
