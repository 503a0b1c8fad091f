#include "dynconv/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dynconv/metrics.hpp"

namespace dynconv {

using ops::Act;

Tensor he_normal(const Shape& shape, i64 fan_in, Prng& rng) {
    Tensor t(shape);
    rng.fill_normal(t, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    return t;
}

// -- spec-level operations ----------------------------------------------------

Tensor channel_attention(const Tensor& F, const Tensor& weight, const Tensor& bias) {
    if (F.rank() < 3) throw DimensionError("channel_attention: F needs spatial axes, got " + shape_str(F.shape()));
    const Tensor g = ops::gap(F);
    return ops::pointwise(ops::dense(g, weight, bias), Act::Sigmoid);
}

Tensor apply_channel_gate(const Tensor& F, const Tensor& A) {
    const i64 N = F.dim(0), C = F.dim(1);
    if (A.dim(0) != N || A.dim(1) != C)
        throw DimensionError("apply_channel_gate: attention " + shape_str(A.shape()) +
                             " does not match feature map " + shape_str(F.shape()));
    i64 spatial = 1;
    for (std::size_t i = 2; i < F.rank(); ++i) spatial *= F.dim(i);
    Tensor out(F.shape());
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            const double a = A.at2(n, c);
            const double* src = F.data() + (n * C + c) * spatial;
            double* dst = out.data() + (n * C + c) * spatial;
            for (i64 s = 0; s < spatial; ++s) dst[s] = a * src[s];
        }
    return out;
}

Tensor kernel_attention(const Tensor& kr_state, const Tensor& gap_feat, const AttnGenParams& p) {
    const Tensor in = kr_state.empty() ? gap_feat : concat_cols(kr_state, gap_feat);
    const Tensor h = ops::pointwise(ops::dense(in, p.w1.value, p.b1.value), Act::Relu);
    return ops::softmax_rows(ops::dense(h, p.w2.value, p.b2.value));
}

Tensor aggregate_kernels(const KernelBank& bank, const double* attention) {
    Tensor out(bank.kernel_shape());
    const i64 n = out.numel();
    for (i64 k = 0; k < bank.K(); ++k) {
        const double a = attention[k];
        const double* w = bank.kernels[static_cast<std::size_t>(k)].value.data();
        for (i64 i = 0; i < n; ++i) out[i] += a * w[i];
    }
    return out;
}

KernelRepresentation update_kernel_representation(const KernelRepresentation& prev,
                                                  const Tensor& gap_feat, const KrUpdateParams& p) {
    Tensor pre = ops::dense(prev.state, p.u.value, p.b.value);
    const Tensor from_gap = ops::dense(gap_feat, p.v.value, Tensor({p.v.value.dim(0)}));
    for (i64 i = 0; i < pre.numel(); ++i) pre[i] += from_gap[i];
    return {ops::pointwise(pre, Act::Tanh), prev.layer_index + 1};
}

GateMask hard_select(const std::vector<double>& logits, i64 k_active) {
    const i64 K = static_cast<i64>(logits.size());
    if (k_active < 1 || k_active > K)
        throw ValidationError("hard_select: k_active " + std::to_string(k_active) + " outside [1," +
                              std::to_string(K) + "]");
    std::vector<i64> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](i64 a, i64 b) { return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)]; });
    GateMask m;
    m.mask.assign(logits.size(), 0);
    m.k_active = k_active;
    for (i64 i = 0; i < k_active; ++i) m.mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    return m;
}

namespace {

// Source index map for the 8 dihedral variants: t in 0..3 rotates CCW by
// t*90 degrees, t in 4..7 horizontally mirrors the rotation t-4.
inline void dihedral_source(int t, i64 K, i64 i, i64 j, i64& si, i64& sj) {
    switch (t) {
        case 0: si = i; sj = j; break;
        case 1: si = j; sj = K - 1 - i; break;
        case 2: si = K - 1 - i; sj = K - 1 - j; break;
        case 3: si = K - 1 - j; sj = i; break;
        case 4: si = i; sj = K - 1 - j; break;
        case 5: si = K - 1 - j; sj = K - 1 - i; break;
        case 6: si = K - 1 - i; sj = j; break;
        default: si = j; sj = i; break;
    }
}

}  // namespace

Tensor dihedral_transform(const Tensor& kernel, int t) {
    const i64 Cout = kernel.dim(0), Cin = kernel.dim(1), K = kernel.dim(2);
    if (kernel.dim(2) != kernel.dim(3))
        throw ValidationError("dihedral_transform: kernel must be spatially square, got " +
                              shape_str(kernel.shape()));
    Tensor out(kernel.shape());
    for (i64 co = 0; co < Cout; ++co)
        for (i64 ci = 0; ci < Cin; ++ci)
            for (i64 i = 0; i < K; ++i)
                for (i64 j = 0; j < K; ++j) {
                    i64 si, sj;
                    dihedral_source(t, K, i, j, si, sj);
                    out.at4(co, ci, i, j) = kernel.at4(co, ci, si, sj);
                }
    return out;
}

void dihedral_transform_adjoint(const Tensor& grad_variant, int t, Tensor& grad_base) {
    const i64 Cout = grad_variant.dim(0), Cin = grad_variant.dim(1), K = grad_variant.dim(2);
    for (i64 co = 0; co < Cout; ++co)
        for (i64 ci = 0; ci < Cin; ++ci)
            for (i64 i = 0; i < K; ++i)
                for (i64 j = 0; j < K; ++j) {
                    i64 si, sj;
                    dihedral_source(t, K, i, j, si, sj);
                    grad_base.at4(co, ci, si, sj) += grad_variant.at4(co, ci, i, j);
                }
}

std::vector<Tensor> orient_bank(const KernelBank& bank) {
    const Shape& ks = bank.kernel_shape();
    if (ks[2] != ks[3])
        throw ValidationError("orient_bank: kernels must be spatially square, got " + shape_str(ks));
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(bank.K()) * 8);
    for (i64 k = 0; k < bank.K(); ++k)
        for (int t = 0; t < 8; ++t) out.push_back(dihedral_transform(bank.kernels[static_cast<std::size_t>(k)].value, t));
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    const i64 N = a.dim(0), A = a.dim(1), B = b.dim(1);
    Tensor out({N, A + B});
    for (i64 n = 0; n < N; ++n) {
        std::copy(a.data() + n * A, a.data() + (n + 1) * A, out.data() + n * (A + B));
        std::copy(b.data() + n * B, b.data() + (n + 1) * B, out.data() + n * (A + B) + A);
    }
    return out;
}

std::pair<Tensor, Tensor> split_cols(const Tensor& t, i64 width_a) {
    const i64 N = t.dim(0), W = t.dim(1), B = W - width_a;
    Tensor a({N, std::max<i64>(width_a, 1)});
    Tensor b({N, std::max<i64>(B, 1)});
    for (i64 n = 0; n < N; ++n) {
        if (width_a > 0) std::copy(t.data() + n * W, t.data() + n * W + width_a, a.data() + n * width_a);
        if (B > 0) std::copy(t.data() + n * W + width_a, t.data() + (n + 1) * W, b.data() + n * B);
    }
    return {std::move(a), std::move(b)};
}

// -- Conv2dLayer ---------------------------------------------------------------

Conv2dLayer::Conv2dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 in_h,
                         i64 in_w, Prng& rng)
    : spec_(spec), cin_(cin), cout_(cout), ksize_(ksize) {
    name = std::move(name_);
    weight_ = Param(name + ".w", he_normal({cout, cin, ksize, ksize}, cin * ksize * ksize, rng));
    out_h_ = conv_out_size(in_h, ksize, spec.stride_h, spec.pad_h, "H");
    out_w_ = conv_out_size(in_w, ksize, spec.stride_w, spec.pad_w, "W");
}

Tensor Conv2dLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::conv2d(x, weight_.value, spec_);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    if (!weight_.frozen) {
        Tensor gw = ops::conv2d_vjp_kernel(grad_out, x_, spec_, weight_.value.shape());
        for (i64 i = 0; i < gw.numel(); ++i) weight_.grad[i] += gw[i];
    }
    return ops::conv2d_vjp_input(grad_out, weight_.value, spec_, x_.shape());
}

void Conv2dLayer::add_flops(FlopReport& report) const {
    report.add(name, "convolution", flops_conv2d(cin_, cout_, ksize_, ksize_, out_h_, out_w_));
}

// -- DynamicConv2dBase -----------------------------------------------------------

DynamicConv2dBase::DynamicConv2dBase(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec,
                                     i64 K, i64 kr_dim, i64 attn_slots, i64 in_h, i64 in_w, Prng& rng)
    : kr_dim_(kr_dim), spec_(spec), cin_(cin), cout_(cout), ksize_(ksize), attn_slots_(attn_slots),
      in_h_(in_h), in_w_(in_w) {
    name = std::move(name_);
    if (K < 1) throw ValidationError("dynamic conv: bank size K must be >= 1");
    for (i64 k = 0; k < K; ++k)
        bank_.kernels.emplace_back(name + ".bank" + std::to_string(k),
                                   he_normal({cout, cin, ksize, ksize}, cin * ksize * ksize, rng));
    const i64 in_dim = kr_dim + cin;
    const i64 hidden = AttnGenParams::hidden_dim(in_dim);
    gen_.w1 = Param(name + ".gen.w1", he_normal({hidden, in_dim}, in_dim, rng));
    gen_.b1 = Param(name + ".gen.b1", Tensor({hidden}));
    gen_.w2 = Param(name + ".gen.w2", he_normal({attn_slots, hidden}, hidden, rng));
    gen_.b2 = Param(name + ".gen.b2", Tensor({attn_slots}));
    if (kr_dim > 0) {
        kr_.u = Param(name + ".kr.u", he_normal({kr_dim, kr_dim}, kr_dim, rng));
        kr_.v = Param(name + ".kr.v", he_normal({kr_dim, cin}, cin, rng));
        kr_.b = Param(name + ".kr.b", Tensor({kr_dim}));
    }
    k_active_ = std::max<i64>(1, K / 2);
    out_h_ = conv_out_size(in_h, ksize, spec.stride_h, spec.pad_h, "H");
    out_w_ = conv_out_size(in_w, ksize, spec.stride_w, spec.pad_w, "W");
}

void DynamicConv2dBase::refresh_slot_kernels() {
    slot_kernels_.clear();
    for (auto& k : bank_.kernels) slot_kernels_.push_back(k.value);
}

void DynamicConv2dBase::accumulate_slot_grad(i64 slot, const Tensor& grad) {
    Tensor& g = bank_.kernels[static_cast<std::size_t>(slot)].grad;
    for (i64 i = 0; i < g.numel(); ++i) g[i] += grad[i];
}

void OdConv2dLayer::refresh_slot_kernels() {
    slot_kernels_ = dynconv::orient_bank(bank_);
}

void OdConv2dLayer::accumulate_slot_grad(i64 slot, const Tensor& grad) {
    dihedral_transform_adjoint(grad, static_cast<int>(slot % 8),
                               bank_.kernels[static_cast<std::size_t>(slot / 8)].grad);
}

Tensor DynamicConv2dBase::forward(const Tensor& x, ForwardCtx& ctx) {
    const i64 N = x.dim(0);
    x_ = x;
    gap_feat_ = ops::gap(x);
    refresh_slot_kernels();

    if (kr_dim_ > 0) {
        kr_in_ = ctx.kr;
        Tensor pre = ops::dense(kr_in_, kr_.u.value, kr_.b.value);
        const Tensor from_gap = ops::dense(gap_feat_, kr_.v.value, Tensor({kr_dim_}));
        for (i64 i = 0; i < pre.numel(); ++i) pre[i] += from_gap[i];
        kr_out_ = ops::pointwise(pre, Act::Tanh);
        ctx.kr = kr_out_;
        ctx.kr_layer_index += 1;
        gen_in_ = concat_cols(kr_out_, gap_feat_);
    } else {
        gen_in_ = gap_feat_;
    }

    z1_ = ops::dense(gen_in_, gen_.w1.value, gen_.b1.value);
    h1_ = ops::pointwise(z1_, Act::Relu);
    logits_ = ops::dense(h1_, gen_.w2.value, gen_.b2.value);
    soft_attention_ = ops::softmax_rows(logits_);

    if (attention_override) {
        attention_ = *attention_override;
        masks_.clear();
    } else if (mode_ == Attention::Hard && !ctx.soft_surrogate) {
        attention_ = Tensor({N, attn_slots_});
        masks_.assign(static_cast<std::size_t>(N), GateMask{});
        for (i64 n = 0; n < N; ++n) {
            std::vector<double> row(logits_.data() + n * attn_slots_,
                                    logits_.data() + (n + 1) * attn_slots_);
            GateMask m = hard_select(row, k_active_);
            double mx = -1e300;
            for (i64 s = 0; s < attn_slots_; ++s)
                if (m.mask[static_cast<std::size_t>(s)]) mx = std::max(mx, row[static_cast<std::size_t>(s)]);
            double z = 0.0;
            for (i64 s = 0; s < attn_slots_; ++s)
                if (m.mask[static_cast<std::size_t>(s)]) z += std::exp(row[static_cast<std::size_t>(s)] - mx);
            for (i64 s = 0; s < attn_slots_; ++s)
                attention_.at2(n, s) =
                    m.mask[static_cast<std::size_t>(s)] ? std::exp(row[static_cast<std::size_t>(s)] - mx) / z : 0.0;
            masks_[static_cast<std::size_t>(n)] = std::move(m);
        }
    } else {
        attention_ = soft_attention_;
        masks_.clear();
    }

    const i64 H = x.dim(2), W = x.dim(3);
    const i64 wsize = cout_ * cin_ * ksize_ * ksize_;
    Tensor out({N, cout_, out_h_, out_w_});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        Tensor w_agg({cout_, cin_, ksize_, ksize_});
        for (i64 s = 0; s < attn_slots_; ++s) {
            const double a = attention_.at2(n, s);
            const double* w = slot_kernels_[static_cast<std::size_t>(s)].data();
            for (i64 i = 0; i < wsize; ++i) w_agg[i] += a * w[i];
        }
        ops::detail::conv2d_sample(x.data() + n * cin_ * H * W, w_agg.data(),
                                   out.data() + n * cout_ * out_h_ * out_w_, cin_, H, W, cout_, ksize_,
                                   ksize_, spec_, out_h_, out_w_);
    }
    debug_check_finite(out, "dynamic_conv2d");
    return out;
}

Tensor DynamicConv2dBase::backward(const Tensor& grad_out, ForwardCtx& ctx) {
    const i64 N = x_.dim(0), H = x_.dim(2), W = x_.dim(3);
    const i64 wsize = cout_ * cin_ * ksize_ * ksize_;

    Tensor gx(x_.shape());
    Tensor dwagg({N, wsize});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        Tensor w_agg({cout_, cin_, ksize_, ksize_});
        for (i64 s = 0; s < attn_slots_; ++s) {
            const double a = attention_.at2(n, s);
            const double* w = slot_kernels_[static_cast<std::size_t>(s)].data();
            for (i64 i = 0; i < wsize; ++i) w_agg[i] += a * w[i];
        }
        ops::detail::conv2d_sample_vjp_input(grad_out.data() + n * cout_ * out_h_ * out_w_, w_agg.data(),
                                             gx.data() + n * cin_ * H * W, cin_, H, W, cout_, ksize_,
                                             ksize_, spec_, out_h_, out_w_);
        ops::detail::conv2d_sample_vjp_kernel(grad_out.data() + n * cout_ * out_h_ * out_w_,
                                              x_.data() + n * cin_ * H * W, dwagg.data() + n * wsize,
                                              cin_, H, W, cout_, ksize_, ksize_, spec_, out_h_, out_w_);
    }

    // Attention cotangent: da[n,s] = <dWagg_n, slot kernel s>.
    Tensor da({N, attn_slots_});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        for (i64 s = 0; s < attn_slots_; ++s) {
            const double* g = dwagg.data() + n * wsize;
            const double* w = slot_kernels_[static_cast<std::size_t>(s)].data();
            double acc = 0.0;
            for (i64 i = 0; i < wsize; ++i) acc += g[i] * w[i];
            da.at2(n, s) = acc;
        }

    if (!bank_.frozen) {
        Tensor gslot({cout_, cin_, ksize_, ksize_});
        for (i64 s = 0; s < attn_slots_; ++s) {
            gslot.fill(0.0);
            for (i64 n = 0; n < N; ++n) {
                const double a = attention_.at2(n, s);
                if (a == 0.0) continue;
                const double* g = dwagg.data() + n * wsize;
                for (i64 i = 0; i < wsize; ++i) gslot[i] += a * g[i];
            }
            accumulate_slot_grad(s, gslot);
        }
    }

    // Straight-through: the hard mask's gradient is the soft softmax's.
    Tensor dlogits =
        attention_override ? Tensor({N, attn_slots_}) : ops::softmax_rows_vjp(da, soft_attention_);

    Tensor gw2 = ops::dense_vjp_weight(dlogits, h1_);
    for (i64 i = 0; i < gw2.numel(); ++i) gen_.w2.grad[i] += gw2[i];
    Tensor gb2 = ops::dense_vjp_bias(dlogits);
    for (i64 i = 0; i < gb2.numel(); ++i) gen_.b2.grad[i] += gb2[i];
    Tensor dh1 = ops::dense_vjp_input(dlogits, gen_.w2.value);
    Tensor dz1 = ops::pointwise_vjp(dh1, z1_, h1_, Act::Relu);
    Tensor gw1 = ops::dense_vjp_weight(dz1, gen_in_);
    for (i64 i = 0; i < gw1.numel(); ++i) gen_.w1.grad[i] += gw1[i];
    Tensor gb1 = ops::dense_vjp_bias(dz1);
    for (i64 i = 0; i < gb1.numel(); ++i) gen_.b1.grad[i] += gb1[i];
    Tensor dgen_in = ops::dense_vjp_input(dz1, gen_.w1.value);

    Tensor dgap;
    if (kr_dim_ > 0) {
        auto [dkr_from_gen, dgap1] = split_cols(dgen_in, kr_dim_);
        Tensor dkr_out = ctx.kr_grad;
        for (i64 i = 0; i < dkr_out.numel(); ++i) dkr_out[i] += dkr_from_gen[i];
        Tensor dpre(dkr_out.shape());
        for (i64 i = 0; i < dpre.numel(); ++i)
            dpre[i] = dkr_out[i] * (1.0 - kr_out_[i] * kr_out_[i]);
        Tensor gu = ops::dense_vjp_weight(dpre, kr_in_);
        for (i64 i = 0; i < gu.numel(); ++i) kr_.u.grad[i] += gu[i];
        Tensor gv = ops::dense_vjp_weight(dpre, gap_feat_);
        for (i64 i = 0; i < gv.numel(); ++i) kr_.v.grad[i] += gv[i];
        Tensor gb = ops::dense_vjp_bias(dpre);
        for (i64 i = 0; i < gb.numel(); ++i) kr_.b.grad[i] += gb[i];
        ctx.kr_grad = ops::dense_vjp_input(dpre, kr_.u.value);
        Tensor dgap2 = ops::dense_vjp_input(dpre, kr_.v.value);
        dgap = std::move(dgap1);
        for (i64 i = 0; i < dgap.numel(); ++i) dgap[i] += dgap2[i];
    } else {
        dgap = std::move(dgen_in);
    }

    const Tensor gx_gap = ops::gap_vjp(dgap, x_.shape());
    for (i64 i = 0; i < gx.numel(); ++i) gx[i] += gx_gap[i];
    return gx;
}

void DynamicConv2dBase::collect_params(std::vector<Param*>& out) {
    for (auto& k : bank_.kernels) out.push_back(&k);
    out.push_back(&gen_.w1);
    out.push_back(&gen_.b1);
    out.push_back(&gen_.w2);
    out.push_back(&gen_.b2);
    if (kr_dim_ > 0) {
        out.push_back(&kr_.u);
        out.push_back(&kr_.v);
        out.push_back(&kr_.b);
    }
}

void DynamicConv2dBase::add_flops(FlopReport& report) const {
    report.add(name, "convolution", flops_conv2d(cin_, cout_, ksize_, ksize_, out_h_, out_w_));
    i64 gen = in_h_ * in_w_ * cin_;  // gap adds
    const i64 in_dim = kr_dim_ + cin_;
    const i64 hidden = AttnGenParams::hidden_dim(in_dim);
    if (kr_dim_ > 0) gen += flops_dense(kr_dim_, kr_dim_) + flops_dense(cin_, kr_dim_);
    gen += flops_dense(in_dim, hidden) + flops_dense(hidden, attn_slots_);
    report.add(name, "attention-generator", gen);
    const i64 agg_kernels = (mode_ == Attention::Hard) ? k_active_ : attn_slots_;
    report.add(name, "other", 2 * agg_kernels * cout_ * cin_ * ksize_ * ksize_);
}

// -- Conv1dLayer -------------------------------------------------------------------

Conv1dLayer::Conv1dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec, i64 in_len,
                         Prng& rng)
    : spec_(spec), cin_(cin), cout_(cout), ksize_(ksize) {
    name = std::move(name_);
    weight_ = Param(name + ".w", he_normal({cout, cin, ksize}, cin * ksize, rng));
    out_len_ = conv_out_size(in_len, ksize, spec.stride_w, spec.pad_w, "L");
}

Tensor Conv1dLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::conv1d(x, weight_.value, spec_);
}

Tensor Conv1dLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    if (!weight_.frozen) {
        Tensor gw = ops::conv1d_vjp_kernel(grad_out, x_, spec_, weight_.value.shape());
        for (i64 i = 0; i < gw.numel(); ++i) weight_.grad[i] += gw[i];
    }
    return ops::conv1d_vjp_input(grad_out, weight_.value, spec_, x_.shape());
}

void Conv1dLayer::add_flops(FlopReport& report) const {
    report.add(name, "convolution", flops_conv1d(cin_, cout_, ksize_, out_len_));
}

// -- DynamicConv1dLayer ----------------------------------------------------------------

DynamicConv1dLayer::DynamicConv1dLayer(std::string name_, i64 cin, i64 cout, i64 ksize, ConvSpec spec,
                                       i64 K, i64 in_len, Prng& rng)
    : spec_(spec), cin_(cin), cout_(cout), ksize_(ksize), in_len_(in_len) {
    name = std::move(name_);
    for (i64 k = 0; k < K; ++k)
        bank_.kernels.emplace_back(name + ".bank" + std::to_string(k),
                                   he_normal({cout, cin, ksize}, cin * ksize, rng));
    const i64 hidden = AttnGenParams::hidden_dim(cin);
    gen_.w1 = Param(name + ".gen.w1", he_normal({hidden, cin}, cin, rng));
    gen_.b1 = Param(name + ".gen.b1", Tensor({hidden}));
    gen_.w2 = Param(name + ".gen.w2", he_normal({K, hidden}, hidden, rng));
    gen_.b2 = Param(name + ".gen.b2", Tensor({K}));
    out_len_ = conv_out_size(in_len, ksize, spec.stride_w, spec.pad_w, "L");
}

Tensor DynamicConv1dLayer::forward(const Tensor& x, ForwardCtx&) {
    const i64 N = x.dim(0), L = x.dim(2), K = bank_.K();
    x_ = x;
    gap_feat_ = ops::gap(x);
    z1_ = ops::dense(gap_feat_, gen_.w1.value, gen_.b1.value);
    h1_ = ops::pointwise(z1_, Act::Relu);
    logits_ = ops::dense(h1_, gen_.w2.value, gen_.b2.value);
    attention_ = attention_override ? *attention_override : ops::softmax_rows(logits_);

    const i64 wsize = cout_ * cin_ * ksize_;
    Tensor out({N, cout_, out_len_});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        Tensor w_agg({cout_, cin_, ksize_});
        for (i64 k = 0; k < K; ++k) {
            const double a = attention_.at2(n, k);
            const double* w = bank_.kernels[static_cast<std::size_t>(k)].value.data();
            for (i64 i = 0; i < wsize; ++i) w_agg[i] += a * w[i];
        }
        ops::detail::conv1d_sample(x.data() + n * cin_ * L, w_agg.data(), out.data() + n * cout_ * out_len_,
                                   cin_, L, cout_, ksize_, spec_, out_len_);
    }
    return out;
}

Tensor DynamicConv1dLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    const i64 N = x_.dim(0), L = x_.dim(2), K = bank_.K();
    const i64 wsize = cout_ * cin_ * ksize_;

    Tensor gx(x_.shape());
    Tensor dwagg({N, wsize});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        Tensor w_agg({cout_, cin_, ksize_});
        for (i64 k = 0; k < K; ++k) {
            const double a = attention_.at2(n, k);
            const double* w = bank_.kernels[static_cast<std::size_t>(k)].value.data();
            for (i64 i = 0; i < wsize; ++i) w_agg[i] += a * w[i];
        }
        ops::detail::conv1d_sample_vjp_input(grad_out.data() + n * cout_ * out_len_, w_agg.data(),
                                             gx.data() + n * cin_ * L, cin_, L, cout_, ksize_, spec_,
                                             out_len_);
        ops::detail::conv1d_sample_vjp_kernel(grad_out.data() + n * cout_ * out_len_,
                                              x_.data() + n * cin_ * L, dwagg.data() + n * wsize, cin_, L,
                                              cout_, ksize_, spec_, out_len_);
    }

    Tensor da({N, K});
    for (i64 n = 0; n < N; ++n)
        for (i64 k = 0; k < K; ++k) {
            const double* g = dwagg.data() + n * wsize;
            const double* w = bank_.kernels[static_cast<std::size_t>(k)].value.data();
            double acc = 0.0;
            for (i64 i = 0; i < wsize; ++i) acc += g[i] * w[i];
            da.at2(n, k) = acc;
        }

    if (!bank_.frozen) {
        for (i64 k = 0; k < K; ++k) {
            Tensor& g = bank_.kernels[static_cast<std::size_t>(k)].grad;
            for (i64 n = 0; n < N; ++n) {
                const double a = attention_.at2(n, k);
                const double* gw = dwagg.data() + n * wsize;
                for (i64 i = 0; i < wsize; ++i) g[i] += a * gw[i];
            }
        }
    }

    Tensor dlogits = attention_override ? Tensor({N, K}) : ops::softmax_rows_vjp(da, attention_);
    Tensor gw2 = ops::dense_vjp_weight(dlogits, h1_);
    for (i64 i = 0; i < gw2.numel(); ++i) gen_.w2.grad[i] += gw2[i];
    Tensor gb2 = ops::dense_vjp_bias(dlogits);
    for (i64 i = 0; i < gb2.numel(); ++i) gen_.b2.grad[i] += gb2[i];
    Tensor dh1 = ops::dense_vjp_input(dlogits, gen_.w2.value);
    Tensor dz1 = ops::pointwise_vjp(dh1, z1_, h1_, Act::Relu);
    Tensor gw1 = ops::dense_vjp_weight(dz1, gap_feat_);
    for (i64 i = 0; i < gw1.numel(); ++i) gen_.w1.grad[i] += gw1[i];
    Tensor gb1 = ops::dense_vjp_bias(dz1);
    for (i64 i = 0; i < gb1.numel(); ++i) gen_.b1.grad[i] += gb1[i];
    Tensor dgap = ops::dense_vjp_input(dz1, gen_.w1.value);

    const Tensor gx_gap = ops::gap_vjp(dgap, x_.shape());
    for (i64 i = 0; i < gx.numel(); ++i) gx[i] += gx_gap[i];
    return gx;
}

void DynamicConv1dLayer::collect_params(std::vector<Param*>& out) {
    for (auto& k : bank_.kernels) out.push_back(&k);
    out.push_back(&gen_.w1);
    out.push_back(&gen_.b1);
    out.push_back(&gen_.w2);
    out.push_back(&gen_.b2);
}

void DynamicConv1dLayer::add_flops(FlopReport& report) const {
    report.add(name, "convolution", flops_conv1d(cin_, cout_, ksize_, out_len_));
    const i64 hidden = AttnGenParams::hidden_dim(cin_);
    report.add(name, "attention-generator",
               in_len_ * cin_ + flops_dense(cin_, hidden) + flops_dense(hidden, bank_.K()));
    report.add(name, "other", 2 * bank_.K() * cout_ * cin_ * ksize_);
}

// -- ChannelGateLayer --------------------------------------------------------------------

ChannelGateLayer::ChannelGateLayer(std::string name_, i64 channels, i64 in_h, i64 in_w, Prng& rng)
    : channels_(channels), in_h_(in_h), in_w_(in_w) {
    name = std::move(name_);
    weight_ = Param(name + ".w", he_normal({channels, channels}, channels, rng));
    bias_ = Param(name + ".b", Tensor({channels}));
}

Tensor ChannelGateLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    gap_feat_ = ops::gap(x);
    attention_ = ops::pointwise(ops::dense(gap_feat_, weight_.value, bias_.value), Act::Sigmoid);
    return apply_channel_gate(x, attention_);
}

Tensor ChannelGateLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    const i64 N = x_.dim(0), C = x_.dim(1);
    i64 spatial = 1;
    for (std::size_t i = 2; i < x_.rank(); ++i) spatial *= x_.dim(i);

    Tensor da({N, C});
    Tensor gx(x_.shape());
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            const double a = attention_.at2(n, c);
            const double* g = grad_out.data() + (n * C + c) * spatial;
            const double* x = x_.data() + (n * C + c) * spatial;
            double* out = gx.data() + (n * C + c) * spatial;
            double acc = 0.0;
            for (i64 s = 0; s < spatial; ++s) {
                acc += g[s] * x[s];
                out[s] = a * g[s];
            }
            da.at2(n, c) = acc;
        }

    Tensor ds({N, C});
    for (i64 i = 0; i < ds.numel(); ++i) ds[i] = da[i] * attention_[i] * (1.0 - attention_[i]);
    Tensor gw = ops::dense_vjp_weight(ds, gap_feat_);
    for (i64 i = 0; i < gw.numel(); ++i) weight_.grad[i] += gw[i];
    Tensor gb = ops::dense_vjp_bias(ds);
    for (i64 i = 0; i < gb.numel(); ++i) bias_.grad[i] += gb[i];
    Tensor dgap = ops::dense_vjp_input(ds, weight_.value);
    const Tensor gx_gap = ops::gap_vjp(dgap, x_.shape());
    for (i64 i = 0; i < gx.numel(); ++i) gx[i] += gx_gap[i];
    return gx;
}

void ChannelGateLayer::add_flops(FlopReport& report) const {
    report.add(name, "attention-generator", in_h_ * in_w_ * channels_ + flops_dense(channels_, channels_));
    report.add(name, "other", in_h_ * in_w_ * channels_);  // the gate multiply
}

// -- elementwise / shape layers --------------------------------------------------------------

Tensor ReluLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::pointwise(x, Act::Relu);
}

Tensor ReluLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    Tensor gx(x_.shape());
    for (i64 i = 0; i < gx.numel(); ++i) gx[i] = x_[i] > 0.0 ? grad_out[i] : 0.0;
    return gx;
}

Tensor MaxPool2dLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::maxpool2d(x, win_, win_, stride_, stride_);
}

Tensor MaxPool2dLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    return ops::maxpool2d_vjp(grad_out, x_, win_, win_, stride_, stride_);
}

Tensor MaxPool1dLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::maxpool1d(x, win_, stride_);
}

Tensor MaxPool1dLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    return ops::maxpool1d_vjp(grad_out, x_, win_, stride_);
}

Tensor GapLayer::forward(const Tensor& x, ForwardCtx&) {
    in_shape_ = x.shape();
    return ops::gap(x);
}

Tensor GapLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    return ops::gap_vjp(grad_out, in_shape_);
}

Tensor FlattenLayer::forward(const Tensor& x, ForwardCtx&) {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.numel() / x.dim(0)});
}

Tensor FlattenLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    return grad_out.reshaped(in_shape_);
}

DenseLayer::DenseLayer(std::string name_, i64 din, i64 dout, Prng& rng) {
    name = std::move(name_);
    weight_ = Param(name + ".w", he_normal({dout, din}, din, rng));
    bias_ = Param(name + ".b", Tensor({dout}));
}

Tensor DenseLayer::forward(const Tensor& x, ForwardCtx&) {
    x_ = x;
    return ops::dense(x, weight_.value, bias_.value);
}

Tensor DenseLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    if (!weight_.frozen) {
        Tensor gw = ops::dense_vjp_weight(grad_out, x_);
        for (i64 i = 0; i < gw.numel(); ++i) weight_.grad[i] += gw[i];
    }
    if (!bias_.frozen) {
        Tensor gb = ops::dense_vjp_bias(grad_out);
        for (i64 i = 0; i < gb.numel(); ++i) bias_.grad[i] += gb[i];
    }
    return ops::dense_vjp_input(grad_out, weight_.value);
}

void DenseLayer::add_flops(FlopReport& report) const {
    report.add(name, "dense", flops_dense(weight_.value.dim(1), weight_.value.dim(0)));
}

Tensor DropoutLayer::forward(const Tensor& x, ForwardCtx& ctx) {
    active_ = ctx.training && ctx.dropout_rate > 0.0 && ctx.dropout_rng != nullptr;
    if (!active_) return x;
    const double keep = 1.0 - ctx.dropout_rate;
    mask_ = Tensor(x.shape());
    Tensor out(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) {
        mask_[i] = ctx.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
        out[i] = x[i] * mask_[i];
    }
    return out;
}

Tensor DropoutLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    if (!active_) return grad_out;
    Tensor gx(grad_out.shape());
    for (i64 i = 0; i < gx.numel(); ++i) gx[i] = grad_out[i] * mask_[i];
    return gx;
}

Tensor UpsampleNearestLayer::forward(const Tensor& x, ForwardCtx&) {
    return ops::upsample_nearest(x, factor_);
}

Tensor UpsampleNearestLayer::backward(const Tensor& grad_out, ForwardCtx&) {
    return ops::upsample_nearest_vjp(grad_out, factor_);
}

// -- ResidualBlock --------------------------------------------------------------------------

ResidualBlock::ResidualBlock(std::string name_, LayerPtr conv1, LayerPtr conv2, LayerPtr projection)
    : conv1_(std::move(conv1)), conv2_(std::move(conv2)), projection_(std::move(projection)) {
    name = std::move(name_);
}

Tensor ResidualBlock::forward(const Tensor& x, ForwardCtx& ctx) {
    y1_ = conv1_->forward(x, ctx);
    a1_ = ops::pointwise(y1_, Act::Relu);
    Tensor y2 = conv2_->forward(a1_, ctx);
    Tensor skip = projection_ ? projection_->forward(x, ctx) : x;
    pre_out_ = std::move(y2);
    for (i64 i = 0; i < pre_out_.numel(); ++i) pre_out_[i] += skip[i];
    return ops::pointwise(pre_out_, Act::Relu);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, ForwardCtx& ctx) {
    Tensor gpre(grad_out.shape());
    for (i64 i = 0; i < gpre.numel(); ++i) gpre[i] = pre_out_[i] > 0.0 ? grad_out[i] : 0.0;

    Tensor ga1 = conv2_->backward(gpre, ctx);
    Tensor gy1(ga1.shape());
    for (i64 i = 0; i < gy1.numel(); ++i) gy1[i] = y1_[i] > 0.0 ? ga1[i] : 0.0;
    Tensor gx = conv1_->backward(gy1, ctx);

    if (projection_) {
        Tensor gskip = projection_->backward(gpre, ctx);
        for (i64 i = 0; i < gx.numel(); ++i) gx[i] += gskip[i];
    } else {
        for (i64 i = 0; i < gx.numel(); ++i) gx[i] += gpre[i];
    }
    return gx;
}

void ResidualBlock::collect_params(std::vector<Param*>& out) {
    conv1_->collect_params(out);
    conv2_->collect_params(out);
    if (projection_) projection_->collect_params(out);
}

void ResidualBlock::add_flops(FlopReport& report) const {
    conv1_->add_flops(report);
    conv2_->add_flops(report);
    if (projection_) projection_->add_flops(report);
}

}  // namespace dynconv
