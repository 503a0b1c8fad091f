#include "dynconv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dynconv::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
    if (t.rank() != rank)
        throw DimensionError(std::string(op) + ": " + arg + " must be rank " + std::to_string(rank) +
                             ", got " + shape_str(t.shape()));
}

}  // namespace

// -- conv2d -------------------------------------------------------------------

namespace detail {

void conv2d_sample(const double* x, const double* w, double* y, i64 Cin, i64 H, i64 W, i64 Cout, i64 Kh,
                   i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 ho = 0; ho < Ho; ++ho) {
            const i64 hi0 = ho * spec.stride_h - spec.pad_h;
            const i64 kh_lo = std::max<i64>(0, -hi0);
            const i64 kh_hi = std::min<i64>(Kh, H - hi0);
            for (i64 wo = 0; wo < Wo; ++wo) {
                const i64 wi0 = wo * spec.stride_w - spec.pad_w;
                const i64 kw_lo = std::max<i64>(0, -wi0);
                const i64 kw_hi = std::min<i64>(Kw, W - wi0);
                double acc = 0.0;
                for (i64 ci = 0; ci < Cin; ++ci) {
                    const double* xc = x + (ci * H) * W;
                    const double* wc = w + ((co * Cin + ci) * Kh) * Kw;
                    for (i64 kh = kh_lo; kh < kh_hi; ++kh) {
                        const double* xrow = xc + (hi0 + kh) * W + wi0;
                        const double* wrow = wc + kh * Kw;
                        for (i64 kw = kw_lo; kw < kw_hi; ++kw) acc += xrow[kw] * wrow[kw];
                    }
                }
                y[(co * Ho + ho) * Wo + wo] = acc;
            }
        }
    }
}

void conv2d_sample_vjp_input(const double* gout, const double* w, double* gx, i64 Cin, i64 H, i64 W,
                             i64 Cout, i64 Kh, i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 ho = 0; ho < Ho; ++ho) {
            const i64 hi0 = ho * spec.stride_h - spec.pad_h;
            const i64 kh_lo = std::max<i64>(0, -hi0);
            const i64 kh_hi = std::min<i64>(Kh, H - hi0);
            for (i64 wo = 0; wo < Wo; ++wo) {
                const i64 wi0 = wo * spec.stride_w - spec.pad_w;
                const i64 kw_lo = std::max<i64>(0, -wi0);
                const i64 kw_hi = std::min<i64>(Kw, W - wi0);
                const double g = gout[(co * Ho + ho) * Wo + wo];
                if (g == 0.0) continue;
                for (i64 ci = 0; ci < Cin; ++ci) {
                    double* xc = gx + (ci * H) * W;
                    const double* wc = w + ((co * Cin + ci) * Kh) * Kw;
                    for (i64 kh = kh_lo; kh < kh_hi; ++kh) {
                        double* xrow = xc + (hi0 + kh) * W + wi0;
                        const double* wrow = wc + kh * Kw;
                        for (i64 kw = kw_lo; kw < kw_hi; ++kw) xrow[kw] += g * wrow[kw];
                    }
                }
            }
        }
    }
}

void conv2d_sample_vjp_kernel(const double* gout, const double* x, double* gw, i64 Cin, i64 H, i64 W,
                              i64 Cout, i64 Kh, i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 ci = 0; ci < Cin; ++ci) {
            const double* xc = x + (ci * H) * W;
            double* wc = gw + ((co * Cin + ci) * Kh) * Kw;
            for (i64 kh = 0; kh < Kh; ++kh) {
                for (i64 kw = 0; kw < Kw; ++kw) {
                    double acc = 0.0;
                    for (i64 ho = 0; ho < Ho; ++ho) {
                        const i64 hi = ho * spec.stride_h - spec.pad_h + kh;
                        if (hi < 0 || hi >= H) continue;
                        const double* grow = gout + (co * Ho + ho) * Wo;
                        const double* xrow = xc + hi * W;
                        for (i64 wo = 0; wo < Wo; ++wo) {
                            const i64 wi = wo * spec.stride_w - spec.pad_w + kw;
                            if (wi < 0 || wi >= W) continue;
                            acc += grow[wo] * xrow[wi];
                        }
                    }
                    wc[kh * Kw + kw] += acc;
                }
            }
        }
    }
}

void conv1d_sample(const double* x, const double* w, double* y, i64 Cin, i64 L, i64 Cout, i64 K,
                   const ConvSpec& spec, i64 Lo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 lo = 0; lo < Lo; ++lo) {
            const i64 li0 = lo * spec.stride_w - spec.pad_w;
            const i64 k_lo = std::max<i64>(0, -li0);
            const i64 k_hi = std::min<i64>(K, L - li0);
            double acc = 0.0;
            for (i64 ci = 0; ci < Cin; ++ci) {
                const double* xc = x + ci * L + li0;
                const double* wc = w + (co * Cin + ci) * K;
                for (i64 k = k_lo; k < k_hi; ++k) acc += xc[k] * wc[k];
            }
            y[co * Lo + lo] = acc;
        }
    }
}

void conv1d_sample_vjp_input(const double* gout, const double* w, double* gx, i64 Cin, i64 L, i64 Cout,
                             i64 K, const ConvSpec& spec, i64 Lo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 lo = 0; lo < Lo; ++lo) {
            const double g = gout[co * Lo + lo];
            if (g == 0.0) continue;
            const i64 li0 = lo * spec.stride_w - spec.pad_w;
            const i64 k_lo = std::max<i64>(0, -li0);
            const i64 k_hi = std::min<i64>(K, L - li0);
            for (i64 ci = 0; ci < Cin; ++ci) {
                double* xc = gx + ci * L + li0;
                const double* wc = w + (co * Cin + ci) * K;
                for (i64 k = k_lo; k < k_hi; ++k) xc[k] += g * wc[k];
            }
        }
    }
}

void conv1d_sample_vjp_kernel(const double* gout, const double* x, double* gw, i64 Cin, i64 L, i64 Cout,
                              i64 K, const ConvSpec& spec, i64 Lo) {
    for (i64 co = 0; co < Cout; ++co) {
        for (i64 ci = 0; ci < Cin; ++ci) {
            const double* xc = x + ci * L;
            double* wc = gw + (co * Cin + ci) * K;
            for (i64 k = 0; k < K; ++k) {
                double acc = 0.0;
                const double* grow = gout + co * Lo;
                for (i64 lo = 0; lo < Lo; ++lo) {
                    const i64 li = lo * spec.stride_w - spec.pad_w + k;
                    if (li < 0 || li >= L) continue;
                    acc += grow[lo] * xc[li];
                }
                wc[k] += acc;
            }
        }
    }
}

}  // namespace detail

static void check_conv2d_args(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    spec.validate();
    if (input.dim(1) != kernel.dim(1))
        throw DimensionError("conv2d: input channel axis Cin=" + std::to_string(input.dim(1)) +
                             " does not match kernel Cin=" + std::to_string(kernel.dim(1)));
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    check_conv2d_args(input, kernel, spec);
    const i64 N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const i64 Cout = kernel.dim(0), Kh = kernel.dim(2), Kw = kernel.dim(3);
    const i64 Ho = conv_out_size(H, Kh, spec.stride_h, spec.pad_h, "H");
    const i64 Wo = conv_out_size(W, Kw, spec.stride_w, spec.pad_w, "W");

    Tensor out({N, Cout, Ho, Wo});
    const i64 in_stride = Cin * H * W, out_stride = Cout * Ho * Wo;
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        detail::conv2d_sample(input.data() + n * in_stride, kernel.data(), out.data() + n * out_stride,
                              Cin, H, W, Cout, Kh, Kw, spec, Ho, Wo);
    debug_check_finite(out, "conv2d");
    return out;
}

Tensor conv2d_vjp_input(const Tensor& grad_out, const Tensor& kernel, const ConvSpec& spec,
                        const Shape& input_shape) {
    const i64 N = input_shape[0], Cin = input_shape[1], H = input_shape[2], W = input_shape[3];
    const i64 Cout = kernel.dim(0), Kh = kernel.dim(2), Kw = kernel.dim(3);
    const i64 Ho = grad_out.dim(2), Wo = grad_out.dim(3);

    Tensor gx(input_shape);
    const i64 in_stride = Cin * H * W, out_stride = Cout * Ho * Wo;
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        detail::conv2d_sample_vjp_input(grad_out.data() + n * out_stride, kernel.data(),
                                        gx.data() + n * in_stride, Cin, H, W, Cout, Kh, Kw, spec, Ho, Wo);
    return gx;
}

Tensor conv2d_vjp_kernel(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                         const Shape& kernel_shape) {
    const i64 N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const i64 Cout = kernel_shape[0], Kh = kernel_shape[2], Kw = kernel_shape[3];
    const i64 Ho = grad_out.dim(2), Wo = grad_out.dim(3);

    Tensor gw(kernel_shape);
    const i64 in_stride = Cin * H * W, out_stride = Cout * Ho * Wo;
    // Fixed n-order accumulation per kernel element keeps this deterministic.
    for (i64 n = 0; n < N; ++n)
        detail::conv2d_sample_vjp_kernel(grad_out.data() + n * out_stride, input.data() + n * in_stride,
                                         gw.data(), Cin, H, W, Cout, Kh, Kw, spec, Ho, Wo);
    return gw;
}

// -- conv1d -------------------------------------------------------------------

static void check_conv1d_args(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    require_rank(input, 3, "conv1d", "input");
    require_rank(kernel, 3, "conv1d", "kernel");
    spec.validate();
    if (input.dim(1) != kernel.dim(1))
        throw DimensionError("conv1d: input channel axis Cin=" + std::to_string(input.dim(1)) +
                             " does not match kernel Cin=" + std::to_string(kernel.dim(1)));
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec) {
    check_conv1d_args(input, kernel, spec);
    const i64 N = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const i64 Cout = kernel.dim(0), K = kernel.dim(2);
    const i64 Lo = conv_out_size(L, K, spec.stride_w, spec.pad_w, "L");

    Tensor out({N, Cout, Lo});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        detail::conv1d_sample(input.data() + n * Cin * L, kernel.data(), out.data() + n * Cout * Lo, Cin,
                              L, Cout, K, spec, Lo);
    debug_check_finite(out, "conv1d");
    return out;
}

Tensor conv1d_vjp_input(const Tensor& grad_out, const Tensor& kernel, const ConvSpec& spec,
                        const Shape& input_shape) {
    const i64 N = input_shape[0], Cin = input_shape[1], L = input_shape[2];
    const i64 Cout = kernel.dim(0), K = kernel.dim(2);
    const i64 Lo = grad_out.dim(2);
    Tensor gx(input_shape);
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        detail::conv1d_sample_vjp_input(grad_out.data() + n * Cout * Lo, kernel.data(),
                                        gx.data() + n * Cin * L, Cin, L, Cout, K, spec, Lo);
    return gx;
}

Tensor conv1d_vjp_kernel(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                         const Shape& kernel_shape) {
    const i64 N = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const i64 Cout = kernel_shape[0], K = kernel_shape[2];
    const i64 Lo = grad_out.dim(2);
    Tensor gw(kernel_shape);
    for (i64 n = 0; n < N; ++n)
        detail::conv1d_sample_vjp_kernel(grad_out.data() + n * Cout * Lo, input.data() + n * Cin * L,
                                         gw.data(), Cin, L, Cout, K, spec, Lo);
    return gw;
}

// -- pooling ------------------------------------------------------------------

Tensor maxpool2d(const Tensor& input, i64 win_h, i64 win_w, i64 stride_h, i64 stride_w) {
    require_rank(input, 4, "maxpool2d", "input");
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (win_h > H || win_w > W)
        throw DimensionError("maxpool2d: window " + std::to_string(win_h) + "x" + std::to_string(win_w) +
                             " larger than input " + std::to_string(H) + "x" + std::to_string(W));
    const i64 Ho = (H - win_h) / stride_h + 1;
    const i64 Wo = (W - win_w) / stride_w + 1;
    Tensor out({N, C, Ho, Wo});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            for (i64 ho = 0; ho < Ho; ++ho) {
                for (i64 wo = 0; wo < Wo; ++wo) {
                    double best = input.at4(n, c, ho * stride_h, wo * stride_w);
                    for (i64 kh = 0; kh < win_h; ++kh)
                        for (i64 kw = 0; kw < win_w; ++kw)
                            best = std::max(best, input.at4(n, c, ho * stride_h + kh, wo * stride_w + kw));
                    out.at4(n, c, ho, wo) = best;
                }
            }
        }
    }
    return out;
}

Tensor maxpool2d_vjp(const Tensor& grad_out, const Tensor& input, i64 win_h, i64 win_w, i64 stride_h,
                     i64 stride_w) {
    const i64 N = input.dim(0), C = input.dim(1);
    const i64 Ho = grad_out.dim(2), Wo = grad_out.dim(3);
    Tensor gx(input.shape());
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            for (i64 ho = 0; ho < Ho; ++ho) {
                for (i64 wo = 0; wo < Wo; ++wo) {
                    i64 bh = ho * stride_h, bw = wo * stride_w;
                    double best = input.at4(n, c, bh, bw);
                    for (i64 kh = 0; kh < win_h; ++kh) {
                        for (i64 kw = 0; kw < win_w; ++kw) {
                            const double v = input.at4(n, c, ho * stride_h + kh, wo * stride_w + kw);
                            if (v > best) {  // first occurrence wins ties
                                best = v;
                                bh = ho * stride_h + kh;
                                bw = wo * stride_w + kw;
                            }
                        }
                    }
                    gx.at4(n, c, bh, bw) += grad_out.at4(n, c, ho, wo);
                }
            }
        }
    }
    return gx;
}

Tensor maxpool1d(const Tensor& input, i64 win, i64 stride) {
    require_rank(input, 3, "maxpool1d", "input");
    const i64 N = input.dim(0), C = input.dim(1), L = input.dim(2);
    if (win > L)
        throw DimensionError("maxpool1d: window " + std::to_string(win) + " larger than input length " +
                             std::to_string(L));
    const i64 Lo = (L - win) / stride + 1;
    Tensor out({N, C, Lo});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            for (i64 lo = 0; lo < Lo; ++lo) {
                double best = input.at3(n, c, lo * stride);
                for (i64 k = 1; k < win; ++k) best = std::max(best, input.at3(n, c, lo * stride + k));
                out.at3(n, c, lo) = best;
            }
        }
    }
    return out;
}

Tensor maxpool1d_vjp(const Tensor& grad_out, const Tensor& input, i64 win, i64 stride) {
    const i64 N = input.dim(0), C = input.dim(1);
    const i64 Lo = grad_out.dim(2);
    Tensor gx(input.shape());
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            for (i64 lo = 0; lo < Lo; ++lo) {
                i64 bi = lo * stride;
                double best = input.at3(n, c, bi);
                for (i64 k = 1; k < win; ++k) {
                    const double v = input.at3(n, c, lo * stride + k);
                    if (v > best) {
                        best = v;
                        bi = lo * stride + k;
                    }
                }
                gx.at3(n, c, bi) += grad_out.at3(n, c, lo);
            }
        }
    }
    return gx;
}

Tensor gap(const Tensor& input) {
    if (input.rank() < 3)
        throw DimensionError("gap: input must have at least one spatial axis, got " +
                             shape_str(input.shape()));
    const i64 N = input.dim(0), C = input.dim(1);
    i64 spatial = 1;
    for (std::size_t i = 2; i < input.rank(); ++i) spatial *= input.dim(i);
    Tensor out({N, C});
    const double inv = 1.0 / static_cast<double>(spatial);
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            const double* p = input.data() + (n * C + c) * spatial;
            double acc = 0.0;
            for (i64 s = 0; s < spatial; ++s) acc += p[s];
            out.at2(n, c) = acc * inv;
        }
    }
    return out;
}

Tensor gap_vjp(const Tensor& grad_out, const Shape& input_shape) {
    const i64 N = input_shape[0], C = input_shape[1];
    i64 spatial = 1;
    for (std::size_t i = 2; i < input_shape.size(); ++i) spatial *= input_shape[i];
    Tensor gx(input_shape);
    const double inv = 1.0 / static_cast<double>(spatial);
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        for (i64 c = 0; c < C; ++c) {
            double* p = gx.data() + (n * C + c) * spatial;
            const double g = grad_out.at2(n, c) * inv;
            for (i64 s = 0; s < spatial; ++s) p[s] = g;
        }
    }
    return gx;
}

// -- dense ---------------------------------------------------------------------

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "dense", "input");
    require_rank(weight, 2, "dense", "weight");
    if (input.dim(1) != weight.dim(1))
        throw DimensionError("dense: input Din=" + std::to_string(input.dim(1)) +
                             " does not match weight Din=" + std::to_string(weight.dim(1)));
    if (bias.numel() != weight.dim(0))
        throw DimensionError("dense: bias length " + std::to_string(bias.numel()) +
                             " does not match Dout=" + std::to_string(weight.dim(0)));
    const i64 N = input.dim(0), Din = input.dim(1), Dout = weight.dim(0);
    Tensor out({N, Dout});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        const double* x = input.data() + n * Din;
        for (i64 o = 0; o < Dout; ++o) {
            const double* w = weight.data() + o * Din;
            double acc = bias[o];
            for (i64 i = 0; i < Din; ++i) acc += x[i] * w[i];
            out.at2(n, o) = acc;
        }
    }
    debug_check_finite(out, "dense");
    return out;
}

Tensor dense_vjp_input(const Tensor& grad_out, const Tensor& weight) {
    const i64 N = grad_out.dim(0), Dout = weight.dim(0), Din = weight.dim(1);
    Tensor gx({N, Din});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n) {
        const double* g = grad_out.data() + n * Dout;
        double* out = gx.data() + n * Din;
        for (i64 o = 0; o < Dout; ++o) {
            const double* w = weight.data() + o * Din;
            const double go = g[o];
            for (i64 i = 0; i < Din; ++i) out[i] += go * w[i];
        }
    }
    return gx;
}

Tensor dense_vjp_weight(const Tensor& grad_out, const Tensor& input) {
    const i64 N = grad_out.dim(0), Dout = grad_out.dim(1), Din = input.dim(1);
    Tensor gw({Dout, Din});
#pragma omp parallel for
    for (i64 o = 0; o < Dout; ++o) {
        double* w = gw.data() + o * Din;
        for (i64 n = 0; n < N; ++n) {
            const double g = grad_out.at2(n, o);
            const double* x = input.data() + n * Din;
            for (i64 i = 0; i < Din; ++i) w[i] += g * x[i];
        }
    }
    return gw;
}

Tensor dense_vjp_bias(const Tensor& grad_out) {
    const i64 N = grad_out.dim(0), Dout = grad_out.dim(1);
    Tensor gb({Dout});
    for (i64 n = 0; n < N; ++n)
        for (i64 o = 0; o < Dout; ++o) gb[o] += grad_out.at2(n, o);
    return gb;
}

// -- pointwise -------------------------------------------------------------------

Tensor pointwise(const Tensor& input, Act fn) {
    Tensor out(input.shape());
    const i64 n = input.numel();
    switch (fn) {
        case Act::Relu:
#pragma omp parallel for
            for (i64 i = 0; i < n; ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
            break;
        case Act::Sigmoid:
#pragma omp parallel for
            for (i64 i = 0; i < n; ++i) {
                // Keep saturated outputs strictly inside (0,1).
                const double s = 1.0 / (1.0 + std::exp(-input[i]));
                out[i] = std::min(std::max(s, std::numeric_limits<double>::min()),
                                  1.0 - std::numeric_limits<double>::epsilon() / 2.0);
            }
            break;
        case Act::Tanh:
#pragma omp parallel for
            for (i64 i = 0; i < n; ++i) out[i] = std::tanh(input[i]);
            break;
    }
    debug_check_finite(out, "pointwise");
    return out;
}

Tensor pointwise_vjp(const Tensor& grad_out, const Tensor& input, const Tensor& output, Act fn) {
    Tensor gx(input.shape());
    const i64 n = input.numel();
    switch (fn) {
        case Act::Relu:
            for (i64 i = 0; i < n; ++i) gx[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
            break;
        case Act::Sigmoid:
            for (i64 i = 0; i < n; ++i) gx[i] = grad_out[i] * output[i] * (1.0 - output[i]);
            break;
        case Act::Tanh:
            for (i64 i = 0; i < n; ++i) gx[i] = grad_out[i] * (1.0 - output[i] * output[i]);
            break;
    }
    return gx;
}

// -- softmax ------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "softmax", "logits");
    const i64 N = logits.dim(0), C = logits.dim(1);
    Tensor out({N, C});
    for (i64 n = 0; n < N; ++n) {
        const double* x = logits.data() + n * C;
        double* y = out.data() + n * C;
        double m = x[0];
        for (i64 c = 1; c < C; ++c) m = std::max(m, x[c]);
        double z = 0.0;
        for (i64 c = 0; c < C; ++c) {
            y[c] = std::exp(x[c] - m);
            z += y[c];
        }
        const double inv = 1.0 / z;
        for (i64 c = 0; c < C; ++c) y[c] *= inv;
    }
    return out;
}

Tensor softmax_rows_vjp(const Tensor& grad_out, const Tensor& softmax_out) {
    const i64 N = softmax_out.dim(0), C = softmax_out.dim(1);
    Tensor gx({N, C});
    for (i64 n = 0; n < N; ++n) {
        const double* a = softmax_out.data() + n * C;
        const double* g = grad_out.data() + n * C;
        double dot = 0.0;
        for (i64 c = 0; c < C; ++c) dot += g[c] * a[c];
        double* out = gx.data() + n * C;
        for (i64 c = 0; c < C; ++c) out[c] = a[c] * (g[c] - dot);
    }
    return gx;
}

std::pair<double, Tensor> softmax_xent(const Tensor& logits, const std::vector<i64>& labels) {
    require_rank(logits, 2, "softmax_xent", "logits");
    const i64 N = logits.dim(0), C = logits.dim(1);
    if (static_cast<i64>(labels.size()) != N)
        throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                             std::to_string(N));
    for (i64 n = 0; n < N; ++n)
        if (labels[n] < 0 || labels[n] >= C)
            throw ValidationError("softmax_xent: label " + std::to_string(labels[n]) + " at row " +
                                  std::to_string(n) + " outside [0," + std::to_string(C) + ")");

    Tensor grad({N, C});
    double loss = 0.0;
    const double invN = 1.0 / static_cast<double>(N);
    for (i64 n = 0; n < N; ++n) {
        const double* x = logits.data() + n * C;
        double m = x[0];
        for (i64 c = 1; c < C; ++c) m = std::max(m, x[c]);
        double z = 0.0;
        for (i64 c = 0; c < C; ++c) z += std::exp(x[c] - m);
        const double logz = std::log(z);
        loss += (logz + m - x[labels[n]]) * invN;
        double* g = grad.data() + n * C;
        for (i64 c = 0; c < C; ++c) g[c] = std::exp(x[c] - m) / z * invN;
        g[labels[n]] -= invN;
    }
    return {loss, std::move(grad)};
}

// -- upsample -----------------------------------------------------------------------

Tensor upsample_nearest(const Tensor& input, i64 factor) {
    require_rank(input, 4, "upsample_nearest", "input");
    if (factor < 1) throw ValidationError("upsample_nearest: factor must be >= 1");
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    Tensor out({N, C, H * factor, W * factor});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 h = 0; h < H * factor; ++h)
                for (i64 w = 0; w < W * factor; ++w)
                    out.at4(n, c, h, w) = input.at4(n, c, h / factor, w / factor);
    return out;
}

Tensor upsample_nearest_vjp(const Tensor& grad_out, i64 factor) {
    const i64 N = grad_out.dim(0), C = grad_out.dim(1);
    const i64 Ho = grad_out.dim(2), Wo = grad_out.dim(3);
    Tensor gx({N, C, Ho / factor, Wo / factor});
#pragma omp parallel for
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 h = 0; h < Ho; ++h)
                for (i64 w = 0; w < Wo; ++w)
                    gx.at4(n, c, h / factor, w / factor) += grad_out.at4(n, c, h, w);
    return gx;
}

}  // namespace dynconv::ops
