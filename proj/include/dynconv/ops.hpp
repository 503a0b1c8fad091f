#pragma once

#include <utility>

#include "dynconv/tensor.hpp"

namespace dynconv::ops {

// Every forward op here has hand-derived vector-Jacobian products. Batch
// kernels parallelize over samples (or output channels); each output cell is
// written by exactly one thread with a fixed-order inner sum, so results are
// bit-identical at any thread count.

enum class Act { Relu, Sigmoid, Tanh };

// -- convolution (cross-correlation, zero padding) --------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec);
Tensor conv2d_vjp_input(const Tensor& grad_out, const Tensor& kernel, const ConvSpec& spec,
                        const Shape& input_shape);
Tensor conv2d_vjp_kernel(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                         const Shape& kernel_shape);

Tensor conv1d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec);
Tensor conv1d_vjp_input(const Tensor& grad_out, const Tensor& kernel, const ConvSpec& spec,
                        const Shape& input_shape);
Tensor conv1d_vjp_kernel(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                         const Shape& kernel_shape);

// -- pooling -----------------------------------------------------------------

// Gradient routes to the first (row-major) maximum of each window.
Tensor maxpool2d(const Tensor& input, i64 win_h, i64 win_w, i64 stride_h, i64 stride_w);
Tensor maxpool2d_vjp(const Tensor& grad_out, const Tensor& input, i64 win_h, i64 win_w, i64 stride_h,
                     i64 stride_w);

Tensor maxpool1d(const Tensor& input, i64 win, i64 stride);
Tensor maxpool1d_vjp(const Tensor& grad_out, const Tensor& input, i64 win, i64 stride);

// Spatial mean per channel: [N,C,spatial...] -> [N,C].
Tensor gap(const Tensor& input);
Tensor gap_vjp(const Tensor& grad_out, const Shape& input_shape);

// -- dense / pointwise -------------------------------------------------------

// y = x W^T + b with x:[N,Din], W:[Dout,Din], b:[Dout].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor dense_vjp_input(const Tensor& grad_out, const Tensor& weight);
Tensor dense_vjp_weight(const Tensor& grad_out, const Tensor& input);
Tensor dense_vjp_bias(const Tensor& grad_out);

// relu'(0) := 0 so gradient checks are deterministic.
Tensor pointwise(const Tensor& input, Act fn);
Tensor pointwise_vjp(const Tensor& grad_out, const Tensor& input, const Tensor& output, Act fn);

// Row softmax over [N,C] (helper for attention generators).
Tensor softmax_rows(const Tensor& logits);
Tensor softmax_rows_vjp(const Tensor& grad_out, const Tensor& softmax_out);

// Mean categorical cross-entropy over [N,C] logits; gradient is
// (softmax - onehot)/N. Log-sum-exp subtracts the row max.
std::pair<double, Tensor> softmax_xent(const Tensor& logits, const std::vector<i64>& labels);

// Nearest-neighbor upsample by an integer factor: [N,C,H,W] -> [N,C,fH,fW].
Tensor upsample_nearest(const Tensor& input, i64 factor);
Tensor upsample_nearest_vjp(const Tensor& grad_out, i64 factor);

// -- single-sample kernels (used by per-sample dynamic convolutions) ---------

namespace detail {
void conv2d_sample(const double* x, const double* w, double* y, i64 Cin, i64 H, i64 W, i64 Cout, i64 Kh,
                   i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo);
void conv2d_sample_vjp_input(const double* gout, const double* w, double* gx, i64 Cin, i64 H, i64 W,
                             i64 Cout, i64 Kh, i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo);
void conv2d_sample_vjp_kernel(const double* gout, const double* x, double* gw, i64 Cin, i64 H, i64 W,
                              i64 Cout, i64 Kh, i64 Kw, const ConvSpec& spec, i64 Ho, i64 Wo);

void conv1d_sample(const double* x, const double* w, double* y, i64 Cin, i64 L, i64 Cout, i64 K,
                   const ConvSpec& spec, i64 Lo);
void conv1d_sample_vjp_input(const double* gout, const double* w, double* gx, i64 Cin, i64 L, i64 Cout,
                             i64 K, const ConvSpec& spec, i64 Lo);
void conv1d_sample_vjp_kernel(const double* gout, const double* x, double* gw, i64 Cin, i64 L, i64 Cout,
                              i64 K, const ConvSpec& spec, i64 Lo);
}  // namespace detail

}  // namespace dynconv::ops
