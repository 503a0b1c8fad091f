#pragma once

#include "dynconv/tensor.hpp"

// Plain serial implementations of the heavy kernels, written against an
// explicit zero-padded buffer rather than implicit bounds. Kept as the
// cross-check for the OpenMP kernels and as the baseline in bench_kernels.
namespace dynconv::ref {

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec);
Tensor conv1d(const Tensor& input, const Tensor& kernel, const ConvSpec& spec);
Tensor maxpool2d(const Tensor& input, i64 win_h, i64 win_w, i64 stride_h, i64 stride_w);
Tensor gap(const Tensor& input);
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

}  // namespace dynconv::ref
