#pragma once

#include <vector>

#include "mscount/tensor.hpp"

// Differentiable kernels. Every op records its backward rule on `tape` when
// the tape is recording and at least one input requires grad. Shape errors
// throw std::invalid_argument naming the offending shapes.
namespace mscount::ops {

/// 2D cross-correlation. weights is (out_c, in_c, k, k), bias is (1, out_c, 1, 1).
/// Output spatial size is floor((h + 2*pad - k) / stride) + 1.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weights,
              const Tensor& bias, int stride = 1, int pad = 0);

/// 2x2 window, stride 2. Ties route the gradient to the first maximum in
/// row-major window order.
Tensor max_pool_2x2(Tape& tape, const Tensor& input);

/// Max over a bins x bins partition of the plane. Bin i covers rows
/// [floor(i*h/bins), floor((i+1)*h/bins)), likewise for columns.
Tensor adaptive_max_pool(Tape& tape, const Tensor& input, int bins);

/// Half-pixel-center bilinear resize with edge clamping. Upscaling only.
Tensor bilinear_upsample(Tape& tape, const Tensor& input, int out_h, int out_w);

Tensor concat_channels(Tape& tape, const std::vector<Tensor>& inputs);
Tensor slice_channels(Tape& tape, const Tensor& input, int begin, int count);

Tensor relu(Tape& tape, const Tensor& input);
Tensor sigmoid(Tape& tape, const Tensor& input);

/// Sum over all elements of (pred - target)^2, as a 1x1x1x1 tensor.
/// target is treated as a constant.
Tensor sum_squared_error(Tape& tape, const Tensor& pred, const Tensor& target);

Tensor sum(Tape& tape, const Tensor& input);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& input, double factor);

/// Copies one batch item out of a tensor (no gradient).
Tensor batch_item(const Tensor& input, int index);

}  // namespace mscount::ops
