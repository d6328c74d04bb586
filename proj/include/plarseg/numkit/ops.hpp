#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "plarseg/numkit/tensor.hpp"

// Differentiable layer set. Image tensors are single images laid out C x H x W.
namespace plarseg::numkit {

inline constexpr int kIgnoreId = 255;

// Stride-1 2-D convolution. kernel: Cout x Cin x k x k, bias: Cout.
// Output spatial size is H + 2*padding - dilation*(k-1).
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding, int dilation = 1);

// Shape-preserving convolution for odd k: padding = dilation*(k-1)/2.
Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias, int dilation = 1);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Weighted sum of scalar tensors.
Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<float>& weights);

Tensor reshape(const Tensor& x, Shape shape);
// Element `index` of x as a scalar tensor.
Tensor select(const Tensor& x, int index);
// lambda * a + (1 - lambda) * b, with lambda a one-element tensor.
Tensor lerp(const Tensor& lambda, const Tensor& a, const Tensor& b);

// 2x2 average pooling, stride 2. H and W must be even.
Tensor avg_pool2(const Tensor& x);
// Per-channel spatial mean: C x H x W -> C x 1 x 1.
Tensor global_avg_pool(const Tensor& x);
// Nearest-neighbour resampling: source index = floor(dst * src_size / dst_size).
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);
Tensor concat_channels(const std::vector<Tensor>& parts);

// Single-group normalization over C x H x W with per-channel affine.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// y = W x + b with x of length n, W: m x n, b: m.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LossDiagnostics {
  std::size_t valid_pixels = 0;
  bool all_ignored = false;
};

// Mean over non-ignored pixels of -log softmax(logits)[target]. logits: K x H x W,
// targets: H*W ids in [0, K) or ignore_id. Reductions run in double.
Tensor softmax_cross_entropy_masked(const Tensor& logits, std::span<const std::uint8_t> targets,
                                    int ignore_id = kIgnoreId, LossDiagnostics* diag = nullptr);

// Mean binary cross entropy of sigmoid(logits) against 0/1 targets over pixels
// where valid != 0 (all pixels when valid is empty).
Tensor sigmoid_bce_masked(const Tensor& logits, std::span<const float> targets,
                          std::span<const std::uint8_t> valid = {}, LossDiagnostics* diag = nullptr);

// Non-differentiable helpers.
Tensor softmax_channels(const Tensor& logits);
std::vector<std::uint8_t> argmax_channels(const Tensor& scores);

}  // namespace plarseg::numkit
