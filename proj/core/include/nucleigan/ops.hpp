#pragma once

#include <vector>

#include "nucleigan/tensor.hpp"

/// Differentiable tensor operations. Each op records a backward closure when
/// gradients are enabled and any input requires grad.
namespace nucleigan::ops {

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
template <class T> Tensor<T> add_scalar(const Tensor<T>& a, T s);

template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);

/// mean |a - b|; subgradient 0 where a == b.
template <class T> Tensor<T> l1_mean(const Tensor<T>& a, const Tensor<T>& b);
/// mean over elements of BCE(sigmoid(logits), target) in natural log, using
/// max(x,0) - x*t + log1p(exp(-|x|)).
template <class T> Tensor<T> bce_with_logits_mean(const Tensor<T>& logits, T target);

template <class T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <class T> Tensor<T> relu(const Tensor<T>& x) { return leaky_relu(x, T(0)); }
template <class T> Tensor<T> tanh(const Tensor<T>& x);

/// Concatenates along the channel axis.
template <class T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation with zero padding. weight: [out, in, k, k]; bias: [out] or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad);

/// Fractionally-strided convolution (adjoint of conv2d).
/// weight: [in, out, k, k]; output extent (H-1)*stride - 2*pad + k + output_pad.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int pad, int output_pad);

/// Mirror padding without edge repeat; pad must be < H and < W.
template <class T> Tensor<T> reflection_pad(const Tensor<T>& x, int pad);

/// Per-sample, per-channel normalization without affine parameters.
template <class T> Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));

/// Per-channel normalization over (N, H, W) using the current batch statistics.
template <class T> Tensor<T> batch_norm(const Tensor<T>& x, T eps = T(1e-5));

/// W / sigma(W) with sigma estimated by power iteration on the
/// [shape.n x rest] view of `weight`. `u` is the persistent left singular
/// vector estimate; it is overwritten when `update_u` is set. The gradient
/// treats u and v as constants.
template <class T>
Tensor<T> spectral_normalized(const Tensor<T>& weight, std::vector<T>& u, int power_iters,
                              bool update_u);

}  // namespace nucleigan::ops
