#pragma once

#include <cstdint>

#include "nucleigan/nn.hpp"
#include "nucleigan/tensor.hpp"

namespace nucleigan {

struct LossWeights {
  double lambda_n = 70.0;   // H&E cycle G(S(n)) ≈ n
  double lambda_m = 10.0;   // mask cycle S(G(m)) ≈ m, relaxed
  double l1_weight = 100.0;
  double gp_weight = 10.0;
  bool gp_enabled = true;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// mean BCE(real, 1) + mean BCE(fake, 0) on pre-sigmoid score maps.
template <class T>
Tensor<T> gan_loss_discriminator(const Tensor<T>& real_scores, const Tensor<T>& fake_scores);

/// Non-saturating generator loss: mean BCE(fake, 1).
template <class T>
Tensor<T> gan_loss_generator(const Tensor<T>& fake_scores);

/// lambda_n * mean|n_rec - n| + lambda_m * mean|m_rec - m|, where
/// m_rec = S(G(m)) and n_rec = G(S(n)).
template <class T>
Tensor<T> cycle_loss(const Tensor<T>& m, const Tensor<T>& n, const Tensor<T>& m_rec,
                     const Tensor<T>& n_rec, const LossWeights& w);

/// Mean absolute difference.
template <class T>
Tensor<T> l1_term(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask);

template <class T>
struct ImageMaskPair {
  Tensor<T> image;  // may be undefined for an unconditional discriminator
  Tensor<T> mask;
};

struct PenaltyResult {
  double value = 0.0;      // mean over samples of (||grad|| - 1)^2
  double grad_norm = 0.0;  // mean over samples of ||grad||
  double t = 0.0;          // interpolation coefficient drawn from the seed
};

/// Two-sided gradient penalty on mask interpolates
/// x = t*real.mask + (1-t)*fake.mask, t ~ U[0,1] from `seed`, with the
/// discriminator conditioned on real.image (concatenated in front of x when
/// defined). The gradient is of the mean score w.r.t. x.
///
/// When `param_grad_scale` is non-zero, `param_grad_scale * d(value)/d(theta)`
/// is accumulated into the discriminator's parameter grads. The required
/// second derivative is taken as a central difference of parameter
/// gradients along the input-gradient direction (a Hessian-vector product),
/// which is exact inside a linear region of a piecewise-linear network.
/// Power-iteration updates are suspended for all passes.
template <class T>
PenaltyResult gradient_penalty(Network<T>& discriminator, const ImageMaskPair<T>& real,
                               const ImageMaskPair<T>& fake, std::uint64_t seed,
                               double param_grad_scale = 0.0);

}  // namespace nucleigan
