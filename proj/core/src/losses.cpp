#include "nucleigan/losses.hpp"

#include <cmath>

#include "nucleigan/errors.hpp"
#include "nucleigan/ops.hpp"
#include "nucleigan/rng.hpp"

namespace nucleigan {

void LossWeights::validate() const {
  if (lambda_n < 0 || lambda_m < 0 || l1_weight < 0 || gp_weight < 0)
    throw ArgumentError("loss weights must be non-negative");
}

template <class T>
Tensor<T> gan_loss_discriminator(const Tensor<T>& real_scores, const Tensor<T>& fake_scores) {
  if (!(real_scores.shape() == fake_scores.shape()))
    throw ArgumentError("gan_loss_discriminator: score maps differ in shape " +
                        real_scores.shape().str() + " vs " + fake_scores.shape().str());
  return ops::add(ops::bce_with_logits_mean(real_scores, T(1)),
                  ops::bce_with_logits_mean(fake_scores, T(0)));
}

template <class T>
Tensor<T> gan_loss_generator(const Tensor<T>& fake_scores) {
  return ops::bce_with_logits_mean(fake_scores, T(1));
}

template <class T>
Tensor<T> cycle_loss(const Tensor<T>& m, const Tensor<T>& n, const Tensor<T>& m_rec,
                     const Tensor<T>& n_rec, const LossWeights& w) {
  w.validate();
  return ops::add(ops::scale(ops::l1_mean(n_rec, n), static_cast<T>(w.lambda_n)),
                  ops::scale(ops::l1_mean(m_rec, m), static_cast<T>(w.lambda_m)));
}

template <class T>
Tensor<T> l1_term(const Tensor<T>& pred_mask, const Tensor<T>& gt_mask) {
  return ops::l1_mean(pred_mask, gt_mask);
}

namespace {

template <class T>
class SuspendPowerIteration {
 public:
  explicit SuspendPowerIteration(Network<T>& net)
      : net_(net), previous_(net.power_iteration_updates()) {
    net_.set_power_iteration_updates(false);
  }
  ~SuspendPowerIteration() { net_.set_power_iteration_updates(previous_); }

 private:
  Network<T>& net_;
  bool previous_;
};

template <class T>
Tensor<T> discriminator_input(const ImageMaskPair<T>& cond, const Tensor<T>& x) {
  if (!cond.image.defined()) return x;
  return ops::concat_channels(cond.image.detach(), x);
}

}  // namespace

template <class T>
PenaltyResult gradient_penalty(Network<T>& discriminator, const ImageMaskPair<T>& real,
                               const ImageMaskPair<T>& fake, std::uint64_t seed,
                               double param_grad_scale) {
  if (!(real.mask.shape() == fake.mask.shape()))
    throw ArgumentError("gradient_penalty: real and fake masks differ in shape");
  SuspendPowerIteration<T> suspend(discriminator);

  const Shape shape = real.mask.shape();
  Rng rng(seed);
  const double t = rng.uniform();
  std::vector<T> interp(shape.numel());
  {
    auto r = real.mask.data(), f = fake.mask.data();
    for (std::size_t i = 0; i < interp.size(); ++i)
      interp[i] = static_cast<T>(t * r[i] + (1.0 - t) * f[i]);
  }

  // Input gradient of the mean score, without touching parameter grads.
  std::vector<T> grad(shape.numel(), T(0));
  {
    auto params = discriminator.parameter_tensors();
    std::vector<bool> flags;
    for (auto& p : params) {
      flags.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
    Tensor<T> x(shape, interp, true);
    Tensor<T> s = ops::mean(discriminator.forward(discriminator_input(real, x)));
    s.backward();
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), grad.begin());
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(flags[i]);
  }

  const std::size_t per = shape.numel() / shape.n;
  const double batch = shape.n;
  PenaltyResult out;
  out.t = t;
  std::vector<double> direction(shape.numel(), 0.0);
  for (int n = 0; n < shape.n; ++n) {
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double g = static_cast<double>(grad[n * per + i]) * batch;
      sq += g * g;
    }
    const double norm = std::sqrt(sq);
    out.value += (norm - 1.0) * (norm - 1.0) / batch;
    out.grad_norm += norm / batch;
    if (norm > 0.0) {
      const double coef = 2.0 * (norm - 1.0) / norm;
      for (std::size_t i = 0; i < per; ++i)
        direction[n * per + i] = coef * static_cast<double>(grad[n * per + i]) * batch;
    }
  }

  if (param_grad_scale != 0.0) {
    double dn = 0.0;
    for (double d : direction) dn += d * d;
    dn = std::sqrt(dn);
    if (dn > 0.0) {
      const double eps = sizeof(T) == sizeof(float) ? 1e-2 : 1e-5;
      for (int sign : {1, -1}) {
        std::vector<T> shifted(shape.numel());
        for (std::size_t i = 0; i < shifted.size(); ++i)
          shifted[i] = static_cast<T>(interp[i] + sign * eps * direction[i] / dn);
        Tensor<T> x(shape, std::move(shifted));
        Tensor<T> s = ops::mean(discriminator.forward(discriminator_input(real, x)));
        ops::scale(s, static_cast<T>(sign * param_grad_scale * dn / (2.0 * eps))).backward();
      }
    }
  }
  return out;
}

#define NUCLEIGAN_INSTANTIATE_LOSSES(T)                                                       \
  template Tensor<T> gan_loss_discriminator(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> gan_loss_generator(const Tensor<T>&);                                    \
  template Tensor<T> cycle_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                const Tensor<T>&, const LossWeights&);                        \
  template Tensor<T> l1_term(const Tensor<T>&, const Tensor<T>&);                             \
  template PenaltyResult gradient_penalty(Network<T>&, const ImageMaskPair<T>&,               \
                                          const ImageMaskPair<T>&, std::uint64_t, double);

NUCLEIGAN_INSTANTIATE_LOSSES(float)
NUCLEIGAN_INSTANTIATE_LOSSES(double)

}  // namespace nucleigan
