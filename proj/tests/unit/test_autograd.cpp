#include <doctest.h>

#include "nucleigan/ops.hpp"
#include "test_support.hpp"

using namespace nucleigan;
using testing::gradient_check;
using testing::random_tensor;

namespace {

/// Scalar readout <op(x), r> with a fixed random r, so every output element
/// carries a distinct weight.
template <class T>
Tensor<T> readout(const Tensor<T>& y, std::uint64_t seed) {
  const auto r = random_tensor<T>(y.shape(), seed);
  return ops::sum(ops::mul(y, r));
}

constexpr double kDoubleStep = 1e-6;
constexpr double kDoubleTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops have exact gradients") {
  auto a = random_tensor<double>({2, 3, 4, 5}, 1);
  auto b = random_tensor<double>({2, 3, 4, 5}, 2);
  CHECK(gradient_check<double>([&] { return readout(ops::add(a, b), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::sub(a, b), 9); }, b, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::mul(a, b), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::scale(a, 0.3), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::add_scalar(a, 0.3), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::tanh(a), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::leaky_relu(a, 0.2), 9); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return ops::mean(a); }, a, kDoubleStep) < kDoubleTol);
}

TEST_CASE("concat_channels routes gradients to both inputs") {
  auto a = random_tensor<double>({2, 2, 3, 3}, 3);
  auto b = random_tensor<double>({2, 1, 3, 3}, 4);
  const auto y = ops::concat_channels(a, b);
  CHECK(y.shape() == Shape{2, 3, 3, 3});
  CHECK(gradient_check<double>([&] { return readout(ops::concat_channels(a, b), 5); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::concat_channels(a, b), 5); }, b, kDoubleStep) < kDoubleTol);
}

TEST_CASE("conv2d gradients for input, weight and bias") {
  auto x = random_tensor<double>({2, 3, 7, 6}, 10);
  auto w = random_tensor<double>({4, 3, 3, 3}, 11);
  auto bias = random_tensor<double>({1, 4, 1, 1}, 12);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      auto f = [&] { return readout(ops::conv2d(x, w, bias, stride, pad), 13); };
      CHECK(gradient_check<double>(f, x, kDoubleStep) < kDoubleTol);
      CHECK(gradient_check<double>(f, w, kDoubleStep) < kDoubleTol);
      CHECK(gradient_check<double>(f, bias, kDoubleStep) < kDoubleTol);
    }
}

TEST_CASE("conv2d matches a direct loop") {
  auto x = random_tensor<double>({1, 2, 5, 5}, 20);
  auto w = random_tensor<double>({3, 2, 3, 3}, 21);
  const auto y = ops::conv2d(x, w, Tensor<double>(), 2, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = 2 * i - 1 + ky, xx = 2 * j - 1 + kx;
              if (yy < 0 || xx < 0 || yy >= 5 || xx >= 5) continue;
              s += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 5 + yy) * 5 + xx];
            }
        CHECK(y[(o * 3 + i) * 3 + j] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  auto x = random_tensor<double>({1, 3, 8, 8}, 30);
  auto w = random_tensor<double>({2, 3, 4, 4}, 31);
  auto z = random_tensor<double>({1, 2, 4, 4}, 32);
  const auto y = ops::conv2d(x, w, Tensor<double>(), 2, 1);
  REQUIRE(y.shape() == z.shape());
  // <conv(x), z> == <x, conv_t(z)> with the same weight viewed as [in=2, out=3].
  const auto t = ops::conv_transpose2d(z, w, Tensor<double>(), 2, 1, 0);
  REQUIRE(t.shape() == x.shape());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) lhs += y[i] * z[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * t[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("conv_transpose2d gradients") {
  auto x = random_tensor<double>({1, 3, 4, 5}, 40);
  auto w = random_tensor<double>({3, 2, 3, 3}, 41);
  auto bias = random_tensor<double>({1, 2, 1, 1}, 42);
  auto f = [&] { return readout(ops::conv_transpose2d(x, w, bias, 2, 1, 1), 43); };
  CHECK(ops::conv_transpose2d(x, w, bias, 2, 1, 1).shape() == Shape{1, 2, 8, 10});
  CHECK(gradient_check<double>(f, x, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>(f, w, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>(f, bias, kDoubleStep) < kDoubleTol);
}

TEST_CASE("reflection_pad values and gradient") {
  Tensor<double> x({1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  CHECK_THROWS_AS(ops::reflection_pad(x, 1), ArgumentError);
  auto y2 = random_tensor<double>({1, 2, 4, 5}, 50);
  const auto p = ops::reflection_pad(y2, 2);
  CHECK(p.shape() == Shape{1, 2, 8, 9});
  // Row 0 of the padded tensor mirrors row 2 of the input.
  CHECK(p[2] == y2[2 * 5 + 0]);
  CHECK(gradient_check<double>([&] { return readout(ops::reflection_pad(y2, 3), 51); }, y2, kDoubleStep) < kDoubleTol);
}

TEST_CASE("instance and batch norm gradients and statistics") {
  auto x = random_tensor<double>({2, 3, 4, 4}, 60, 2.0);
  const auto y = ops::instance_norm(x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double m = 0;
      for (int i = 0; i < 16; ++i) m += y[(n * 3 + c) * 16 + i];
      CHECK(std::abs(m / 16) < 1e-12);
    }
  CHECK(gradient_check<double>([&] { return readout(ops::instance_norm(x), 61); }, x, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return readout(ops::batch_norm(x), 62); }, x, kDoubleStep) < kDoubleTol);
}

TEST_CASE("losses built from ops have exact gradients") {
  auto a = random_tensor<double>({1, 2, 3, 3}, 70);
  auto b = random_tensor<double>({1, 2, 3, 3}, 71);
  CHECK(gradient_check<double>([&] { return ops::l1_mean(a, b); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return ops::bce_with_logits_mean(a, 1.0); }, a, kDoubleStep) < kDoubleTol);
  CHECK(gradient_check<double>([&] { return ops::bce_with_logits_mean(a, 0.0); }, a, kDoubleStep) < kDoubleTol);
}

TEST_CASE("float ops pass gradient checks at step 1e-3") {
  auto x = random_tensor<float>({1, 2, 6, 6}, 80);
  auto w = random_tensor<float>({3, 2, 3, 3}, 81, 0.3);
  auto f = [&] { return readout(ops::tanh(ops::conv2d(ops::reflection_pad(x, 1), w, Tensor<float>(), 1, 0)), 82); };
  CHECK(gradient_check<float>(f, x, 1e-3) < 1e-3);
  CHECK(gradient_check<float>(f, w, 1e-3) < 1e-3);
}

TEST_CASE("accumulation, detach and no-grad mode") {
  auto a = random_tensor<double>({1, 1, 2, 2}, 90, 1.0, true);
  ops::sum(ops::add(a, a)).backward();
  for (double g : a.grad()) CHECK(g == 2.0);
  ops::sum(a).backward();
  for (double g : a.grad()) CHECK(g == 3.0);
  a.zero_grad();
  for (double g : a.grad()) CHECK(g == 0.0);

  auto d = a.detach();
  CHECK_FALSE(d.requires_grad());
  d.mutable_data()[0] = 42.0;
  CHECK(a[0] != 42.0);

  NoGradGuard guard;
  CHECK_FALSE(grad_enabled());
  const auto y = ops::scale(a, 2.0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shape mismatches are argument errors") {
  auto a = random_tensor<double>({1, 1, 2, 2}, 1);
  auto b = random_tensor<double>({1, 1, 2, 3}, 2);
  CHECK_THROWS_AS(ops::add(a, b), ArgumentError);
  CHECK_THROWS_AS(ops::l1_mean(a, b), ArgumentError);
  CHECK_THROWS_AS(a.item(), ArgumentError);
}
