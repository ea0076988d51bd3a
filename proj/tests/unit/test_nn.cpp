#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "nucleigan/checkpoint.hpp"
#include "nucleigan/nn.hpp"
#include "nucleigan/spectral_norm.hpp"
#include "test_support.hpp"

using namespace nucleigan;
using testing::gradient_check;
using testing::random_tensor;

namespace {

double largest_singular_value(const std::vector<double>& w, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = w[static_cast<std::size_t>(r) * cols + c];
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

std::vector<double> unit_vector(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> u(n);
  double s = 0;
  for (auto& v : u) v = rng.normal(), s += v * v;
  for (auto& v : u) v /= std::sqrt(s);
  return u;
}

std::size_t conv_params(int in, int out, int k) { return static_cast<std::size_t>(in) * out * k * k + out; }

template <class T>
Tensor<T> readout(const Tensor<T>& y, std::uint64_t seed) {
  return ops::sum(ops::mul(y, random_tensor<T>(y.shape(), seed)));
}

}  // namespace

TEST_CASE("spectral normalization of the identity is the identity") {
  const std::vector<double> eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  const auto r = spectral_normalize<double>(eye, 3, 3, unit_vector(3, 1), 1);
  CHECK(r.sigma == doctest::Approx(1.0));
  for (std::size_t i = 0; i < 9; ++i) CHECK(r.weight[i] == doctest::Approx(eye[i]));
}

TEST_CASE("spectral normalization of diag(3, 1)") {
  const std::vector<double> w{3, 0, 0, 1};
  const auto r = spectral_normalize<double>(w, 2, 2, unit_vector(2, 2), 20);
  CHECK(std::abs(r.weight[0] - 1.0) < 1e-4);
  CHECK(std::abs(r.weight[3] - 1.0 / 3.0) < 1e-4);
  CHECK(std::abs(r.weight[1]) < 1e-4);
}

TEST_CASE("spectral normalization matches an SVD oracle on a Gaussian matrix") {
  Rng rng(3);
  std::vector<double> w(64);
  for (auto& v : w) v = rng.normal();
  const auto r = spectral_normalize<double>(w, 8, 8, unit_vector(8, 4), 20);
  CHECK(std::abs(r.sigma - largest_singular_value(w, 8, 8)) < 1e-4);
  CHECK(std::abs(largest_singular_value(r.weight, 8, 8) - 1.0) < 1e-4);
}

TEST_CASE("one spectral normalization round is the classic power-iteration update") {
  Rng rng(6);
  std::vector<double> w(5 * 7);
  for (auto& x : w) x = rng.normal();
  const auto u0 = unit_vector(5, 7);
  std::vector<double> v(7, 0.0), u(5, 0.0);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) v[c] += w[r * 7 + c] * u0[r];
  double nv = 0;
  for (double x : v) nv += x * x;
  for (double& x : v) x /= std::sqrt(nv);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) u[r] += w[r * 7 + c] * v[c];
  double nu = 0;
  for (double x : u) nu += x * x;
  nu = std::sqrt(nu);
  const auto res = spectral_normalize<double>(w, 5, 7, u0, 1);
  CHECK(res.sigma == doctest::Approx(nu).epsilon(1e-12));
  for (int r = 0; r < 5; ++r) CHECK(res.u[r] == doctest::Approx(u[r] / nu).epsilon(1e-10));
  for (int c = 0; c < 7; ++c) CHECK(res.v[c] == doctest::Approx(v[c]).epsilon(1e-10));
}

TEST_CASE("spectral normalization estimate never exceeds the top singular value and improves with rounds") {
  Rng rng(8);
  std::vector<double> w(12 * 9);
  for (auto& x : w) x = rng.normal();
  const double top = largest_singular_value(w, 12, 9);
  double previous = 0.0;
  for (int k = 1; k <= 9; ++k) {
    const double s = spectral_normalize<double>(w, 12, 9, unit_vector(12, 9), k).sigma;
    CHECK(s <= top * (1 + 1e-12));
    CHECK(s >= previous * (1 - 1e-12));
    previous = s;
  }
  CHECK(previous == doctest::Approx(top).epsilon(1e-10));
}

TEST_CASE("spectral normalization of a zero matrix returns zeros") {
  const std::vector<double> w(6, 0.0);
  const auto r = spectral_normalize<double>(w, 2, 3, unit_vector(2, 5), 1);
  for (double v : r.weight) CHECK(v == 0.0);
}

TEST_CASE("resnet generator preserves shape and its parameter count matches layer arithmetic") {
  auto g = build_resnet_generator<float>(NetworkSpec::resnet_generator(3, 3, 64, 9), 1);
  std::size_t expected = conv_params(3, 64, 7) + conv_params(64, 128, 3) + conv_params(128, 256, 3);
  for (int b = 0; b < 9; ++b) expected += 2 * conv_params(256, 256, 3);
  expected += conv_params(256, 128, 3) + conv_params(128, 64, 3) + conv_params(64, 3, 7);
  CHECK(g->parameter_count() == expected);

  NoGradGuard ng;
  const auto y = g->forward(random_tensor<float>({1, 3, 256, 256}, 2));
  CHECK(y.shape() == Shape{1, 3, 256, 256});
  for (float v : y.data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  CHECK_THROWS_AS(g->forward(random_tensor<float>({1, 3, 30, 32}, 2)), ArgumentError);
}

TEST_CASE("unet generator at 256 with 8 levels") {
  auto s = build_unet_generator<float>(NetworkSpec::unet_generator(3, 1, 64, 8), 1);
  NoGradGuard ng;
  const auto y = s->forward(random_tensor<float>({1, 3, 256, 256}, 3));
  CHECK(y.shape() == Shape{1, 1, 256, 256});
  CHECK(s->bottleneck_shape().h == 256 / (1 << 8));
  CHECK(s->bottleneck_shape().w == 256 / (1 << 8));
  CHECK_THROWS_AS(s->forward(random_tensor<float>({1, 3, 96, 96}, 3)), ArgumentError);
}

TEST_CASE("unet bottleneck follows stride arithmetic") {
  for (int levels : {2, 3, 4}) {
    auto s = build_unet_generator<float>(NetworkSpec::unet_generator(3, 1, 8, levels), 1);
    NoGradGuard ng;
    s->forward(random_tensor<float>({1, 3, 64, 64}, 3));
    CHECK(s->bottleneck_shape().h == 64 >> levels);
  }
}

TEST_CASE("zero input with a zero final layer gives exactly zero") {
  for (auto spec : {NetworkSpec::unet_generator(3, 1, 8, 4), NetworkSpec::resnet_generator(1, 3, 8, 2)}) {
    auto net = build_network<float>(spec, 4);
    auto params = net->parameters();
    for (std::size_t i = params.size() - 2; i < params.size(); ++i)
      for (auto& v : params[i].tensor.mutable_data()) v = 0.0f;
    NoGradGuard ng;
    const auto y = net->forward(Tensor<float>({1, spec.in_channels, 32, 32}, 0.0f));
    for (float v : y.data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("patch discriminator geometry") {
  const int kernels[] = {4, 4, 4, 4, 4}, strides[] = {2, 2, 2, 1, 1};
  int rf = 1;
  for (int i = 4; i >= 0; --i) rf = (rf - 1) * strides[i] + kernels[i];
  CHECK(rf == 70);
  CHECK(receptive_field(patch_discriminator_geometry()) == 70);

  int extent = 256;
  for (int i = 0; i < 5; ++i) extent = (extent + 2 - kernels[i]) / strides[i] + 1;
  CHECK(extent == 30);
  CHECK(conv_output_extent(patch_discriminator_geometry(), 256) == 30);

  auto d = build_patch_discriminator<float>(NetworkSpec::patch_discriminator(4, 16), 5);
  NoGradGuard ng;
  CHECK(d->forward(random_tensor<float>({1, 4, 256, 256}, 6)).shape() == Shape{1, 1, 30, 30});
  CHECK(d->forward(random_tensor<float>({1, 4, 512, 512}, 6)).shape() == Shape{1, 1, 62, 62});
}

TEST_CASE("discriminator has spectral norm and no normalization layers") {
  const auto spec = NetworkSpec::patch_discriminator(3);
  CHECK(spec.spectral_norm);
  CHECK(spec.norm == NormKind::None);
  auto d = build_patch_discriminator<double>(NetworkSpec::patch_discriminator(3, 8), 7);
  CHECK(d->buffers().size() == 5);
  NoGradGuard ng;
  for (int i = 0; i < 30; ++i) d->forward(random_tensor<double>({1, 3, 32, 32}, 8));
  auto params = d->parameters();
  const auto& w = params[0].tensor;
  const int rows = w.shape().n, cols = static_cast<int>(w.numel()) / rows;
  std::vector<double> wv(w.data().begin(), w.data().end());
  std::vector<double> u(*d->buffers()[0].values);
  const auto r = spectral_normalize<double>(wv, rows, cols, u, 1);
  CHECK(largest_singular_value(r.weight, rows, cols) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("conv weights are initialized with std 0.02") {
  auto g = build_resnet_generator<float>(NetworkSpec::resnet_generator(3, 3, 32, 3), 9);
  double s = 0, ss = 0, n = 0;
  for (auto& p : g->parameters()) {
    if (p.name.find(".weight") == std::string::npos) continue;
    for (float v : p.tensor.data()) s += v, ss += double(v) * v, n += 1;
  }
  const double mean = s / n, sd = std::sqrt(ss / n - mean * mean);
  CHECK(std::abs(mean) < 1e-3);
  CHECK(sd == doctest::Approx(0.02).epsilon(0.02));
}

TEST_CASE("resnet generator input gradient on 16x16") {
  auto g = build_resnet_generator<double>(NetworkSpec::resnet_generator(3, 3, 8, 2), 10);
  auto x = random_tensor<double>({1, 3, 16, 16}, 11);
  CHECK(gradient_check<double>([&] { return readout(g->forward(x), 12); }, x, 1e-6) < 1e-6);
}

TEST_CASE("unet generator input gradient on 16x16") {
  auto s = build_unet_generator<double>(NetworkSpec::unet_generator(3, 1, 8, 3), 13);
  auto x = random_tensor<double>({1, 3, 16, 16}, 14);
  CHECK(gradient_check<double>([&] { return readout(s->forward(x), 15); }, x, 1e-6) < 1e-6);
}

TEST_CASE("generator parameter gradients in 64-bit mode") {
  auto g = build_resnet_generator<double>(NetworkSpec::resnet_generator(1, 3, 4, 1), 16);
  auto x = random_tensor<double>({1, 1, 8, 8}, 17);
  auto w = g->parameters()[2].tensor;
  CHECK(gradient_check<double>([&] { return readout(g->forward(x), 18); }, w, 1e-6) < 1e-5);
}

TEST_CASE("network spec validation") {
  auto bad = NetworkSpec::resnet_generator(3, 3);
  bad.n_resblocks = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  auto bad2 = NetworkSpec::unet_generator(3, 1);
  bad2.n_levels = 1;
  CHECK_THROWS_AS(bad2.validate(), ArgumentError);
  CHECK(network_kind_from_string(to_string(NetworkKind::UnetGenerator)) == NetworkKind::UnetGenerator);
  CHECK(norm_kind_from_string(to_string(NormKind::Batch)) == NormKind::Batch);
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
  auto p = random_tensor<float>({1, 1, 3, 3}, 19, 1.0, true);
  const std::vector<float> before(p.data().begin(), p.data().end());
  Adam<float> opt({p});
  ops::sum(ops::mul(p, p)).backward();
  opt.step(0.0);
  CHECK(std::vector<float>(p.data().begin(), p.data().end()) == before);
}

TEST_CASE("adam minimizes a quadratic") {
  auto p = random_tensor<double>({1, 1, 2, 2}, 20, 1.0, true);
  Adam<double> opt({p}, 0.9);
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    ops::sum(ops::mul(p, p)).backward();
    opt.step(0.01);
  }
  for (double v : p.data()) CHECK(std::abs(v) < 1e-2);
}

TEST_CASE("checkpoint round trip restores parameters, buffers and outputs") {
  const auto dir = testing::temp_dir("ckpt");
  auto d = build_patch_discriminator<float>(NetworkSpec::patch_discriminator(4, 8), 21);
  const auto x = random_tensor<float>({1, 4, 64, 64}, 22);
  {
    NoGradGuard ng;
    d->forward(x);
  }
  save_checkpoint(dir / "d.ckpt", *d, R"({"note": "x"})");
  std::string extra;
  auto back = load_checkpoint<float>(dir / "d.ckpt", &extra);
  CHECK(back->spec() == d->spec());
  CHECK(read_checkpoint_spec(dir / "d.ckpt") == d->spec());
  CHECK(extra.find("note") != std::string::npos);
  auto a = d->parameters(), b = back->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
  }
  for (std::size_t i = 0; i < d->buffers().size(); ++i) CHECK(*d->buffers()[i].values == *back->buffers()[i].values);
  NoGradGuard ng;
  const auto ya = d->forward(x), yb = back->forward(x);
  CHECK(std::equal(ya.data().begin(), ya.data().end(), yb.data().begin()));
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "missing.ckpt"), IoError);
}
