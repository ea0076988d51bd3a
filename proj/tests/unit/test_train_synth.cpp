#include <doctest.h>

#include <filesystem>

#include "nucleigan/checkpoint.hpp"
#include "nucleigan/convert.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/train_synth.hpp"
#include "test_support.hpp"

using namespace nucleigan;
namespace fs = std::filesystem;

namespace {

SynthTrainConfig tiny_config(std::uint64_t seed = 3) {
  SynthTrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr_decay_start_epoch = 1;
  cfg.seed = seed;
  cfg.image_size = 64;
  cfg.generator = NetworkSpec::resnet_generator(1, 3, 8, 2);
  cfg.segmenter = NetworkSpec::resnet_generator(3, 1, 8, 2);
  cfg.disc_image = NetworkSpec::patch_discriminator(3, 8);
  cfg.disc_mask = NetworkSpec::patch_discriminator(1, 8);
  return cfg;
}

/// Disks on a size x size canvas: mask in {-1, 1} and a colorized H&E-like
/// rendering (purple nuclei on pink).
struct ToyPair {
  Tensor<float> mask;
  Tensor<float> image;
};

ToyPair toy_disks(int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> m(static_cast<std::size_t>(size) * size, -1.0f);
  const int count = 2 + static_cast<int>(rng.below(3));
  for (int k = 0; k < count; ++k) {
    const double r = rng.uniform(3.0, 6.0);
    const double cy = rng.uniform(r, size - 1 - r), cx = rng.uniform(r, size - 1 - r);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m[y * size + x] = 1.0f;
  }
  const float nucleus[3] = {-0.4f, -0.7f, 0.1f}, stroma[3] = {0.8f, 0.3f, 0.6f};
  std::vector<float> img(3 * m.size());
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < m.size(); ++i) img[c * m.size() + i] = m[i] > 0 ? nucleus[c] : stroma[c];
  return {Tensor<float>({1, 1, size, size}, m), Tensor<float>({1, 3, size, size}, img)};
}

std::vector<std::vector<float>> snapshot(Network<float>& net) {
  std::vector<std::vector<float>> out;
  for (auto& p : net.parameters()) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<std::vector<float>> grads(Network<float>& net) {
  std::vector<std::vector<float>> out;
  for (auto& p : net.parameters()) out.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  return out;
}

ShapeDictionary small_disks() { return disk_dictionary({4, 5, 6, 7}); }

}  // namespace

TEST_CASE("learning rate schedule in both training regimes") {
  CHECK(lr_schedule(2e-4, 300, 150, 0) == 2e-4);
  CHECK(lr_schedule(2e-4, 300, 150, 149) == 2e-4);
  CHECK(lr_schedule(2e-4, 300, 150, 225) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(2e-4, 300, 150, 300) == 0.0);
  CHECK(lr_schedule(2e-4, 400, 200, 0) == 2e-4);
  CHECK(lr_schedule(2e-4, 400, 200, 300) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(2e-4, 400, 200, 400) == 0.0);
  CHECK_THROWS_AS(lr_schedule(2e-4, 300, 150, 301), ArgumentError);
  CHECK_THROWS_AS(lr_schedule(2e-4, 300, 150, -1), ArgumentError);
  const SynthTrainConfig defaults;
  CHECK(lr_schedule(defaults, 225) == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("shipped defaults relax the mask cycle term") {
  const SynthTrainConfig cfg;
  CHECK(cfg.weights.lambda_m < cfg.weights.lambda_n);
  CHECK(cfg.weights.lambda_n == 70.0);
  CHECK(cfg.weights.lambda_m == 10.0);
  CHECK_FALSE(cfg.weights.gp_enabled);
  CHECK(cfg.adam_beta1 == 0.5);
  auto bad = cfg;
  bad.lr_decay_start_epoch = bad.epochs;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("zero learning rate leaves every weight unchanged") {
  const auto cfg = tiny_config();
  auto nets = make_synth_nets(cfg);
  const auto toy = toy_disks(32, 1);
  const auto g = snapshot(*nets.G), s = snapshot(*nets.S), dn = snapshot(*nets.D_N), dm = snapshot(*nets.D_M);
  train_step_synth(nets, toy.mask, toy_disks(32, 2).image, cfg, 0.0);
  CHECK(snapshot(*nets.G) == g);
  CHECK(snapshot(*nets.S) == s);
  CHECK(snapshot(*nets.D_N) == dn);
  CHECK(snapshot(*nets.D_M) == dm);
}

TEST_CASE("identical states give identical step reports") {
  const auto cfg = tiny_config();
  auto a = make_synth_nets(cfg), b = make_synth_nets(cfg);
  const auto m = toy_disks(32, 3).mask, n = toy_disks(32, 4).image;
  for (int i = 0; i < 3; ++i) CHECK(train_step_synth(a, m, n, cfg, 2e-4) == train_step_synth(b, m, n, cfg, 2e-4));
}

TEST_CASE("step report equals a direct recomputation from the losses module") {
  const auto cfg = tiny_config(11);
  auto a = make_synth_nets(cfg), b = make_synth_nets(cfg);
  const auto m = toy_disks(32, 5).mask, n = toy_disks(32, 6).image;
  const auto r = train_step_synth(a, m, n, cfg, 2e-4);

  const auto fake_n = b.G->forward(m);
  const auto fake_m = b.S->forward(n);
  const auto rec_m = b.S->forward(fake_n);
  const auto rec_n = b.G->forward(fake_m);
  const double gan_g = gan_loss_generator(b.D_N->forward(fake_n)).item();
  const double gan_s = gan_loss_generator(b.D_M->forward(fake_m)).item();
  const double cyc = cycle_loss(m, n, rec_m, rec_n, cfg.weights).item();
  CHECK(r.gan_g == gan_g);
  CHECK(r.gan_s == gan_s);
  CHECK(r.cycle == cyc);
  CHECK(r.cycle_n == l1_term(rec_n, n).item());
  CHECK(r.cycle_m == l1_term(rec_m, m).item());
  CHECK(r.generator_total == doctest::Approx(gan_g + gan_s + cyc).epsilon(1e-6));
  const double dn = 0.5 * gan_loss_discriminator(b.D_N->forward(n), b.D_N->forward(fake_n.detach())).item();
  const double dm = 0.5 * gan_loss_discriminator(b.D_M->forward(m), b.D_M->forward(fake_m.detach())).item();
  CHECK(r.disc_n == dn);
  CHECK(r.disc_m == dm);
}

TEST_CASE("halved discriminator loss applies exactly half the gradient") {
  auto halved = tiny_config(5), full = tiny_config(5);
  full.disc_loss_halved = false;
  auto a = make_synth_nets(halved), b = make_synth_nets(full);
  const auto m = toy_disks(32, 7).mask, n = toy_disks(32, 8).image;
  const auto ra = train_step_synth(a, m, n, halved, 2e-4);
  const auto rb = train_step_synth(b, m, n, full, 2e-4);
  CHECK(ra.disc_n == 0.5 * rb.disc_n);
  CHECK(ra.disc_m == 0.5 * rb.disc_m);
  const auto ga = grads(*a.D_N), gb = grads(*b.D_N);
  REQUIRE(ga.size() == gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i)
    for (std::size_t j = 0; j < ga[i].size(); ++j) CHECK(ga[i][j] == 0.5f * gb[i][j]);
  const auto ma = grads(*a.D_M), mb = grads(*b.D_M);
  for (std::size_t i = 0; i < ma.size(); ++i)
    for (std::size_t j = 0; j < ma[i].size(); ++j) CHECK(ma[i][j] == 0.5f * mb[i][j]);
}

TEST_CASE("non-finite losses raise a numerical error") {
  const auto cfg = tiny_config();
  auto nets = make_synth_nets(cfg);
  nets.G->parameters()[0].tensor.mutable_data()[0] = std::nanf("");
  CHECK_THROWS_AS(train_step_synth(nets, toy_disks(32, 1).mask, toy_disks(32, 2).image, cfg, 2e-4), NumericalError);
}

TEST_CASE("toy cycle reconstruction error drops by 30 percent within 200 steps") {
  auto cfg = tiny_config(21);
  auto nets = make_synth_nets(cfg);
  std::vector<double> err;
  for (int step = 0; step < 200; ++step) {
    const auto m = toy_disks(32, 1000 + step).mask;
    const auto n = toy_disks(32, 5000 + step).image;
    err.push_back(train_step_synth(nets, m, n, cfg, cfg.lr).cycle_n);
  }
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) first += err[i], last += err[190 + i];
  MESSAGE("cycle_n first 10 mean " << first / 10 << ", last 10 mean " << last / 10);
  CHECK(last <= 0.7 * first);
}

TEST_CASE("train_synth writes all four checkpoints with the dictionary payload") {
  const auto dir = testing::temp_dir("train_synth");
  auto cfg = tiny_config();
  cfg.epochs = 1;
  cfg.lr_decay_start_epoch = 0;
  cfg.sampler.target_count = 6;
  std::vector<RGBImage> reals;
  for (int i = 0; i < 2; ++i) reals.push_back(tensor_to_image(toy_disks(64, 40 + i).image));
  const auto dict = small_disks();
  int calls = 0;
  const auto hist = train_synth(cfg, reals, dict, dir, [&](const SynthEpochSummary&) { ++calls; });
  CHECK(hist.size() == 1);
  CHECK(calls == 1);
  for (const char* f : {"G.ckpt", "S.ckpt", "D_N.ckpt", "D_M.ckpt"}) CHECK(fs::exists(dir / f));
  const auto bundle = load_generator_bundle(dir / "G.ckpt");
  CHECK(bundle.dict == dict);
  CHECK(bundle.sampler.height == 64);
  CHECK(bundle.G->spec() == cfg.generator);
  CHECK_THROWS_AS(train_synth(cfg, {}, dict, dir), ArgumentError);
}

TEST_CASE("generating zero pairs writes nothing") {
  const auto dir = testing::temp_dir("gen0") / "out";
  auto g = build_network<float>(NetworkSpec::resnet_generator(1, 3, 4, 1), 1);
  SamplerParams p;
  p.height = p.width = 64;
  const auto m = generate_synthetic_dataset(*g, small_disks(), p, 0, 1, dir);
  CHECK(m.records.empty());
  CHECK_FALSE(fs::exists(dir));
}

TEST_CASE("generated pairs pass the sampled instances through unchanged") {
  const auto dir = testing::temp_dir("gen3");
  auto g = build_network<float>(NetworkSpec::resnet_generator(1, 3, 4, 1), 2);
  SamplerParams p;
  p.height = p.width = 64;
  p.target_count = 8;
  const auto dict = small_disks();
  const auto m = generate_synthetic_dataset(*g, dict, p, 3, 9, dir);
  REQUIRE(m.records.size() == 3);
  for (const auto& r : m.records) {
    CHECK(r.source == Source::Synthetic);
    CHECK(r.split == Split::Train);
    REQUIRE(r.seed.has_value());
    const auto img = io::read_rgb(r.image);
    CHECK(img.height == 64);
    CHECK(io::read_labels(r.instances) == sample_mask(dict, p, *r.seed).instances);
  }
  CHECK(load_manifest(dir / "manifest.json") == m);
  CHECK_THROWS_AS(generate_synthetic_dataset(*g, dict, p, 3, 9, dir), IoError);
  CHECK(generate_synthetic_dataset(*g, dict, p, 2, 9, dir, true).records.size() == 2);
}

TEST_CASE("full-scale synthetic count of 4650 pairs") {
  const auto dir = testing::temp_dir("gen4650");
  auto g = build_network<float>(NetworkSpec::resnet_generator(1, 3, 2, 1), 3);
  SamplerParams p;
  p.height = p.width = 64;
  p.target_count = 4;
  const auto m = generate_synthetic_dataset(*g, small_disks(), p, 4650, 1, dir);
  CHECK(m.records.size() == 4650);
  CHECK(load_manifest(dir / "manifest.json").records.size() == 4650);
  fs::remove_all(dir);
}
