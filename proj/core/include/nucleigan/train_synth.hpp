#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nucleigan/losses.hpp"
#include "nucleigan/manifest.hpp"
#include "nucleigan/mask_synth.hpp"
#include "nucleigan/nn.hpp"

namespace nucleigan {

struct SynthTrainConfig {
  int epochs = 300;
  double lr = 2e-4;
  int lr_decay_start_epoch = 150;
  int batch_size = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  LossWeights weights{70.0, 10.0, 100.0, 10.0, false};
  std::uint64_t seed = 0;
  bool disc_loss_halved = true;
  int image_size = 256;  // training patches are resized to this square size
  /// Caps the number of steps per epoch; 0 means one pass over the real images.
  int max_steps_per_epoch = 0;
  SamplerParams sampler;  // canvas is overridden by image_size
  NetworkSpec generator = NetworkSpec::resnet_generator(1, 3);  // G: mask -> H&E
  NetworkSpec segmenter = NetworkSpec::resnet_generator(3, 1);  // S: H&E -> mask
  NetworkSpec disc_image = NetworkSpec::patch_discriminator(3);  // D_N
  NetworkSpec disc_mask = NetworkSpec::patch_discriminator(1);   // D_M

  void validate() const;
  bool operator==(const SynthTrainConfig&) const = default;
};

/// Constant `lr` before `decay_start`, then linear decay reaching 0 at
/// `epochs`. Throws ArgumentError outside [0, epochs].
double lr_schedule(double lr, int epochs, int decay_start, int epoch);
double lr_schedule(const SynthTrainConfig& cfg, int epoch);

struct SynthNets {
  std::unique_ptr<Network<float>> G, S, D_N, D_M;
  std::unique_ptr<Adam<float>> opt_gen, opt_dn, opt_dm;
};

SynthNets make_synth_nets(const SynthTrainConfig& cfg);

struct SynthStepReport {
  double gan_g = 0.0;         // generator loss against D_N
  double gan_s = 0.0;         // generator loss against D_M
  double cycle = 0.0;         // weighted cycle loss
  double cycle_n = 0.0;       // mean |G(S(n)) - n|
  double cycle_m = 0.0;       // mean |S(G(m)) - m|
  double generator_total = 0.0;
  double disc_n = 0.0;        // applied D_N loss (halved if configured)
  double disc_m = 0.0;
  bool operator==(const SynthStepReport&) const = default;
};

/// One alternating update: G and S jointly, then D_N, then D_M, with fakes
/// detached for the discriminator updates. m is a [1,1,H,W] mask render and
/// n a [1,3,H,W] H&E patch, both in [-1, 1]. Throws NumericalError carrying
/// the loss values if any loss is non-finite.
SynthStepReport train_step_synth(SynthNets& nets, const Tensor<float>& m, const Tensor<float>& n,
                                 const SynthTrainConfig& cfg, double lr);

struct SynthEpochSummary {
  int epoch = 0;
  double lr = 0.0;
  SynthStepReport mean;
};

using SynthProgress = std::function<void(const SynthEpochSummary&)>;

/// Trains on unpaired data: real H&E patches and masks sampled from `dict`,
/// each shuffled independently per epoch. Writes G.ckpt, S.ckpt, D_N.ckpt and
/// D_M.ckpt to `out_dir`; G's checkpoint embeds the dictionary and sampler
/// parameters. On a non-finite loss the current networks are written to
/// `out_dir/nonfinite/` before the error propagates.
std::vector<SynthEpochSummary> train_synth(const SynthTrainConfig& cfg,
                                           const std::vector<RGBImage>& real_images,
                                           const ShapeDictionary& dict,
                                           const std::filesystem::path& out_dir,
                                           const SynthProgress& progress = {});

/// Writes `count` (H&E, instance map) pairs to out/images, out/labels and
/// out/masks plus out/manifest.json. Refuses to write into a directory that
/// already holds a dataset unless `overwrite`. count 0 writes nothing.
DatasetManifest generate_synthetic_dataset(Network<float>& G, const ShapeDictionary& dict,
                                           const SamplerParams& sampler, int count,
                                           std::uint64_t seed, const std::filesystem::path& out,
                                           bool overwrite = false,
                                           const std::string& created_at = "1970-01-01T00:00:00Z");

/// Generator checkpoint payload.
struct GeneratorBundle {
  std::unique_ptr<Network<float>> G;
  ShapeDictionary dict;
  SamplerParams sampler;
};
GeneratorBundle load_generator_bundle(const std::filesystem::path& ckpt);

}  // namespace nucleigan
