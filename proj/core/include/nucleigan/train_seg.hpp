#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "nucleigan/image.hpp"
#include "nucleigan/losses.hpp"
#include "nucleigan/nn.hpp"
#include "nucleigan/rng.hpp"
#include "nucleigan/stain_norm.hpp"

namespace nucleigan {

struct JitterConfig {
  int resize_to = 286;
  int crop_to = 256;
  bool operator==(const JitterConfig&) const = default;
};

struct SegTrainConfig {
  int epochs = 400;
  double lr = 2e-4;
  int lr_decay_start_epoch = 200;
  int batch_size = 1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  JitterConfig jitter;
  int pool_size = 64;
  LossWeights weights;  // gradient penalty on
  std::uint64_t seed = 0;
  /// false trains S on the L1 term alone (no discriminator).
  bool adversarial = true;
  NetworkSpec segmenter = NetworkSpec::unet_generator(3, 1);
  /// Conditioned on the image: input channels = image + mask channels.
  NetworkSpec discriminator = NetworkSpec::patch_discriminator(4);

  void validate() const;
  bool operator==(const SegTrainConfig&) const = default;
};

/// Resizes both to resize_to (image bilinear, labels nearest) and crops both
/// at the same seed-determined offset to crop_to.
std::pair<RGBImage, InstanceMap> jitter_pair(const RGBImage& img, const InstanceMap& mask,
                                             const JitterConfig& cfg, std::uint64_t seed);

/// History buffer of generated pairs. Until full, every query is stored and
/// returned. Afterwards, with probability 1/2 the incoming item is returned;
/// otherwise a uniformly chosen stored item is returned and replaced by it.
template <class Item>
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity = 64, std::uint64_t seed = 0)
      : capacity_(capacity), rng_(seed) {}

  Item query(Item incoming) {
    last_incoming_ = true;
    if (capacity_ == 0) return incoming;
    if (buffer_.size() < capacity_) {
      buffer_.push_back(incoming);
      return incoming;
    }
    if (rng_.uniform() < 0.5) return incoming;
    const auto i = rng_.below(buffer_.size());
    Item out = std::move(buffer_[i]);
    buffer_[i] = std::move(incoming);
    last_incoming_ = false;
    return out;
  }

  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// Whether the last query returned its own argument.
  bool last_returned_incoming() const { return last_incoming_; }

 private:
  std::size_t capacity_;
  Rng rng_;
  std::vector<Item> buffer_;
  bool last_incoming_ = false;
};

struct SegNets {
  std::unique_ptr<Network<float>> S, D;
  std::unique_ptr<Adam<float>> opt_s, opt_d;
  std::unique_ptr<ImagePool<ImageMaskPair<float>>> pool;
};

SegNets make_seg_nets(const SegTrainConfig& cfg);

struct SegStepReport {
  double gan_g = 0.0;     // generator loss against D
  double l1 = 0.0;        // unweighted mean |S(n) - m|
  double generator_total = 0.0;
  double disc = 0.0;      // discriminator BCE loss
  double gp = 0.0;        // unweighted penalty value
  double gp_grad_norm = 0.0;
  double disc_total = 0.0;
  bool operator==(const SegStepReport&) const = default;
};

/// One update of S then D. n is [1,3,H,W] and m the [1,1,H,W] target, both
/// in [-1, 1]. The discriminator sees image and mask concatenated; fakes are
/// routed through the pool. `step_seed` drives the penalty interpolation.
SegStepReport train_step_seg(SegNets& nets, const Tensor<float>& n, const Tensor<float>& m,
                             const SegTrainConfig& cfg, double lr, std::uint64_t step_seed);

struct SegSample {
  RGBImage image;
  InstanceMap instances;
};

struct SegEpochSummary {
  int epoch = 0;
  double lr = 0.0;
  SegStepReport mean;
};

using SegProgress = std::function<void(const SegEpochSummary&)>;

std::vector<SegEpochSummary> train_seg(SegNets& nets, const SegTrainConfig& cfg,
                                       const std::vector<SegSample>& data,
                                       const SegProgress& progress = {});
/// Trains fresh networks and writes S.ckpt and D_M.ckpt to `out_dir`.
std::vector<SegEpochSummary> train_seg(const SegTrainConfig& cfg, const std::vector<SegSample>& data,
                                       const std::filesystem::path& out_dir,
                                       const SegProgress& progress = {});

/// Tile origins along one axis: 0, step, 2*step, ... and a final tile flush
/// with the end, where step = tile - overlap.
std::vector<int> tile_starts(int length, int tile, int overlap);
/// Linear ramp weight of position i inside a tile.
float feather_weight(int i, int tile, int overlap);

struct SegmentOptions {
  int tile = 256;
  int overlap = 32;
  int min_area = 30;
  std::optional<StainBasis> stain_target;  // normalize before inference if set
  double stain_sparsity = 0.1;
  std::uint64_t stain_seed = 0;
};

struct Segmentation {
  FloatImage score;  // blended S output in [-1, 1], input size
  InstanceMap instances;
};

/// Tiled inference with feathered blending, threshold at 0, 8-connected
/// components, and removal of components below min_area. Images smaller
/// than a tile are reflection-padded to one tile.
Segmentation segment_image(Network<float>& S, const RGBImage& img, const SegmentOptions& opt = {});

/// Score map in [-1, 1] as 8-bit gray.
Image<std::uint8_t> score_to_gray(const FloatImage& score);

}  // namespace nucleigan
