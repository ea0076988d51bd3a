#include "nucleigan/train_seg.hpp"

#include <algorithm>
#include <cmath>

#include "json_io.hpp"
#include "nucleigan/checkpoint.hpp"
#include "nucleigan/convert.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/metrics.hpp"
#include "nucleigan/train_synth.hpp"

namespace nucleigan {

void SegTrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(lr >= 0.0)) throw ArgumentError("lr must be >= 0");
  if (lr_decay_start_epoch < 0 || lr_decay_start_epoch >= epochs)
    throw ArgumentError("lr_decay_start_epoch must be in [0, epochs)");
  if (batch_size != 1) throw ArgumentError("only batch_size 1 is supported");
  if (jitter.crop_to < 1 || jitter.crop_to > jitter.resize_to)
    throw ArgumentError("jitter crop_to must be in [1, resize_to]");
  if (pool_size < 0) throw ArgumentError("pool_size must be >= 0");
  weights.validate();
  segmenter.validate();
  discriminator.validate();
  if (segmenter.out_channels != 1) throw ArgumentError("the segmenter must emit one channel");
  if (discriminator.in_channels != segmenter.in_channels + segmenter.out_channels)
    throw ArgumentError("discriminator input channels must equal image + mask channels");
}

std::pair<RGBImage, InstanceMap> jitter_pair(const RGBImage& img, const InstanceMap& mask,
                                             const JitterConfig& cfg, std::uint64_t seed) {
  if (img.height != mask.height || img.width != mask.width)
    throw ArgumentError("jitter_pair: image and mask are not aligned");
  if (cfg.crop_to < 1 || cfg.crop_to > cfg.resize_to)
    throw ArgumentError("jitter_pair: crop_to must be in [1, resize_to]");
  const RGBImage big = resize_bilinear(img, cfg.resize_to, cfg.resize_to);
  const InstanceMap big_mask = resize_nearest(mask, cfg.resize_to, cfg.resize_to);
  Rng rng(seed);
  const int range = cfg.resize_to - cfg.crop_to + 1;
  const int y0 = static_cast<int>(rng.below(range));
  const int x0 = static_cast<int>(rng.below(range));
  InstanceMap cropped = crop(big_mask, y0, x0, cfg.crop_to, cfg.crop_to);
  return {crop(big, y0, x0, cfg.crop_to, cfg.crop_to), std::move(cropped)};
}

SegNets make_seg_nets(const SegTrainConfig& cfg) {
  cfg.validate();
  SegNets nets;
  nets.S = build_network<float>(cfg.segmenter, mix_seed(cfg.seed, 11));
  nets.D = build_network<float>(cfg.discriminator, mix_seed(cfg.seed, 12));
  nets.opt_s = std::make_unique<Adam<float>>(nets.S->parameter_tensors(), cfg.adam_beta1, cfg.adam_beta2);
  nets.opt_d = std::make_unique<Adam<float>>(nets.D->parameter_tensors(), cfg.adam_beta1, cfg.adam_beta2);
  nets.pool = std::make_unique<ImagePool<ImageMaskPair<float>>>(cfg.pool_size, mix_seed(cfg.seed, 13));
  return nets;
}

namespace {

std::string report_json(const SegStepReport& r) {
  return json{{"gan_g", r.gan_g}, {"l1", r.l1},   {"generator_total", r.generator_total},
              {"disc", r.disc},   {"gp", r.gp},   {"disc_total", r.disc_total}}
      .dump();
}

void accumulate(SegStepReport& a, const SegStepReport& r, double w) {
  a.gan_g += r.gan_g * w;
  a.l1 += r.l1 * w;
  a.generator_total += r.generator_total * w;
  a.disc += r.disc * w;
  a.gp += r.gp * w;
  a.gp_grad_norm += r.gp_grad_norm * w;
  a.disc_total += r.disc_total * w;
}

}  // namespace

SegStepReport train_step_seg(SegNets& nets, const Tensor<float>& n, const Tensor<float>& m,
                             const SegTrainConfig& cfg, double lr, std::uint64_t step_seed) {
  if (m.shape().c != 1 || n.shape().h != m.shape().h || n.shape().w != m.shape().w)
    throw ArgumentError("train_step_seg: expected a 1-channel target aligned with the image");
  SegStepReport r;

  nets.opt_s->zero_grad();
  nets.D->zero_grad();
  Tensor<float> fake = nets.S->forward(n);
  Tensor<float> l1 = l1_term(fake, m);
  Tensor<float> total = ops::scale(l1, static_cast<float>(cfg.weights.l1_weight));
  r.l1 = l1.item();
  if (cfg.adversarial) {
    Tensor<float> g = gan_loss_generator(nets.D->forward(ops::concat_channels(n, fake)));
    r.gan_g = g.item();
    total = ops::add(g, total);
  }
  r.generator_total = total.item();
  if (!std::isfinite(r.generator_total))
    throw NumericalError("non-finite segmenter loss: " + report_json(r));
  total.backward();
  nets.opt_s->step(lr);
  if (!cfg.adversarial) return r;

  nets.D->zero_grad();
  const Tensor<float> fake_d = fake.detach();
  const ImageMaskPair<float> pooled = nets.pool->query({n, fake_d});
  Tensor<float> d = gan_loss_discriminator(nets.D->forward(ops::concat_channels(n, m)),
                                           nets.D->forward(ops::concat_channels(pooled.image, pooled.mask)));
  r.disc = d.item();
  r.disc_total = r.disc;
  if (!std::isfinite(r.disc)) throw NumericalError("non-finite discriminator loss: " + report_json(r));
  d.backward();
  if (cfg.weights.gp_enabled && cfg.weights.gp_weight > 0.0) {
    const PenaltyResult gp = gradient_penalty(*nets.D, ImageMaskPair<float>{n, m},
                                              ImageMaskPair<float>{n, fake_d}, step_seed,
                                              cfg.weights.gp_weight);
    r.gp = gp.value;
    r.gp_grad_norm = gp.grad_norm;
    r.disc_total += cfg.weights.gp_weight * gp.value;
    if (!std::isfinite(r.disc_total)) throw NumericalError("non-finite gradient penalty: " + report_json(r));
  }
  nets.opt_d->step(lr);
  return r;
}

std::vector<SegEpochSummary> train_seg(SegNets& nets, const SegTrainConfig& cfg,
                                       const std::vector<SegSample>& data, const SegProgress& progress) {
  cfg.validate();
  if (data.empty()) throw ArgumentError("train_seg needs at least one training pair");
  std::vector<SegEpochSummary> history;
  const auto count = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg.lr, cfg.epochs, cfg.lr_decay_start_epoch, epoch);
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng(mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(epoch))).shuffle(order.begin(), order.end());
    SegEpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    for (std::size_t i = 0; i < count; ++i) {
      const auto& sample = data[order[i]];
      const std::uint64_t s = mix_seed(cfg.seed ^ 0x736567ULL, static_cast<std::uint64_t>(epoch) * count + i);
      const auto [img, labels] = jitter_pair(sample.image, sample.instances, cfg.jitter, s);
      const SegStepReport r =
          train_step_seg(nets, image_to_tensor(img), segmentation_target(labels), cfg, lr, mix_seed(s, 1));
      accumulate(summary.mean, r, 1.0 / static_cast<double>(count));
    }
    history.push_back(summary);
    if (progress) progress(summary);
  }
  return history;
}

std::vector<SegEpochSummary> train_seg(const SegTrainConfig& cfg, const std::vector<SegSample>& data,
                                       const std::filesystem::path& out_dir, const SegProgress& progress) {
  SegNets nets = make_seg_nets(cfg);
  auto history = train_seg(nets, cfg, data, progress);
  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir / "S.ckpt", *nets.S);
  if (cfg.adversarial) save_checkpoint(out_dir / "D_M.ckpt", *nets.D);
  return history;
}

std::vector<int> tile_starts(int length, int tile, int overlap) {
  if (tile < 1 || overlap < 0 || overlap >= tile) throw ArgumentError("tile_starts: need 0 <= overlap < tile");
  if (length <= tile) return {0};
  std::vector<int> starts;
  const int step = tile - overlap;
  for (int s = 0; s + tile < length; s += step) starts.push_back(s);
  if (starts.back() != length - tile) starts.push_back(length - tile);
  return starts;
}

float feather_weight(int i, int tile, int overlap) {
  const int ramp = overlap + 1;
  return static_cast<float>(std::min({i + 1, tile - i, ramp})) / static_cast<float>(ramp);
}

Segmentation segment_image(Network<float>& S, const RGBImage& img_in, const SegmentOptions& opt) {
  if (img_in.channels != 3) throw ArgumentError("segment_image expects an RGB image");
  if (opt.overlap < 0 || opt.overlap >= opt.tile) throw ArgumentError("overlap must be in [0, tile)");
  RGBImage img = img_in;
  if (opt.stain_target) {
    try {
      const StainFit fit = estimate_stain_basis(to_optical_density(img), opt.stain_sparsity, 200, opt.stain_seed);
      img = normalize_to_target(img, fit, *opt.stain_target);
    } catch (const InsufficientTissueError&) {
      // Nearly blank input: nothing to recolor.
    }
  }
  const int H = img.height, W = img.width;
  const int Hp = std::max(H, opt.tile), Wp = std::max(W, opt.tile);
  const RGBImage padded = (Hp == H && Wp == W) ? img : pad_reflect(img, Hp, Wp);

  std::vector<double> acc(static_cast<std::size_t>(Hp) * Wp, 0.0), wsum(acc.size(), 0.0);
  std::vector<float> ramp(opt.tile);
  for (int i = 0; i < opt.tile; ++i) ramp[i] = feather_weight(i, opt.tile, opt.overlap);
  NoGradGuard no_grad;
  for (int y0 : tile_starts(Hp, opt.tile, opt.overlap)) {
    for (int x0 : tile_starts(Wp, opt.tile, opt.overlap)) {
      const Tensor<float> out = S.forward(image_to_tensor(crop(padded, y0, x0, opt.tile, opt.tile)));
      const auto v = out.data();
      for (int y = 0; y < opt.tile; ++y)
        for (int x = 0; x < opt.tile; ++x) {
          const double w = static_cast<double>(ramp[y]) * ramp[x];
          const std::size_t k = static_cast<std::size_t>(y0 + y) * Wp + (x0 + x);
          acc[k] += w * v[static_cast<std::size_t>(y) * opt.tile + x];
          wsum[k] += w;
        }
    }
  }

  Segmentation seg;
  seg.score = FloatImage(H, W, 1);
  BinaryMask fg(H, W, 1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * Wp + x;
      const float s = static_cast<float>(acc[k] / wsum[k]);
      seg.score.at(y, x) = s;
      fg.at(y, x) = s > 0.0f;
    }
  seg.instances = remove_small_instances(connected_components(fg, 8), opt.min_area);
  return seg;
}

Image<std::uint8_t> score_to_gray(const FloatImage& score) {
  Image<std::uint8_t> g(score.height, score.width, 1);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const double v = (static_cast<double>(score.pixels[i]) + 1.0) * 127.5;
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return g;
}

}  // namespace nucleigan
