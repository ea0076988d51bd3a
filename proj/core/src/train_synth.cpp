#include "nucleigan/train_synth.hpp"

#include <cmath>
#include <cstring>

#include "json_io.hpp"
#include "nucleigan/checkpoint.hpp"
#include "nucleigan/convert.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/rng.hpp"

namespace nucleigan {

namespace fs = std::filesystem;

void SynthTrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (!(lr >= 0.0)) throw ArgumentError("lr must be >= 0");
  if (lr_decay_start_epoch < 0 || lr_decay_start_epoch >= epochs)
    throw ArgumentError("lr_decay_start_epoch must be in [0, epochs)");
  if (batch_size != 1) throw ArgumentError("only batch_size 1 is supported");
  if (image_size < 64 || image_size % 4 != 0)
    throw ArgumentError("image_size must be >= 64 and divisible by 4");
  if (max_steps_per_epoch < 0) throw ArgumentError("max_steps_per_epoch must be >= 0");
  weights.validate();
  for (const auto* s : {&generator, &segmenter, &disc_image, &disc_mask}) s->validate();
  if (generator.in_channels != 1 || segmenter.out_channels != 1)
    throw ArgumentError("masks are single-channel: G takes 1 channel and S emits 1");
  if (generator.out_channels != segmenter.in_channels)
    throw ArgumentError("G output channels must match S input channels");
  if (disc_image.in_channels != generator.out_channels || disc_mask.in_channels != 1)
    throw ArgumentError("discriminator input channels do not match the domains");
}

double lr_schedule(double lr, int epochs, int decay_start, int epoch) {
  if (epoch < 0 || epoch > epochs)
    throw ArgumentError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epochs) + "]");
  if (epoch < decay_start) return lr;
  return lr * static_cast<double>(epochs - epoch) / static_cast<double>(epochs - decay_start);
}

double lr_schedule(const SynthTrainConfig& cfg, int epoch) {
  return lr_schedule(cfg.lr, cfg.epochs, cfg.lr_decay_start_epoch, epoch);
}

SynthNets make_synth_nets(const SynthTrainConfig& cfg) {
  cfg.validate();
  SynthNets nets;
  nets.G = build_network<float>(cfg.generator, mix_seed(cfg.seed, 1));
  nets.S = build_network<float>(cfg.segmenter, mix_seed(cfg.seed, 2));
  nets.D_N = build_network<float>(cfg.disc_image, mix_seed(cfg.seed, 3));
  nets.D_M = build_network<float>(cfg.disc_mask, mix_seed(cfg.seed, 4));
  auto gen_params = nets.G->parameter_tensors();
  for (auto& p : nets.S->parameter_tensors()) gen_params.push_back(p);
  nets.opt_gen = std::make_unique<Adam<float>>(gen_params, cfg.adam_beta1, cfg.adam_beta2);
  nets.opt_dn = std::make_unique<Adam<float>>(nets.D_N->parameter_tensors(), cfg.adam_beta1, cfg.adam_beta2);
  nets.opt_dm = std::make_unique<Adam<float>>(nets.D_M->parameter_tensors(), cfg.adam_beta1, cfg.adam_beta2);
  return nets;
}

namespace {

std::string report_json(const SynthStepReport& r) {
  return json{{"gan_g", r.gan_g},     {"gan_s", r.gan_s},     {"cycle", r.cycle},
              {"cycle_n", r.cycle_n}, {"cycle_m", r.cycle_m}, {"generator_total", r.generator_total},
              {"disc_n", r.disc_n},   {"disc_m", r.disc_m}}
      .dump();
}

std::string parameter_fingerprint(Network<float>& net) {
  std::string bytes;
  for (const auto& p : net.parameters()) {
    bytes += p.name;
    const auto d = p.tensor.data();
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
  }
  return fnv1a_hex(bytes);
}

RGBImage to_training_size(const RGBImage& img, int size) {
  if (img.height == size && img.width == size) return img;
  return resize_bilinear(img, size, size);
}

void save_all(SynthNets& nets, const fs::path& dir, const std::string& g_extra) {
  fs::create_directories(dir);
  save_checkpoint(dir / "G.ckpt", *nets.G, g_extra);
  save_checkpoint(dir / "S.ckpt", *nets.S);
  save_checkpoint(dir / "D_N.ckpt", *nets.D_N);
  save_checkpoint(dir / "D_M.ckpt", *nets.D_M);
}

}  // namespace

SynthStepReport train_step_synth(SynthNets& nets, const Tensor<float>& m, const Tensor<float>& n,
                                 const SynthTrainConfig& cfg, double lr) {
  if (m.shape().c != 1 || n.shape().h != m.shape().h || n.shape().w != m.shape().w)
    throw ArgumentError("train_step_synth: expected a 1-channel mask and an image of the same size");
  SynthStepReport r;
  const float disc_scale = cfg.disc_loss_halved ? 0.5f : 1.0f;

  nets.opt_gen->zero_grad();
  nets.D_N->zero_grad();
  nets.D_M->zero_grad();
  Tensor<float> fake_n = nets.G->forward(m);
  Tensor<float> fake_m = nets.S->forward(n);
  Tensor<float> rec_m = nets.S->forward(fake_n);
  Tensor<float> rec_n = nets.G->forward(fake_m);
  Tensor<float> gan_g = gan_loss_generator(nets.D_N->forward(fake_n));
  Tensor<float> gan_s = gan_loss_generator(nets.D_M->forward(fake_m));
  Tensor<float> cyc = cycle_loss(m, n, rec_m, rec_n, cfg.weights);
  Tensor<float> total = ops::add(ops::add(gan_g, gan_s), cyc);
  r.gan_g = gan_g.item();
  r.gan_s = gan_s.item();
  r.cycle = cyc.item();
  r.generator_total = total.item();
  {
    NoGradGuard ng;
    r.cycle_n = l1_term(rec_n, n).item();
    r.cycle_m = l1_term(rec_m, m).item();
  }
  if (!std::isfinite(r.generator_total))
    throw NumericalError("non-finite generator loss: " + report_json(r));
  total.backward();
  nets.opt_gen->step(lr);

  nets.D_N->zero_grad();
  Tensor<float> dn = ops::scale(
      gan_loss_discriminator(nets.D_N->forward(n), nets.D_N->forward(fake_n.detach())), disc_scale);
  r.disc_n = dn.item();
  if (!std::isfinite(r.disc_n)) throw NumericalError("non-finite D_N loss: " + report_json(r));
  dn.backward();
  nets.opt_dn->step(lr);

  nets.D_M->zero_grad();
  Tensor<float> dm = ops::scale(
      gan_loss_discriminator(nets.D_M->forward(m), nets.D_M->forward(fake_m.detach())), disc_scale);
  r.disc_m = dm.item();
  if (!std::isfinite(r.disc_m)) throw NumericalError("non-finite D_M loss: " + report_json(r));
  dm.backward();
  nets.opt_dm->step(lr);
  return r;
}

std::vector<SynthEpochSummary> train_synth(const SynthTrainConfig& cfg,
                                           const std::vector<RGBImage>& real_images,
                                           const ShapeDictionary& dict, const fs::path& out_dir,
                                           const SynthProgress& progress) {
  cfg.validate();
  if (real_images.empty()) throw ArgumentError("train_synth needs at least one real image");
  if (dict.entries.empty()) throw EmptyDictionaryError("train_synth needs a non-empty dictionary");
  SamplerParams sampler = cfg.sampler;
  sampler.height = sampler.width = cfg.image_size;
  sampler.validate();

  std::vector<Tensor<float>> reals;
  for (const auto& img : real_images) reals.push_back(image_to_tensor(to_training_size(img, cfg.image_size)));

  SynthNets nets = make_synth_nets(cfg);
  const json g_extra{{"dictionary", serialize_dictionary(dict)}, {"sampler", to_json(sampler)}};

  const int steps = cfg.max_steps_per_epoch > 0
                        ? std::min<int>(cfg.max_steps_per_epoch, static_cast<int>(reals.size()))
                        : static_cast<int>(reals.size());
  std::vector<SynthEpochSummary> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    std::vector<std::size_t> order(reals.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order.begin(), order.end());

    SynthEpochSummary summary;
    summary.epoch = epoch;
    summary.lr = lr;
    for (int i = 0; i < steps; ++i) {
      const std::uint64_t mask_seed =
          mix_seed(cfg.seed ^ 0x6d61736bULL, static_cast<std::uint64_t>(epoch) * steps + i);
      const Tensor<float> m = gray_to_tensor(render_mask_image(sample_mask(dict, sampler, mask_seed)));
      SynthStepReport r;
      try {
        r = train_step_synth(nets, m, reals[order[i]], cfg, lr);
      } catch (const NumericalError&) {
        save_all(nets, out_dir / "nonfinite", g_extra.dump());
        throw;
      }
      auto& a = summary.mean;
      a.gan_g += r.gan_g / steps;
      a.gan_s += r.gan_s / steps;
      a.cycle += r.cycle / steps;
      a.cycle_n += r.cycle_n / steps;
      a.cycle_m += r.cycle_m / steps;
      a.generator_total += r.generator_total / steps;
      a.disc_n += r.disc_n / steps;
      a.disc_m += r.disc_m / steps;
    }
    history.push_back(summary);
    if (progress) progress(summary);
  }
  save_all(nets, out_dir, g_extra.dump());
  return history;
}

DatasetManifest generate_synthetic_dataset(Network<float>& G, const ShapeDictionary& dict,
                                           const SamplerParams& sampler, int count,
                                           std::uint64_t seed, const fs::path& out, bool overwrite,
                                           const std::string& created_at) {
  if (count < 0) throw ArgumentError("count must be >= 0");
  sampler.validate();
  DatasetManifest manifest;
  manifest.created_at = created_at;
  manifest.config_hash = fnv1a_hex(json{{"generator", to_json(G.spec())},
                                        {"weights", parameter_fingerprint(G)},
                                        {"dictionary", fnv1a_hex(serialize_dictionary(dict))},
                                        {"sampler", to_json(sampler)},
                                        {"count", count},
                                        {"seed", seed}}
                                       .dump());
  if (count == 0) return manifest;
  if (!overwrite && (fs::exists(out / "manifest.json") || fs::exists(out / "images")))
    throw IoError("output directory already holds a dataset (use overwrite): " + out.string());
  for (const char* sub : {"images", "labels", "masks"}) fs::create_directories(out / sub);

  NoGradGuard no_grad;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(i));
    const SynthMaskPair pair = sample_mask(dict, sampler, s);
    const RGBImage render = render_mask_image(pair);
    const RGBImage he = tensor_to_image(G.forward(gray_to_tensor(render)));
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%06d", i);
    ManifestRecord rec;
    rec.image = out / "images" / (std::string(stem) + ".png");
    rec.instances = out / "labels" / (std::string(stem) + ".png");
    io::write_rgb(rec.image, he);
    io::write_labels(rec.instances, pair.instances);
    Image<std::uint8_t> gray(render.height, render.width, 1);
    for (std::size_t k = 0; k < gray.pixels.size(); ++k) gray.pixels[k] = render.pixels[3 * k];
    io::write_gray8(out / "masks" / (std::string(stem) + ".png"), gray);
    rec.organ = "synthetic";
    rec.patient = "synthetic";
    rec.split = Split::Train;
    rec.source = Source::Synthetic;
    rec.seed = s;
    manifest.records.push_back(std::move(rec));
  }
  save_manifest(out / "manifest.json", manifest);
  return manifest;
}

GeneratorBundle load_generator_bundle(const fs::path& ckpt) {
  std::string extra;
  GeneratorBundle b;
  b.G = load_checkpoint<float>(ckpt, &extra);
  try {
    const json j = json::parse(extra);
    if (!j.contains("dictionary"))
      throw ValidationError("checkpoint " + ckpt.string() + " carries no shape dictionary");
    b.dict = parse_dictionary(j.at("dictionary").get<std::string>());
    b.sampler = sampler_params_from_json(j.value("sampler", json::object()));
  } catch (const json::exception& e) {
    throw ValidationError("malformed generator checkpoint payload: " + std::string(e.what()));
  }
  return b;
}

}  // namespace nucleigan
