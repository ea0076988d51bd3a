#include <set>

#include "json_io.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/pipeline.hpp"

namespace nucleigan {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
}

json synth_to_json(const SynthTrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_decay_start_epoch", c.lr_decay_start_epoch},
              {"batch_size", c.batch_size},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"weights", to_json(c.weights)},
              {"seed", c.seed},
              {"disc_loss_halved", c.disc_loss_halved},
              {"image_size", c.image_size},
              {"max_steps_per_epoch", c.max_steps_per_epoch},
              {"sampler", to_json(c.sampler)},
              {"generator", to_json(c.generator)},
              {"segmenter", to_json(c.segmenter)},
              {"disc_image", to_json(c.disc_image)},
              {"disc_mask", to_json(c.disc_mask)}};
}

NetworkSpec spec_from(const json& j, const std::string& key, const NetworkSpec& fallback) {
  if (!j.contains(key)) return fallback;
  json merged = to_json(fallback);
  check_keys(j.at(key), {"kind", "in_channels", "out_channels", "base_width", "n_resblocks", "n_levels",
                         "norm", "spectral_norm", "n_power_iters"},
             key);
  merged.update(j.at(key));
  return network_spec_from_json(merged);
}

LossWeights weights_from(const json& j, const LossWeights& fallback) {
  if (!j.contains("weights")) return fallback;
  check_keys(j.at("weights"), {"lambda_n", "lambda_m", "l1_weight", "gp_weight", "gp_enabled"}, "weights");
  return loss_weights_from_json(j.at("weights"), fallback);
}

SynthTrainConfig synth_from_json(const json& j) {
  check_keys(j, {"epochs", "lr", "lr_decay_start_epoch", "batch_size", "adam_beta1", "adam_beta2", "weights",
                 "seed", "disc_loss_halved", "image_size", "max_steps_per_epoch", "sampler", "generator",
                 "segmenter", "disc_image", "disc_mask"},
             "synth");
  SynthTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_start_epoch = j.value("lr_decay_start_epoch", c.lr_decay_start_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.weights = weights_from(j, c.weights);
  c.seed = j.value("seed", c.seed);
  c.disc_loss_halved = j.value("disc_loss_halved", c.disc_loss_halved);
  c.image_size = j.value("image_size", c.image_size);
  c.max_steps_per_epoch = j.value("max_steps_per_epoch", c.max_steps_per_epoch);
  if (j.contains("sampler")) {
    check_keys(j.at("sampler"), {"height", "width", "target_count", "size_jitter", "shape_jitter",
                                 "clump_fraction", "max_overlap", "placement_grid_cells"},
               "sampler");
    c.sampler = sampler_params_from_json(j.at("sampler"), c.sampler);
  }
  c.generator = spec_from(j, "generator", c.generator);
  c.segmenter = spec_from(j, "segmenter", c.segmenter);
  c.disc_image = spec_from(j, "disc_image", c.disc_image);
  c.disc_mask = spec_from(j, "disc_mask", c.disc_mask);
  return c;
}

json seg_to_json(const SegTrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_decay_start_epoch", c.lr_decay_start_epoch},
              {"batch_size", c.batch_size},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"jitter", {{"resize_to", c.jitter.resize_to}, {"crop_to", c.jitter.crop_to}}},
              {"pool_size", c.pool_size},
              {"weights", to_json(c.weights)},
              {"seed", c.seed},
              {"adversarial", c.adversarial},
              {"segmenter", to_json(c.segmenter)},
              {"discriminator", to_json(c.discriminator)}};
}

SegTrainConfig seg_from_json(const json& j) {
  check_keys(j, {"epochs", "lr", "lr_decay_start_epoch", "batch_size", "adam_beta1", "adam_beta2", "jitter",
                 "pool_size", "weights", "seed", "adversarial", "segmenter", "discriminator"},
             "seg");
  SegTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_start_epoch = j.value("lr_decay_start_epoch", c.lr_decay_start_epoch);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  if (j.contains("jitter")) {
    const auto& jj = j.at("jitter");
    check_keys(jj, {"resize_to", "crop_to"}, "jitter");
    c.jitter.resize_to = jj.value("resize_to", c.jitter.resize_to);
    c.jitter.crop_to = jj.value("crop_to", c.jitter.crop_to);
  }
  c.pool_size = j.value("pool_size", c.pool_size);
  c.weights = weights_from(j, c.weights);
  c.seed = j.value("seed", c.seed);
  c.adversarial = j.value("adversarial", c.adversarial);
  c.segmenter = spec_from(j, "segmenter", c.segmenter);
  c.discriminator = spec_from(j, "discriminator", c.discriminator);
  return c;
}

json run_to_json(const RunConfig& c) {
  return json{
      {"tiles_dir", c.tiles_dir},
      {"out_dir", c.out_dir},
      {"created_at", c.created_at},
      {"patches", {{"patch", c.patches.patch}, {"stride", c.patches.stride}}},
      {"splits",
       {{"train_organs", c.splits.train_organs},
        {"test_organs", c.splits.test_organs},
        {"test_patient_fraction", c.splits.test_patient_fraction}}},
      {"stain",
       {{"enabled", c.stain.enabled},
        {"target", c.stain.target},
        {"sparsity", c.stain.sparsity},
        {"max_iters", c.stain.max_iters},
        {"seed", c.stain.seed}}},
      {"profile_resolution", c.profile_resolution},
      {"synth", synth_to_json(c.synth)},
      {"synthetic_count", c.synthetic_count},
      {"synthetic_seed", c.synthetic_seed},
      {"seg", seg_to_json(c.seg)},
      {"segment_tile", c.segment_tile},
      {"segment_overlap", c.segment_overlap},
      {"min_area", c.min_area},
      {"demo",
       {{"organs", c.demo.organs},
        {"patients_per_organ", c.demo.patients_per_organ},
        {"tiles_per_patient", c.demo.tiles_per_patient},
        {"tile_size", c.demo.tile_size},
        {"nuclei_per_tile", c.demo.nuclei_per_tile},
        {"seed", c.demo.seed}}}};
}

}  // namespace

std::string serialize_run_config(const RunConfig& cfg) { return run_to_json(cfg).dump(2) + "\n"; }

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, {"tiles_dir", "out_dir", "created_at", "patches", "splits", "stain", "profile_resolution",
                   "synth", "synthetic_count", "synthetic_seed", "seg", "segment_tile", "segment_overlap",
                   "min_area", "demo"},
               "run config");
    c.tiles_dir = j.value("tiles_dir", c.tiles_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.created_at = j.value("created_at", c.created_at);
    if (j.contains("patches")) {
      const auto& p = j.at("patches");
      check_keys(p, {"patch", "stride"}, "patches");
      c.patches.patch = p.value("patch", c.patches.patch);
      c.patches.stride = p.value("stride", c.patches.stride);
    }
    if (j.contains("splits")) {
      const auto& s = j.at("splits");
      check_keys(s, {"train_organs", "test_organs", "test_patient_fraction"}, "splits");
      c.splits.train_organs = s.value("train_organs", c.splits.train_organs);
      c.splits.test_organs = s.value("test_organs", c.splits.test_organs);
      c.splits.test_patient_fraction = s.value("test_patient_fraction", c.splits.test_patient_fraction);
    }
    if (j.contains("stain")) {
      const auto& s = j.at("stain");
      check_keys(s, {"enabled", "target", "sparsity", "max_iters", "seed"}, "stain");
      c.stain.enabled = s.value("enabled", c.stain.enabled);
      c.stain.target = s.value("target", c.stain.target);
      c.stain.sparsity = s.value("sparsity", c.stain.sparsity);
      c.stain.max_iters = s.value("max_iters", c.stain.max_iters);
      c.stain.seed = s.value("seed", c.stain.seed);
    }
    c.profile_resolution = j.value("profile_resolution", c.profile_resolution);
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    c.synthetic_count = j.value("synthetic_count", c.synthetic_count);
    c.synthetic_seed = j.value("synthetic_seed", c.synthetic_seed);
    if (j.contains("seg")) c.seg = seg_from_json(j.at("seg"));
    c.segment_tile = j.value("segment_tile", c.segment_tile);
    c.segment_overlap = j.value("segment_overlap", c.segment_overlap);
    c.min_area = j.value("min_area", c.min_area);
    if (j.contains("demo")) {
      const auto& d = j.at("demo");
      check_keys(d, {"organs", "patients_per_organ", "tiles_per_patient", "tile_size", "nuclei_per_tile", "seed"},
                 "demo");
      c.demo.organs = d.value("organs", c.demo.organs);
      c.demo.patients_per_organ = d.value("patients_per_organ", c.demo.patients_per_organ);
      c.demo.tiles_per_patient = d.value("tiles_per_patient", c.demo.tiles_per_patient);
      c.demo.tile_size = d.value("tile_size", c.demo.tile_size);
      c.demo.nuclei_per_tile = d.value("nuclei_per_tile", c.demo.nuclei_per_tile);
      c.demo.seed = d.value("seed", c.demo.seed);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(io::read_file(path)); }

std::string run_config_hash(const RunConfig& cfg) {
  // The output location does not influence results.
  RunConfig c = cfg;
  c.out_dir.clear();
  return fnv1a_hex(run_to_json(c).dump());
}

}  // namespace nucleigan
