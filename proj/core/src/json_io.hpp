// Private JSON (de)serialization helpers shared by checkpoint and config code.
#pragma once

#include <json.hpp>

#include "nucleigan/losses.hpp"
#include "nucleigan/mask_synth.hpp"
#include "nucleigan/nn.hpp"

namespace nucleigan {

using json = nlohmann::json;

inline json to_json(const NetworkSpec& s) {
  return json{{"kind", to_string(s.kind)},
              {"in_channels", s.in_channels},
              {"out_channels", s.out_channels},
              {"base_width", s.base_width},
              {"n_resblocks", s.n_resblocks},
              {"n_levels", s.n_levels},
              {"norm", to_string(s.norm)},
              {"spectral_norm", s.spectral_norm},
              {"n_power_iters", s.n_power_iters}};
}

inline NetworkSpec network_spec_from_json(const json& j) {
  NetworkSpec s;
  s.kind = network_kind_from_string(j.at("kind").get<std::string>());
  s.in_channels = j.value("in_channels", s.in_channels);
  s.out_channels = j.value("out_channels", s.out_channels);
  s.base_width = j.value("base_width", s.base_width);
  s.n_resblocks = j.value("n_resblocks", s.n_resblocks);
  s.n_levels = j.value("n_levels", s.n_levels);
  s.norm = norm_kind_from_string(j.value("norm", to_string(s.norm)));
  s.spectral_norm = j.value("spectral_norm", s.spectral_norm);
  s.n_power_iters = j.value("n_power_iters", s.n_power_iters);
  return s;
}

inline json to_json(const LossWeights& w) {
  return json{{"lambda_n", w.lambda_n},   {"lambda_m", w.lambda_m},
              {"l1_weight", w.l1_weight}, {"gp_weight", w.gp_weight},
              {"gp_enabled", w.gp_enabled}};
}

inline LossWeights loss_weights_from_json(const json& j, LossWeights w = {}) {
  w.lambda_n = j.value("lambda_n", w.lambda_n);
  w.lambda_m = j.value("lambda_m", w.lambda_m);
  w.l1_weight = j.value("l1_weight", w.l1_weight);
  w.gp_weight = j.value("gp_weight", w.gp_weight);
  w.gp_enabled = j.value("gp_enabled", w.gp_enabled);
  return w;
}

inline json to_json(const SamplerParams& p) {
  return json{{"height", p.height},
              {"width", p.width},
              {"target_count", p.target_count},
              {"size_jitter", p.size_jitter},
              {"shape_jitter", p.shape_jitter},
              {"clump_fraction", p.clump_fraction},
              {"max_overlap", p.max_overlap},
              {"placement_grid_cells", p.placement_grid_cells}};
}

inline SamplerParams sampler_params_from_json(const json& j, SamplerParams p = {}) {
  p.height = j.value("height", p.height);
  p.width = j.value("width", p.width);
  p.target_count = j.value("target_count", p.target_count);
  p.size_jitter = j.value("size_jitter", p.size_jitter);
  p.shape_jitter = j.value("shape_jitter", p.shape_jitter);
  p.clump_fraction = j.value("clump_fraction", p.clump_fraction);
  p.max_overlap = j.value("max_overlap", p.max_overlap);
  p.placement_grid_cells = j.value("placement_grid_cells", p.placement_grid_cells);
  return p;
}

/// 64-bit FNV-1a, hex encoded. Used for config fingerprints.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace nucleigan
