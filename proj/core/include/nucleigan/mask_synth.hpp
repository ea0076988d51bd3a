#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nucleigan/image.hpp"

namespace nucleigan {

struct ShapeEntry {
  double equivalent_radius = 0.0;      // sqrt(area / pi), pixels
  std::vector<double> radial_profile;  // boundary distance / radius at K angles
  std::string source_organ;
  bool operator==(const ShapeEntry&) const = default;
};

struct ShapeDictionary {
  int profile_resolution = 16;
  std::vector<ShapeEntry> entries;
  bool operator==(const ShapeDictionary&) const = default;
};

inline constexpr double kMinProfile = 0.05;
inline constexpr double kMaxProfile = 1.5;

/// One dictionary entry per instance that does not touch the image border.
/// `organs`, if non-empty, tags the entries of maps[i] with organs[i].
/// Throws EmptyDictionaryError when no instance qualifies.
ShapeDictionary build_shape_dictionary(const std::vector<InstanceMap>& maps,
                                       int profile_resolution = 16,
                                       const std::vector<std::string>& organs = {});

/// Dictionary measured from rasterized disks of the given radii.
ShapeDictionary disk_dictionary(const std::vector<double>& radii, int profile_resolution = 16);

/// One JSON record per line.
std::string serialize_dictionary(const ShapeDictionary& dict);
ShapeDictionary parse_dictionary(const std::string& text);
void save_dictionary(const std::filesystem::path& path, const ShapeDictionary& dict);
ShapeDictionary load_dictionary(const std::filesystem::path& path);

struct SamplerParams {
  int height = 256;
  int width = 256;
  int target_count = 40;
  double size_jitter = 0.3;
  double shape_jitter = 0.25;
  double clump_fraction = 0.2;
  double max_overlap = 0.2;
  int placement_grid_cells = 64;

  void validate() const;
  bool operator==(const SamplerParams&) const = default;
};

/// Placement record of one sampled nucleus.
struct PlacedNucleus {
  std::int32_t label = 0;
  double cy = 0.0;
  double cx = 0.0;
  double radius = 0.0;        // scaled dictionary radius
  bool clumped = false;
  std::int32_t anchor = 0;    // label it was attached to, 0 if none
  std::int64_t overlap = 0;   // pixels shared with the anchor at placement
};

struct SynthMaskPair {
  BinaryMask render;  // 1 where instances > 0
  InstanceMap instances;
  std::uint64_t seed = 0;
  SamplerParams params;
  std::vector<PlacedNucleus> nuclei;
  bool warning = false;  // fewer than target_count nuclei could be placed
};

/// Jittered-grid placement of perturbed dictionary polygons. The first
/// round(target_count * (1 - clump_fraction)) nuclei neither overlap nor
/// touch anything; the rest are attached to a random earlier nucleus with an
/// overlap in (0, max_overlap * smaller area]. Each nucleus gets at most 10
/// attempts; failures are skipped and set `warning`. Later nuclei own
/// contested pixels; labels follow placement order.
SynthMaskPair sample_mask(const ShapeDictionary& dict, const SamplerParams& params,
                          std::uint64_t seed);

/// Pixels (y, x) whose centers fall inside the polygon (even-odd rule),
/// clipped to the canvas.
std::vector<std::pair<int, int>> rasterize_polygon(const std::vector<double>& ys,
                                                   const std::vector<double>& xs, int height,
                                                   int width);

/// Nucleus pixels 255, background 0. A pixel of instance k that is
/// 8-adjacent to a different instance with a lower label is drawn 128, so
/// touching instances stay separated under 8-connectivity.
RGBImage render_mask_image(const SynthMaskPair& pair);
RGBImage render_mask_image(const InstanceMap& instances);

}  // namespace nucleigan
