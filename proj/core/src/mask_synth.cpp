#include "nucleigan/mask_synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json_io.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/rng.hpp"

namespace nucleigan {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kAttemptsPerNucleus = 10;

struct Pixel {
  int y;
  int x;
};

struct Polygon {
  std::vector<double> vy, vx;
  double max_radius = 0.0;
};

Polygon make_polygon(double cy, double cx, double radius, const std::vector<double>& profile,
                     double rotation) {
  Polygon p;
  const auto k = profile.size();
  for (std::size_t i = 0; i < k; ++i) {
    const double a = rotation + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(k);
    const double r = radius * profile[i];
    p.vy.push_back(cy + r * std::sin(a));
    p.vx.push_back(cx + r * std::cos(a));
    p.max_radius = std::max(p.max_radius, r);
  }
  return p;
}

bool inside(const Polygon& p, double y, double x) {
  bool in = false;
  const auto n = p.vy.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((p.vy[i] > y) != (p.vy[j] > y)) {
      const double xi = p.vx[j] + (y - p.vy[j]) * (p.vx[i] - p.vx[j]) / (p.vy[i] - p.vy[j]);
      if (x < xi) in = !in;
    }
  }
  return in;
}

std::vector<Pixel> rasterize(const Polygon& p, int height, int width) {
  double y0 = p.vy[0], y1 = p.vy[0], x0 = p.vx[0], x1 = p.vx[0];
  for (std::size_t i = 1; i < p.vy.size(); ++i) {
    y0 = std::min(y0, p.vy[i]);
    y1 = std::max(y1, p.vy[i]);
    x0 = std::min(x0, p.vx[i]);
    x1 = std::max(x1, p.vx[i]);
  }
  std::vector<Pixel> px;
  const int ya = std::max(0, static_cast<int>(std::floor(y0)));
  const int yb = std::min(height - 1, static_cast<int>(std::ceil(y1)));
  const int xa = std::max(0, static_cast<int>(std::floor(x0)));
  const int xb = std::min(width - 1, static_cast<int>(std::ceil(x1)));
  for (int y = ya; y <= yb; ++y)
    for (int x = xa; x <= xb; ++x)
      if (inside(p, y, x)) px.push_back({y, x});
  return px;
}

bool fits_canvas(double cy, double cx, double r, int height, int width) {
  return cy - r >= 0.0 && cx - r >= 0.0 && cy + r <= height - 1.0 && cx + r <= width - 1.0;
}

struct Probe {
  std::int64_t overlap = 0;  // pixels currently owned by the anchor
  bool conflict = false;     // overlaps or touches some other instance
};

Probe probe(const InstanceMap& map, const std::vector<Pixel>& px, std::int32_t anchor) {
  Probe r;
  for (const auto& p : px) {
    const auto own = map.at(p.y, p.x);
    if (own != 0 && own == anchor) ++r.overlap;
    for (int dy = -1; dy <= 1 && !r.conflict; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int yy = p.y + dy, xx = p.x + dx;
        if (yy < 0 || xx < 0 || yy >= map.height || xx >= map.width) continue;
        const auto l = map.at(yy, xx);
        if (l != 0 && l != anchor) {
          r.conflict = true;
          break;
        }
      }
    if (r.conflict) break;
  }
  return r;
}

}  // namespace

ShapeDictionary build_shape_dictionary(const std::vector<InstanceMap>& maps,
                                       int profile_resolution,
                                       const std::vector<std::string>& organs) {
  if (profile_resolution < 3) throw ArgumentError("profile_resolution must be >= 3");
  if (!organs.empty() && organs.size() != maps.size())
    throw ArgumentError("organs must be empty or match the number of maps");
  ShapeDictionary dict;
  dict.profile_resolution = profile_resolution;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    struct Stats {
      std::int64_t area = 0;
      double sy = 0.0, sx = 0.0;
      bool border = false;
    };
    std::map<std::int32_t, Stats> stats;
    for (int y = 0; y < map.height; ++y)
      for (int x = 0; x < map.width; ++x) {
        const auto l = map.at(y, x);
        if (l <= 0) continue;
        auto& s = stats[l];
        ++s.area;
        s.sy += y;
        s.sx += x;
        if (y == 0 || x == 0 || y == map.height - 1 || x == map.width - 1) s.border = true;
      }
    for (const auto& [label, s] : stats) {
      if (s.border) continue;
      const double cy = s.sy / s.area, cx = s.sx / s.area;
      ShapeEntry e;
      e.equivalent_radius = std::sqrt(static_cast<double>(s.area) / kPi);
      e.source_organ = organs.empty() ? "" : organs[m];
      for (int k = 0; k < profile_resolution; ++k) {
        const double a = 2.0 * kPi * k / profile_resolution;
        const double sa = std::sin(a), ca = std::cos(a);
        double t = 0.0;
        for (;; t += 0.1) {
          const int y = static_cast<int>(std::lround(cy + t * sa));
          const int x = static_cast<int>(std::lround(cx + t * ca));
          if (y < 0 || x < 0 || y >= map.height || x >= map.width || map.at(y, x) != label) break;
        }
        // The march exits half a pixel past the boundary of the last pixel center.
        const double dist = std::max(t - 0.5, 0.0);
        e.radial_profile.push_back(std::clamp(dist / e.equivalent_radius, kMinProfile, kMaxProfile));
      }
      dict.entries.push_back(std::move(e));
    }
  }
  if (dict.entries.empty())
    throw EmptyDictionaryError("no instances away from the image border to build a dictionary from");
  return dict;
}

ShapeDictionary disk_dictionary(const std::vector<double>& radii, int profile_resolution) {
  std::vector<InstanceMap> maps;
  for (double r : radii) {
    if (!(r > 0.0)) throw ArgumentError("disk radii must be > 0");
    const int size = 2 * static_cast<int>(std::ceil(r)) + 5;
    const double c = (size - 1) / 2.0;
    InstanceMap m(size, size);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if ((y - c) * (y - c) + (x - c) * (x - c) <= r * r) m.at(y, x) = 1;
    maps.push_back(std::move(m));
  }
  return build_shape_dictionary(maps, profile_resolution);
}

std::string serialize_dictionary(const ShapeDictionary& dict) {
  std::string out;
  for (const auto& e : dict.entries) {
    json j{{"equivalent_radius", e.equivalent_radius},
           {"radial_profile", e.radial_profile},
           {"source_organ", e.source_organ}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

ShapeDictionary parse_dictionary(const std::string& text) {
  ShapeDictionary dict;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ShapeEntry e;
      e.equivalent_radius = j.at("equivalent_radius").get<double>();
      e.radial_profile = j.at("radial_profile").get<std::vector<double>>();
      e.source_organ = j.value("source_organ", std::string{});
      if (!(e.equivalent_radius > 0.0)) throw ValidationError("equivalent_radius must be > 0");
      for (double v : e.radial_profile)
        if (!(v > 0.0)) throw ValidationError("radial_profile values must be > 0");
      if (dict.entries.empty())
        dict.profile_resolution = static_cast<int>(e.radial_profile.size());
      else if (static_cast<int>(e.radial_profile.size()) != dict.profile_resolution)
        throw ValidationError("inconsistent radial_profile length");
      dict.entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ValidationError("dictionary line " + std::to_string(lineno) + ": " + ex.what());
    } catch (const ValidationError& ex) {
      throw ValidationError("dictionary line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return dict;
}

void save_dictionary(const std::filesystem::path& path, const ShapeDictionary& dict) {
  io::write_file_atomic(path, serialize_dictionary(dict));
}

ShapeDictionary load_dictionary(const std::filesystem::path& path) {
  return parse_dictionary(io::read_file(path));
}

void SamplerParams::validate() const {
  if (height < 64 || width < 64) throw ArgumentError("sampler canvas must be at least 64x64");
  if (target_count < 0) throw ArgumentError("target_count must be >= 0");
  auto fraction = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError(std::string(name) + " must be in [0, 1]");
  };
  fraction(size_jitter, "size_jitter");
  fraction(shape_jitter, "shape_jitter");
  fraction(clump_fraction, "clump_fraction");
  if (!(max_overlap >= 0.0 && max_overlap < 0.5)) throw ArgumentError("max_overlap must be in [0, 0.5)");
  if (placement_grid_cells < 1) throw ArgumentError("placement_grid_cells must be >= 1");
}

SynthMaskPair sample_mask(const ShapeDictionary& dict, const SamplerParams& params,
                          std::uint64_t seed) {
  params.validate();
  SynthMaskPair pair;
  pair.seed = seed;
  pair.params = params;
  pair.instances = InstanceMap(params.height, params.width);
  pair.render = BinaryMask(params.height, params.width, 1);
  if (params.target_count == 0) return pair;
  if (dict.entries.empty()) throw EmptyDictionaryError("cannot sample from an empty dictionary");

  Rng rng(seed);
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(params.placement_grid_cells))));
  const double cell_h = static_cast<double>(params.height) / side;
  const double cell_w = static_cast<double>(params.width) / side;
  std::vector<int> cells(static_cast<std::size_t>(side) * side);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  rng.shuffle(cells.begin(), cells.end());
  cells.resize(std::min<std::size_t>(cells.size(), params.placement_grid_cells));
  std::size_t next_cell = 0;

  const int n_clumped = static_cast<int>(std::lround(params.clump_fraction * params.target_count));
  const int n_free = params.target_count - n_clumped;
  auto& map = pair.instances;
  std::vector<std::int64_t> areas(1, 0);  // by label

  auto commit = [&](const std::vector<Pixel>& px, PlacedNucleus nucleus) {
    nucleus.label = static_cast<std::int32_t>(pair.nuclei.size() + 1);
    for (const auto& p : px) {
      const auto prev = map.at(p.y, p.x);
      if (prev > 0) --areas[prev];
      map.at(p.y, p.x) = nucleus.label;
    }
    areas.push_back(static_cast<std::int64_t>(px.size()));
    pair.nuclei.push_back(nucleus);
  };

  for (int i = 0; i < params.target_count; ++i) {
    const bool want_clump = i >= n_free && !pair.nuclei.empty();
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerNucleus && !placed; ++attempt) {
      const auto& entry = dict.entries[rng.below(dict.entries.size())];
      const double radius = entry.equivalent_radius * (1.0 + params.size_jitter * rng.symmetric());
      std::vector<double> profile = entry.radial_profile;
      for (double& v : profile) v *= 1.0 + params.shape_jitter * rng.symmetric();
      const double rotation = rng.uniform(0.0, 2.0 * kPi);
      double max_r = 0.0;
      for (double v : profile) max_r = std::max(max_r, radius * v);

      if (!want_clump) {
        const int cell = cells[next_cell++ % cells.size()];
        const double cy = (cell / side + 0.5) * cell_h + 0.5 * cell_h * rng.symmetric();
        const double cx = (cell % side + 0.5) * cell_w + 0.5 * cell_w * rng.symmetric();
        if (!fits_canvas(cy, cx, max_r, params.height, params.width)) continue;
        const auto px = rasterize(make_polygon(cy, cx, radius, profile, rotation), params.height, params.width);
        if (px.empty() || probe(map, px, 0).conflict) continue;
        commit(px, {0, cy, cx, radius, false, 0, 0});
        placed = true;
        continue;
      }

      const auto& anchor = pair.nuclei[rng.below(pair.nuclei.size())];
      const double angle = rng.uniform(0.0, 2.0 * kPi);
      for (double dist = anchor.radius + radius; dist > 0.0; dist -= 0.5) {
        const double cy = anchor.cy + dist * std::sin(angle);
        const double cx = anchor.cx + dist * std::cos(angle);
        if (!fits_canvas(cy, cx, max_r, params.height, params.width)) continue;
        const auto px = rasterize(make_polygon(cy, cx, radius, profile, rotation), params.height, params.width);
        if (px.empty()) continue;
        const Probe pr = probe(map, px, anchor.label);
        if (pr.conflict) break;
        if (pr.overlap == 0) continue;
        const double limit = params.max_overlap *
                             static_cast<double>(std::min<std::int64_t>(areas[anchor.label], px.size()));
        if (static_cast<double>(pr.overlap) > limit) break;
        commit(px, {0, cy, cx, radius, true, anchor.label, pr.overlap});
        placed = true;
        break;
      }
    }
    if (!placed) pair.warning = true;
  }

  // Instances fully covered by later ones vanish; keep labels consecutive.
  if (std::count_if(areas.begin() + 1, areas.end(), [](auto a) { return a == 0; }) > 0) {
    canonicalize(map);
    std::vector<PlacedNucleus> kept;
    for (std::size_t l = 1; l < areas.size(); ++l)
      if (areas[l] > 0) kept.push_back(pair.nuclei[l - 1]);
    pair.nuclei = std::move(kept);
  }
  for (std::size_t i = 0; i < map.labels.size(); ++i) pair.render.pixels[i] = map.labels[i] > 0;
  return pair;
}

std::vector<std::pair<int, int>> rasterize_polygon(const std::vector<double>& ys,
                                                   const std::vector<double>& xs, int height,
                                                   int width) {
  if (ys.size() != xs.size() || ys.size() < 3)
    throw ArgumentError("a polygon needs at least 3 vertices with matching coordinates");
  Polygon p;
  p.vy = ys;
  p.vx = xs;
  std::vector<std::pair<int, int>> out;
  for (const auto& px : rasterize(p, height, width)) out.emplace_back(px.y, px.x);
  return out;
}

RGBImage render_mask_image(const InstanceMap& instances) {
  RGBImage img(instances.height, instances.width, 3);
  for (int y = 0; y < instances.height; ++y)
    for (int x = 0; x < instances.width; ++x) {
      const auto l = instances.at(y, x);
      if (l <= 0) continue;
      bool seam = false;
      for (int dy = -1; dy <= 1 && !seam; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= instances.height || xx >= instances.width) continue;
          const auto o = instances.at(yy, xx);
          if (o > 0 && o < l) {
            seam = true;
            break;
          }
        }
      const std::uint8_t v = seam ? 128 : 255;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
    }
  return img;
}

RGBImage render_mask_image(const SynthMaskPair& pair) { return render_mask_image(pair.instances); }

}  // namespace nucleigan
