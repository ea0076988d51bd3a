#include <doctest.h>

#include <algorithm>
#include <set>

#include "nucleigan/mask_synth.hpp"
#include "nucleigan/metrics.hpp"
#include "test_support.hpp"

using namespace nucleigan;

namespace {

InstanceMap ellipse_map(int size, double cy, double cx, double ry, double rx) {
  InstanceMap m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = (y - cy) / ry, dx = (x - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) m.at(y, x) = 1;
    }
  return m;
}

ShapeDictionary ten_disks() {
  std::vector<double> radii;
  for (int r = 6; r < 16; ++r) radii.push_back(r);
  return disk_dictionary(radii);
}

/// Unordered label pairs that share an 8-neighbour boundary.
std::set<std::pair<int, int>> touching_pairs(const InstanceMap& m) {
  std::set<std::pair<int, int>> out;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const int a = m.at(y, x);
      if (a <= 0) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= m.height || nx >= m.width) continue;
          const int b = m.at(ny, nx);
          if (b > 0 && b != a) out.insert({std::min(a, b), std::max(a, b)});
        }
    }
  return out;
}

}  // namespace

TEST_CASE("disk of radius 10 gives a round dictionary entry") {
  const auto dict = build_shape_dictionary({ellipse_map(40, 20, 20, 10, 10)}, 16, {"breast"});
  REQUIRE(dict.entries.size() == 1);
  const auto& e = dict.entries[0];
  CHECK(e.equivalent_radius >= 9.5);
  CHECK(e.equivalent_radius <= 10.5);
  CHECK(e.radial_profile.size() == 16);
  for (double v : e.radial_profile) {
    CHECK(v >= 0.9);
    CHECK(v <= 1.1);
  }
  CHECK(e.source_organ == "breast");
}

TEST_CASE("2:1 ellipse gives a 2:1 profile") {
  const auto dict = build_shape_dictionary({ellipse_map(60, 30, 30, 8, 16)});
  REQUIRE(dict.entries.size() == 1);
  const auto& p = dict.entries[0].radial_profile;
  const double ratio = *std::max_element(p.begin(), p.end()) / *std::min_element(p.begin(), p.end());
  CHECK(ratio >= 1.7);
  CHECK(ratio <= 2.3);
}

TEST_CASE("instances touching the border are excluded") {
  CHECK_THROWS_AS(build_shape_dictionary({ellipse_map(20, 0, 10, 5, 5)}), EmptyDictionaryError);
  CHECK_THROWS_AS(build_shape_dictionary({InstanceMap(8, 8)}), EmptyDictionaryError);
}

TEST_CASE("dictionary serialization round trip") {
  auto dict = build_shape_dictionary({ellipse_map(60, 30, 30, 8, 16), ellipse_map(40, 20, 20, 10, 10)}, 16,
                                     {"liver", "colon"});
  const auto back = parse_dictionary(serialize_dictionary(dict));
  CHECK(back == dict);
  const auto dir = testing::temp_dir("dict");
  save_dictionary(dir / "d.jsonl", dict);
  CHECK(load_dictionary(dir / "d.jsonl") == dict);
}

TEST_CASE("radial profiles stay positive") {
  const auto dict = ten_disks();
  CHECK(dict.entries.size() == 10);
  for (const auto& e : dict.entries)
    for (double v : e.radial_profile) CHECK(v > 0.0);
}

TEST_CASE("rasterize_polygon fills pixel centers inside a square") {
  const auto px = rasterize_polygon({0.5, 0.5, 3.5, 3.5}, {0.5, 3.5, 3.5, 0.5}, 10, 10);
  CHECK(px.size() == 9);
  for (const auto& [y, x] : px) {
    CHECK(y >= 1);
    CHECK(y <= 3);
    CHECK(x >= 1);
    CHECK(x <= 3);
  }
}

TEST_CASE("target count 0 gives an empty pair") {
  SamplerParams p;
  p.target_count = 0;
  const auto pair = sample_mask(ten_disks(), p, 1);
  CHECK(count_instances(pair.instances) == 0);
  CHECK(std::all_of(pair.render.pixels.begin(), pair.render.pixels.end(), [](auto v) { return v == 0; }));
  CHECK_FALSE(pair.warning);
}

TEST_CASE("sampling is deterministic for a seed") {
  const auto dict = ten_disks();
  SamplerParams p;
  const auto a = sample_mask(dict, p, 77), b = sample_mask(dict, p, 77);
  CHECK(a.instances == b.instances);
  CHECK(a.render == b.render);
  REQUIRE(a.nuclei.size() == b.nuclei.size());
  for (std::size_t i = 0; i < a.nuclei.size(); ++i) {
    CHECK(a.nuclei[i].cy == b.nuclei[i].cy);
    CHECK(a.nuclei[i].cx == b.nuclei[i].cx);
    CHECK(a.nuclei[i].radius == b.nuclei[i].radius);
  }
  CHECK(sample_mask(dict, p, 78).instances != a.instances);
}

TEST_CASE("non-overlapping configuration gives exactly the target count of components") {
  const auto dict = ten_disks();
  SamplerParams p;
  p.target_count = 5;
  p.clump_fraction = 0.0;
  p.max_overlap = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto pair = sample_mask(dict, p, seed);
    CHECK(count_instances(pair.instances) == 5);
    CHECK(count_instances(connected_components(pair.render, 8)) == 5);
    CHECK(touching_pairs(pair.instances).empty());
  }
}

TEST_CASE("clumped nuclei produce at least half the expected overlapping pairs") {
  const auto dict = ten_disks();
  SamplerParams p;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = sample_mask(dict, p, 100 + seed);
    const int bound = static_cast<int>(std::floor(0.5 * p.clump_fraction * p.target_count));
    CHECK(static_cast<int>(touching_pairs(pair.instances).size()) >= bound);
    for (const auto& n : pair.nuclei)
      if (n.clumped) {
        CHECK(n.overlap > 0);
        CHECK(n.anchor > 0);
      }
  }
}

TEST_CASE("sampled pairs keep render and labels consistent") {
  const auto dict = ten_disks();
  SamplerParams p;
  p.height = 128;
  p.width = 96;
  p.target_count = 20;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto pair = sample_mask(dict, p, seed);
    CHECK(pair.render.height == 128);
    CHECK(pair.render.width == 96);
    for (std::size_t i = 0; i < pair.render.pixels.size(); ++i)
      CHECK(pair.render.pixels[i] == (pair.instances.labels[i] > 0 ? 1 : 0));
    auto canon = pair.instances;
    canonicalize(canon);
    const auto k = static_cast<std::int32_t>(count_instances(pair.instances));
    CHECK(pair.instances.max_label() == k);
  }
}

TEST_CASE("unachievable target returns with a warning") {
  const auto dict = ten_disks();
  SamplerParams p;
  p.height = p.width = 64;
  p.target_count = 500;
  p.clump_fraction = 0.0;
  const auto pair = sample_mask(dict, p, 3);
  CHECK(pair.warning);
  CHECK(count_instances(pair.instances) < 500);
}

TEST_CASE("invalid sampler parameters are rejected") {
  SamplerParams p;
  p.height = 32;
  CHECK_THROWS_AS(sample_mask(ten_disks(), p, 0), ArgumentError);
  SamplerParams q;
  q.clump_fraction = 1.5;
  CHECK_THROWS_AS(q.validate(), ArgumentError);
  CHECK_THROWS_AS(sample_mask(ShapeDictionary{}, SamplerParams{}, 0), EmptyDictionaryError);
}

TEST_CASE("render of an empty map is black") {
  const auto img = render_mask_image(InstanceMap(10, 10));
  CHECK(std::all_of(img.pixels.begin(), img.pixels.end(), [](auto v) { return v == 0; }));
}

TEST_CASE("render of a single instance is white exactly on it") {
  const auto m = ellipse_map(20, 10, 10, 4, 6);
  const auto img = render_mask_image(m);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      for (int c = 0; c < 3; ++c) CHECK(img.at(y, x, c) == (m.at(y, x) > 0 ? 255 : 0));
}

TEST_CASE("render separates a two-instance clump with seam pixels") {
  InstanceMap m(20, 20);
  for (int y = 5; y < 15; ++y) {
    for (int x = 2; x < 10; ++x) m.at(y, x) = 1;
    for (int x = 10; x < 18; ++x) m.at(y, x) = 2;
  }
  const auto img = render_mask_image(m);
  bool seam = false;
  for (int y = 5; y < 15; ++y) seam = seam || img.at(y, 10, 0) == 128;
  CHECK(seam);
  BinaryMask white(20, 20, 1);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) white.at(y, x) = img.at(y, x, 0) == 255;
  CHECK(count_instances(connected_components(white, 8)) == 2);
}
