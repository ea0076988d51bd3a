#include <doctest.h>

#include <numeric>

#include "nucleigan/metrics.hpp"
#include "test_support.hpp"

using namespace nucleigan;

namespace {

InstanceMap square(int h, int w, int y0, int x0, int size, std::int32_t label, InstanceMap m = {}) {
  if (m.labels.empty()) m = InstanceMap(h, w);
  for (int y = y0; y < y0 + size; ++y)
    for (int x = x0; x < x0 + size; ++x) m.at(y, x) = label;
  return m;
}

InstanceMap permuted(const InstanceMap& m, std::uint64_t seed) {
  std::vector<std::int32_t> perm(200);
  std::iota(perm.begin(), perm.end(), 1);
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  InstanceMap out = m;
  for (auto& l : out.labels)
    if (l > 0) l = perm[l - 1];
  return out;
}

BinaryMask random_mask(int h, int w, std::uint64_t seed, double p) {
  Rng rng(seed);
  BinaryMask m(h, w, 1);
  for (auto& v : m.pixels) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("connected components: empty mask has no instances") {
  BinaryMask m(8, 8, 1);
  CHECK(count_instances(connected_components(m)) == 0);
}

TEST_CASE("connected components: diagonal neighbours depend on connectivity") {
  BinaryMask m(2, 2, 1);
  m.at(0, 0) = 1;
  m.at(1, 1) = 1;
  CHECK(count_instances(connected_components(m, 8)) == 1);
  CHECK(count_instances(connected_components(m, 4)) == 2);
}

TEST_CASE("connected components match a flood-fill oracle") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto mask = random_mask(32, 32, s, 0.2 + 0.01 * static_cast<double>(s));
    for (int conn : {4, 8}) CHECK(connected_components(mask, conn) == testing::flood_fill_components(mask, conn));
  }
}

TEST_CASE("remove_small_instances drops small pieces and canonicalizes") {
  auto m = square(10, 10, 0, 0, 2, 4);
  m = square(10, 10, 5, 5, 4, 9, m);
  const auto out = remove_small_instances(m, 5);
  CHECK(count_instances(out) == 1);
  CHECK(out.at(5, 5) == 1);
  CHECK(out.at(0, 0) == 0);
}

TEST_CASE("aji hand cases") {
  const auto gt = square(6, 6, 1, 1, 2, 1);
  CHECK(aji(gt, gt) == 1.0);
  const auto shifted = square(6, 6, 1, 2, 2, 1);
  CHECK(aji(gt, shifted) == 1.0 / 3.0);
  CHECK(testing::brute_force_aji(gt, shifted) == 1.0 / 3.0);
  CHECK(aji(gt, InstanceMap(6, 6)) == 0.0);
  CHECK(aji(InstanceMap(6, 6), InstanceMap(6, 6)) == 1.0);
}

TEST_CASE("aji rejects maps of different size") {
  CHECK_THROWS_AS(aji(InstanceMap(3, 3), InstanceMap(3, 4)), ArgumentError);
}

TEST_CASE("aji matches brute-force set arithmetic on random maps") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto gt = testing::random_instance_map(32, 32, 2 * s);
    const auto pred = testing::random_instance_map(32, 32, 2 * s + 1);
    CHECK(aji(gt, pred) == testing::brute_force_aji(gt, pred));
  }
}

TEST_CASE("aji properties: self score, bounds and relabeling invariance") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto gt = testing::random_instance_map(24, 24, 100 + s);
    const auto pred = testing::random_instance_map(24, 24, 500 + s);
    CHECK(aji(gt, gt) == 1.0);
    const double a = aji(gt, pred);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(aji(permuted(gt, s), permuted(pred, s + 1)) == a);
  }
}

TEST_CASE("hausdorff examples") {
  std::vector<Point> a{{0, 0}}, b{{3, 4}};
  CHECK(hausdorff(a, b) == 5.0);
  CHECK(hausdorff(a, a) == 0.0);
  CHECK_THROWS_AS(hausdorff(a, std::vector<Point>{}), ArgumentError);
}

TEST_CASE("hausdorff matches the quadratic oracle and is symmetric") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point> a(20), b(20);
    for (auto& p : a) p = {static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64))};
    for (auto& p : b) p = {static_cast<int>(rng.below(64)), static_cast<int>(rng.below(64))};
    const double h = hausdorff(a, b);
    CHECK(h == doctest::Approx(testing::brute_force_hausdorff(a, b)).epsilon(1e-12));
    CHECK(h == hausdorff(b, a));
  }
}

TEST_CASE("image hausdorff examples") {
  const auto gt = square(20, 20, 2, 2, 3, 1);
  CHECK(image_hausdorff(gt, gt) == 0.0);
  CHECK(image_hausdorff(InstanceMap(5, 5), InstanceMap(5, 5)) == 0.0);

  // One matched pair whose point sets are 5 apart at the far corner.
  InstanceMap g(20, 20), p(20, 20);
  for (int x = 0; x < 6; ++x) g.at(5, x) = 1;
  for (int x = 0; x < 1; ++x) p.at(5, x) = 1;
  CHECK(image_hausdorff(g, p) == 5.0);

  // Two matched pairs at distances 2 and 4.
  InstanceMap g2(30, 30), p2(30, 30);
  for (int x = 0; x < 3; ++x) g2.at(2, x) = 1;
  p2.at(2, 0) = 1;
  for (int x = 10; x < 15; ++x) g2.at(20, x) = 2;
  p2.at(20, 10) = 2;
  CHECK(image_hausdorff(g2, p2) == 3.0);
}

TEST_CASE("image hausdorff penalizes unmatched instances by the bounding-box diagonal") {
  const auto gt = square(20, 20, 2, 2, 3, 1);
  CHECK(image_hausdorff(gt, InstanceMap(20, 20)) == doctest::Approx(std::hypot(3.0, 3.0)));
}

TEST_CASE("image hausdorff matches the brute-force matcher on random maps") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto gt = testing::random_instance_map(32, 32, 1000 + s);
    const auto pred = testing::random_instance_map(32, 32, 2000 + s);
    CHECK(std::abs(image_hausdorff(gt, pred) - testing::brute_force_image_hausdorff(gt, pred)) <= 1e-9);
  }
}

TEST_CASE("f1 examples") {
  auto gt = square(20, 20, 1, 1, 3, 1);
  gt = square(20, 20, 10, 10, 3, 2, gt);
  const auto perfect = f1_score(gt, gt);
  CHECK(perfect.f1 == 1.0);
  CHECK(perfect.tp == 2);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);

  const auto half = f1_score(gt, square(20, 20, 1, 1, 3, 1));
  CHECK(half.precision == 1.0);
  CHECK(half.recall == 0.5);
  CHECK(half.f1 == doctest::Approx(2.0 / 3.0));

  CHECK(f1_score(gt, InstanceMap(20, 20)).f1 == 0.0);
}

TEST_CASE("f1 matches the brute-force matcher and keeps its counts consistent") {
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto gt = testing::random_instance_map(32, 32, 3000 + s);
    const auto pred = testing::random_instance_map(32, 32, 4000 + s);
    const auto r = f1_score(gt, pred);
    const auto b = testing::brute_force_f1(gt, pred);
    CHECK(r.tp == b.tp);
    CHECK(r.fp == b.fp);
    CHECK(r.fn == b.fn);
    CHECK(r.f1 == b.f1);
    CHECK(r.tp + r.fn == static_cast<int>(count_instances(gt)));
    CHECK(r.tp + r.fp == static_cast<int>(count_instances(pred)));
    CHECK(f1_score(permuted(gt, s), permuted(pred, s + 7)).f1 == r.f1);
  }
}

TEST_CASE("aggregate_metrics averages over images, not organs") {
  std::vector<ImageMetrics> v{{"a", "liver", 0.6, 1, 0.5, 0, 0, 0},
                              {"b", "kidney", 0.8, 3, 0.5, 0, 0, 0},
                              {"c", "kidney", 0.8, 5, 0.5, 0, 0, 0}};
  const auto r = aggregate_metrics(v);
  REQUIRE(r.per_organ.size() == 2);
  CHECK(r.per_organ[0].organ == "kidney");
  CHECK(r.per_organ[0].aji == doctest::Approx(0.8));
  CHECK(r.per_organ[1].aji == doctest::Approx(0.6));
  CHECK(r.overall.aji == doctest::Approx(2.2 / 3.0));
  CHECK(r.overall.n_images == 3);
}
