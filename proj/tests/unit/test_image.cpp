#include <doctest.h>

#include <filesystem>

#include "nucleigan/image.hpp"
#include "nucleigan/image_io.hpp"
#include "test_support.hpp"

using namespace nucleigan;

TEST_CASE("canonicalize relabels in raster order of first appearance") {
  InstanceMap m(2, 3);
  m.labels = {7, 0, 3, 3, 7, 9};
  CHECK(canonicalize(m) == 3);
  CHECK(m.labels == std::vector<std::int32_t>{1, 0, 2, 2, 1, 3});
  CHECK(count_instances(m) == 3);
  CHECK(m.max_label() == 3);
}

TEST_CASE("canonicalize of an empty map is zero") {
  InstanceMap m(4, 4);
  CHECK(canonicalize(m) == 0);
}

TEST_CASE("foreground marks positive labels") {
  InstanceMap m(1, 3);
  m.labels = {0, 2, 5};
  const auto f = foreground(m);
  CHECK(f.pixels == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("resize_bilinear of a constant image stays constant") {
  RGBImage img(5, 7, 3, 91);
  const auto out = resize_bilinear(img, 13, 4);
  CHECK(out.height == 13);
  CHECK(out.width == 4);
  for (auto v : out.pixels) CHECK(v == 91);
}

TEST_CASE("resize_nearest of an instance map keeps the label set") {
  auto m = testing::random_instance_map(20, 20, 3);
  const auto big = resize_nearest(m, 40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) CHECK(big.at(y, x) == m.at(y / 2, x / 2));
}

TEST_CASE("crop copies the window and rejects out-of-range windows") {
  InstanceMap m(4, 4);
  for (int i = 0; i < 16; ++i) m.labels[i] = i;
  const auto c = crop(m, 1, 2, 2, 2);
  CHECK(c.labels == std::vector<std::int32_t>{6, 7, 10, 11});
  CHECK_THROWS_AS(crop(m, 3, 3, 2, 2), ArgumentError);
}

TEST_CASE("pad_reflect mirrors without repeating the edge") {
  RGBImage img(1, 3, 3);
  for (int x = 0; x < 3; ++x)
    for (int c = 0; c < 3; ++c) img.at(0, x, c) = static_cast<std::uint8_t>(10 * x);
  const auto p = pad_reflect(img, 1, 5);
  CHECK(p.at(0, 3, 0) == 10);
  CHECK(p.at(0, 4, 0) == 0);
}

TEST_CASE("PNG and TIFF RGB round trip") {
  const auto dir = testing::temp_dir("image_io");
  RGBImage img(9, 11, 3);
  Rng rng(5);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  io::write_rgb(dir / "a.png", img);
  io::write_rgb(dir / "a.tif", img);
  CHECK(io::read_rgb(dir / "a.png") == img);
  CHECK(io::read_rgb(dir / "a.tif") == img);
}

TEST_CASE("16-bit label PNG round trip and overflow error") {
  const auto dir = testing::temp_dir("labels_io");
  InstanceMap m(6, 6);
  m.at(0, 0) = 1;
  m.at(2, 3) = 65535;
  io::write_labels(dir / "l.png", m);
  CHECK(io::read_labels(dir / "l.png") == m);
  m.at(1, 1) = 70000;
  CHECK_THROWS(io::write_labels(dir / "bad.png", m));
}

TEST_CASE("reading a missing file is an io error") {
  CHECK_THROWS_AS(io::read_rgb("/nonexistent/x.png"), IoError);
}
