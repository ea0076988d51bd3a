#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nucleigan/errors.hpp"

namespace nucleigan {

/// Interleaved, row-major image with a fixed channel count.
template <class T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> pixels;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c),
        pixels(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || c <= 0) throw ArgumentError("invalid image dimensions");
  }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }
  bool empty() const { return pixels.empty(); }
  bool same_size(const Image& o) const { return height == o.height && width == o.width; }
  bool operator==(const Image&) const = default;
};

using RGBImage = Image<std::uint8_t>;    // 3 channels, 0..255
using BinaryMask = Image<std::uint8_t>;  // 1 channel, 0 or 1
using FloatImage = Image<float>;

/// Integer-labelled nucleus map. 0 is background, k > 0 is nucleus k.
struct InstanceMap {
  int height = 0;
  int width = 0;
  std::vector<std::int32_t> labels;

  InstanceMap() = default;
  InstanceMap(int h, int w)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}

  std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::int32_t max_label() const;
  bool same_size(const InstanceMap& o) const { return height == o.height && width == o.width; }
  bool operator==(const InstanceMap&) const = default;
};

/// Relabels so the label set is {0} ∪ {1..K}, preserving the order of
/// first appearance in raster scan. Returns K.
std::int32_t canonicalize(InstanceMap& map);

/// Number of distinct positive labels.
std::size_t count_instances(const InstanceMap& map);

BinaryMask foreground(const InstanceMap& map);

/// Bilinear resize (align-corners off, pixel-center convention).
RGBImage resize_bilinear(const RGBImage& img, int height, int width);
template <class T>
Image<T> resize_nearest(const Image<T>& img, int height, int width);
InstanceMap resize_nearest(const InstanceMap& map, int height, int width);

template <class T>
Image<T> crop(const Image<T>& img, int y0, int x0, int height, int width);
InstanceMap crop(const InstanceMap& map, int y0, int x0, int height, int width);

/// Pads by reflecting about the last row/column (no edge repeat).
RGBImage pad_reflect(const RGBImage& img, int height, int width);

}  // namespace nucleigan
