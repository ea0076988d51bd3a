#include "nucleigan/image.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace nucleigan {

std::int32_t InstanceMap::max_label() const {
  std::int32_t m = 0;
  for (auto v : labels) m = std::max(m, v);
  return m;
}

std::int32_t canonicalize(InstanceMap& map) {
  std::unordered_map<std::int32_t, std::int32_t> remap;
  std::int32_t next = 0;
  for (auto& v : map.labels) {
    if (v <= 0) {
      v = 0;
      continue;
    }
    auto [it, inserted] = remap.try_emplace(v, next + 1);
    if (inserted) ++next;
    v = it->second;
  }
  return next;
}

std::size_t count_instances(const InstanceMap& map) {
  std::vector<std::int32_t> seen;
  seen.reserve(64);
  for (auto v : map.labels)
    if (v > 0) seen.push_back(v);
  std::sort(seen.begin(), seen.end());
  return static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
}

BinaryMask foreground(const InstanceMap& map) {
  BinaryMask out(map.height, map.width, 1, 0);
  for (std::size_t i = 0; i < map.labels.size(); ++i) out.pixels[i] = map.labels[i] > 0 ? 1 : 0;
  return out;
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

RGBImage resize_bilinear(const RGBImage& img, int height, int width) {
  if (height <= 0 || width <= 0) throw ArgumentError("resize target must be positive");
  RGBImage out(height, width, img.channels);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                         wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

namespace {

inline int nearest_source(int dst, int src_n, int dst_n) {
  const int s = static_cast<int>(std::floor((dst + 0.5) * src_n / static_cast<double>(dst_n)));
  return std::min(s, src_n - 1);
}

}  // namespace

template <class T>
Image<T> resize_nearest(const Image<T>& img, int height, int width) {
  if (height <= 0 || width <= 0) throw ArgumentError("resize target must be positive");
  Image<T> out(height, width, img.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, img.height, height);
    for (int x = 0; x < width; ++x) {
      const int sx = nearest_source(x, img.width, width);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

InstanceMap resize_nearest(const InstanceMap& map, int height, int width) {
  if (height <= 0 || width <= 0) throw ArgumentError("resize target must be positive");
  InstanceMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = nearest_source(y, map.height, height);
    for (int x = 0; x < width; ++x) out.at(y, x) = map.at(sy, nearest_source(x, map.width, width));
  }
  return out;
}

template <class T>
Image<T> crop(const Image<T>& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || y0 + height > img.height || x0 + width > img.width)
    throw ArgumentError("crop window outside image");
  Image<T> out(height, width, img.channels);
  for (int y = 0; y < height; ++y)
    std::copy_n(&img.at(y0 + y, x0, 0), static_cast<std::size_t>(width) * img.channels,
                &out.at(y, 0, 0));
  return out;
}

InstanceMap crop(const InstanceMap& map, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || y0 + height > map.height || x0 + width > map.width)
    throw ArgumentError("crop window outside map");
  InstanceMap out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(y, x) = map.at(y0 + y, x0 + x);
  return out;
}

RGBImage pad_reflect(const RGBImage& img, int height, int width) {
  if (height < img.height || width < img.width) throw ArgumentError("pad target smaller than image");
  RGBImage out(height, width, img.channels);
  for (int y = 0; y < height; ++y) {
    const int sy = reflect_index(y, img.height);
    for (int x = 0; x < width; ++x) {
      const int sx = reflect_index(x, img.width);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

template Image<std::uint8_t> resize_nearest(const Image<std::uint8_t>&, int, int);
template Image<float> resize_nearest(const Image<float>&, int, int);
template Image<std::uint8_t> crop(const Image<std::uint8_t>&, int, int, int, int);
template Image<float> crop(const Image<float>&, int, int, int, int);

}  // namespace nucleigan
