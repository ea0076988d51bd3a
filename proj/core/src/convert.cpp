#include "nucleigan/convert.hpp"

#include <algorithm>
#include <cmath>

#include "nucleigan/errors.hpp"
#include "nucleigan/mask_synth.hpp"

namespace nucleigan {

Tensor<float> image_to_tensor(const RGBImage& img) {
  const int c = img.channels;
  Tensor<float> t(Shape{1, c, img.height, img.width});
  auto out = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int k = 0; k < c; ++k)
      out[k * plane + i] = static_cast<float>(img.pixels[i * c + k]) / 127.5f - 1.0f;
  return t;
}

Tensor<float> gray_to_tensor(const Image<std::uint8_t>& img) {
  Tensor<float> t(Shape{1, 1, img.height, img.width});
  auto out = t.mutable_data();
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    out[i] = static_cast<float>(img.pixels[i * img.channels]) / 127.5f - 1.0f;
  return t;
}

Image<std::uint8_t> tensor_to_image(const Tensor<float>& t) {
  const Shape s = t.shape();
  if (s.n != 1) throw ArgumentError("tensor_to_image expects a batch of one");
  Image<std::uint8_t> img(s.h, s.w, s.c);
  auto in = t.data();
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < plane; ++i)
    for (int k = 0; k < s.c; ++k) {
      const double v = (static_cast<double>(in[k * plane + i]) + 1.0) * 127.5;
      img.pixels[i * s.c + k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  return img;
}

FloatImage tensor_plane(const Tensor<float>& t) {
  const Shape s = t.shape();
  FloatImage img(s.h, s.w, 1);
  std::copy(t.data().begin(), t.data().begin() + s.plane(), img.pixels.begin());
  return img;
}

Tensor<float> segmentation_target(const InstanceMap& instances) {
  const RGBImage render = render_mask_image(instances);
  Tensor<float> t(Shape{1, 1, instances.height, instances.width}, -1.0f);
  auto out = t.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (render.pixels[3 * i] == 255) out[i] = 1.0f;
  return t;
}

}  // namespace nucleigan
