#pragma once

#include "nucleigan/image.hpp"
#include "nucleigan/tensor.hpp"

namespace nucleigan {

/// 8-bit image -> [1, C, H, W] tensor scaled to [-1, 1] (v / 127.5 - 1).
Tensor<float> image_to_tensor(const RGBImage& img);
/// First channel of an 8-bit image -> [1, 1, H, W] in [-1, 1].
Tensor<float> gray_to_tensor(const Image<std::uint8_t>& img);
/// [1, C, H, W] in [-1, 1] -> 8-bit image, rounded and clamped.
Image<std::uint8_t> tensor_to_image(const Tensor<float>& t);
/// Channel-0 plane of a [1, C, H, W] tensor.
FloatImage tensor_plane(const Tensor<float>& t);

/// Segmentation target: +1 on nucleus pixels, -1 on background and on the
/// seam pixels that separate touching instances.
Tensor<float> segmentation_target(const InstanceMap& instances);

}  // namespace nucleigan
