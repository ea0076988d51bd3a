#pragma once

#include <filesystem>
#include <string_view>

#include "nucleigan/image.hpp"

namespace nucleigan::io {

/// Reads an 8-bit PNG or TIFF (by extension) and returns 3-channel RGB.
/// Gray inputs are replicated; alpha is dropped.
RGBImage read_rgb(const std::filesystem::path& path);
/// Writes 8-bit RGB as PNG or TIFF depending on the extension.
void write_rgb(const std::filesystem::path& path, const RGBImage& img);

/// Single-channel 8-bit PNG.
void write_gray8(const std::filesystem::path& path, const Image<std::uint8_t>& img);
Image<std::uint8_t> read_gray8(const std::filesystem::path& path);

/// Instance maps are 16-bit single-channel PNGs; 8-bit label PNGs are accepted
/// on read.
InstanceMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const InstanceMap& map);

bool is_image_path(const std::filesystem::path& path);

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace nucleigan::io
