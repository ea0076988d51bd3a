#include "nucleigan/image_io.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace nucleigan::io {
namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

bool is_tiff(const fs::path& p) {
  const auto e = lower_ext(p);
  return e == ".tif" || e == ".tiff";
}

fs::path temp_sibling(const fs::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  return tmp;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngImage {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major interleaved
};

PngImage read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian host order
  png_read_update_info(png, info);

  PngImage out;
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.channels = png_get_channels(png, info);
  depth = png_get_bit_depth(png, info);
  out.bit_depth = depth;
  const auto rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buffer(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(out.height) * out.width * out.channels;
  out.samples.resize(n);
  if (depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, buffer.data() + 2 * i, 2);
      out.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = buffer[i];
  }
  return out;
}

void write_png(const fs::path& path, int height, int width, int channels, int depth,
               const void* data) {
  const auto tmp = temp_sibling(path);
  {
    FilePtr fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + tmp.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_write_struct(&png, info ? &info : nullptr);
      throw IoError("png_create_write_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError("failed to encode PNG " + path.string());
    }
    png_init_io(png, fp.get());
    const int color = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    png_set_IHDR(png, info, width, height, depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (depth == 16) png_set_swap(png);
    const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (depth / 8);
    auto* base = static_cast<const png_byte*>(data);
    for (int y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(base + y * rowbytes));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  fs::rename(tmp, path);
}

RGBImage read_tiff(const fs::path& path) {
  TIFFSetWarningHandler(nullptr);
  std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(path.c_str(), "r"), TIFFClose);
  if (!tif) throw IoError("cannot open TIFF " + path.string());
  std::uint32_t w = 0, h = 0;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
  std::vector<std::uint32_t> raster(static_cast<std::size_t>(w) * h);
  if (!TIFFReadRGBAImageOriented(tif.get(), w, h, raster.data(), ORIENTATION_TOPLEFT, 0))
    throw IoError("failed to decode TIFF " + path.string());
  RGBImage out(static_cast<int>(h), static_cast<int>(w), 3);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    out.pixels[3 * i + 0] = static_cast<std::uint8_t>(TIFFGetR(raster[i]));
    out.pixels[3 * i + 1] = static_cast<std::uint8_t>(TIFFGetG(raster[i]));
    out.pixels[3 * i + 2] = static_cast<std::uint8_t>(TIFFGetB(raster[i]));
  }
  return out;
}

void write_tiff(const fs::path& path, const RGBImage& img) {
  const auto tmp = temp_sibling(path);
  {
    std::unique_ptr<TIFF, void (*)(TIFF*)> tif(TIFFOpen(tmp.c_str(), "w"), TIFFClose);
    if (!tif) throw IoError("cannot write " + tmp.string());
    TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width));
    TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height));
    TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, 3);
    TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, 8);
    TIFFSetField(tif.get(), TIFFTAG_ORIENTATION, ORIENTATION_TOPLEFT);
    TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_RGB);
    TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_LZW);
    TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, 16);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
      std::copy_n(&img.pixels[img.index(y, 0)], row.size(), row.begin());
      if (TIFFWriteScanline(tif.get(), row.data(), static_cast<std::uint32_t>(y), 0) < 0)
        throw IoError("failed to encode TIFF " + path.string());
    }
  }
  fs::rename(tmp, path);
}

}  // namespace

bool is_image_path(const fs::path& path) {
  const auto e = lower_ext(path);
  return e == ".png" || e == ".tif" || e == ".tiff";
}

RGBImage read_rgb(const fs::path& path) {
  if (is_tiff(path)) return read_tiff(path);
  auto png = read_png(path);
  if (png.bit_depth != 8) throw IoError("expected an 8-bit image: " + path.string());
  RGBImage out(png.height, png.width, 3);
  const std::size_t n = static_cast<std::size_t>(png.height) * png.width;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src_c = png.channels >= 3 ? c : 0;
      out.pixels[3 * i + c] = static_cast<std::uint8_t>(png.samples[i * png.channels + src_c]);
    }
  }
  return out;
}

void write_rgb(const fs::path& path, const RGBImage& img) {
  if (img.channels != 3) throw ArgumentError("write_rgb expects 3 channels");
  if (is_tiff(path)) return write_tiff(path, img);
  write_png(path, img.height, img.width, 3, 8, img.pixels.data());
}

void write_gray8(const fs::path& path, const Image<std::uint8_t>& img) {
  if (img.channels != 1) throw ArgumentError("write_gray8 expects 1 channel");
  write_png(path, img.height, img.width, 1, 8, img.pixels.data());
}

Image<std::uint8_t> read_gray8(const fs::path& path) {
  auto png = read_png(path);
  if (png.bit_depth != 8) throw IoError("expected an 8-bit image: " + path.string());
  Image<std::uint8_t> out(png.height, png.width, 1);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<std::uint8_t>(png.samples[i * png.channels]);
  return out;
}

InstanceMap read_labels(const fs::path& path) {
  auto png = read_png(path);
  if (png.channels != 1) throw IoError("instance map must be single-channel: " + path.string());
  InstanceMap out(png.height, png.width);
  for (std::size_t i = 0; i < out.labels.size(); ++i) out.labels[i] = png.samples[i];
  return out;
}

void write_labels(const fs::path& path, const InstanceMap& map) {
  std::vector<std::uint16_t> data(map.labels.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto v = map.labels[i];
    if (v < 0 || v > 65535) throw ArgumentError("label out of 16-bit range");
    data[i] = static_cast<std::uint16_t>(v);
  }
  write_png(path, map.height, map.width, 1, 16, data.data());
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace nucleigan::io
