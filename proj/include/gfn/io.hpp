#pragma once

// Image file formats: 8-bit RGB PNG, 8/16-bit grayscale PNG and the raw
// float interchange ("GFNI", u32 height, u32 width, u32 channels, then
// little-endian float32 values, row-major, channels interleaved).

#include <png.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gfn/errors.hpp"
#include "gfn/image.hpp"

namespace gfn::io {

namespace fs = std::filesystem;

inline constexpr std::array<char, 4> kRawMagic{'G', 'F', 'N', 'I'};

struct RawImage {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;
};

// Little-endian helpers shared with the checkpoint format.
template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<unsigned char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <class U>
U get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U v;
  std::memcpy(&v, bytes.data(), sizeof(U));
  return v;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string encode_raw(const RawImage& img) {
  std::string out(kRawMagic.begin(), kRawMagic.end());
  put_le(out, img.height);
  put_le(out, img.width);
  put_le(out, img.channels);
  for (float v : img.data) put_le(out, v);
  return out;
}

inline RawImage decode_raw(const std::string& bytes, const std::string& what = "raw image") {
  constexpr std::size_t header = 16;
  if (bytes.size() < header || !std::equal(kRawMagic.begin(), kRawMagic.end(), bytes.begin()))
    throw FormatError(what + ": not a GFNI file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawImage img;
  img.height = get_le<std::uint32_t>(p + 4);
  img.width = get_le<std::uint32_t>(p + 8);
  img.channels = get_le<std::uint32_t>(p + 12);
  const std::size_t count = static_cast<std::size_t>(img.height) * img.width * img.channels;
  if (img.height == 0 || img.width == 0 || img.channels == 0 || bytes.size() != header + 4 * count)
    throw FormatError(what + ": GFNI header and payload size disagree");
  img.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) img.data[i] = get_le<float>(p + header + 4 * i);
  return img;
}

inline void write_raw(const fs::path& path, const ImageRGB& img) {
  RawImage r{static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width), 3, {}};
  r.data.assign(img.data.begin(), img.data.end());
  write_file(path, encode_raw(r));
}

inline void write_raw(const fs::path& path, const GrayImage& img) {
  RawImage r{static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width), 1, {}};
  r.data.assign(img.data.begin(), img.data.end());
  write_file(path, encode_raw(r));
}

// ---------------------------------------------------------------------------
// PNG through the libpng simplified API.

namespace detail {

struct PngPixels {
  int height = 0;
  int width = 0;
  int channels = 0;
  double max_value = 255.0;
  std::vector<double> data;
};

inline PngPixels read_png(const fs::path& path, bool gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);

  // 16-bit files are read without conversion as 16-bit; 8-bit files as 8-bit.
  const bool wide = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (gray)
    image.format = wide ? PNG_FORMAT_LINEAR_Y : PNG_FORMAT_GRAY;
  else
    image.format = wide ? PNG_FORMAT_LINEAR_RGB : PNG_FORMAT_RGB;

  PngPixels px;
  px.height = static_cast<int>(image.height);
  px.width = static_cast<int>(image.width);
  px.channels = gray ? 1 : 3;
  px.max_value = wide ? 65535.0 : 255.0;
  const std::size_t count = static_cast<std::size_t>(px.height) * px.width * px.channels;
  px.data.resize(count);
  if (wide) {
    std::vector<png_uint_16> buf(count);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
      throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    std::copy(buf.begin(), buf.end(), px.data.begin());
  } else {
    std::vector<png_byte> buf(count);
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr))
      throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    std::copy(buf.begin(), buf.end(), px.data.begin());
  }
  return px;
}

inline void write_png(const fs::path& path, int height, int width, png_uint_32 format,
                      const void* buffer) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer, 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

inline png_byte to_byte(double v) {
  return static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Byte b decodes to b / 255.
inline ImageRGB read_png_rgb(const fs::path& path) {
  const auto px = detail::read_png(path, false);
  ImageRGB img(px.height, px.width);
  for (std::size_t i = 0; i < px.data.size(); ++i) img.data[i] = px.data[i] / px.max_value;
  return img;
}

/// Values normalized to [0,1] by the file's bit depth (255 or 65535).
inline GrayImage read_png_gray(const fs::path& path) {
  const auto px = detail::read_png(path, true);
  GrayImage img(px.height, px.width);
  for (std::size_t i = 0; i < px.data.size(); ++i) img.data[i] = px.data[i] / px.max_value;
  return img;
}

/// x encodes to round(255 x) after clamping to [0,1].
inline void write_png_rgb(const fs::path& path, const ImageRGB& img) {
  std::vector<png_byte> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), detail::to_byte);
  detail::write_png(path, img.height, img.width, PNG_FORMAT_RGB, buf.data());
}

inline void write_png_gray8(const fs::path& path, const GrayImage& img) {
  std::vector<png_byte> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), detail::to_byte);
  detail::write_png(path, img.height, img.width, PNG_FORMAT_GRAY, buf.data());
}

/// Values in [0,1] stored as round(65535 x).
inline void write_png_gray16(const fs::path& path, const GrayImage& img) {
  std::vector<png_uint_16> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), [](double v) {
    return static_cast<png_uint_16>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
  });
  detail::write_png(path, img.height, img.width, PNG_FORMAT_LINEAR_Y, buf.data());
}

inline bool is_raw_path(const fs::path& p) { return p.extension() == ".gfni"; }

/// PNG or GFNI by extension. Raw values are taken as-is (not validated).
inline ImageRGB load_image(const fs::path& path) {
  if (!is_raw_path(path)) return read_png_rgb(path);
  const RawImage r = decode_raw(read_file(path), path.string());
  if (r.channels != 3) throw FormatError(path.string() + ": expected 3 channels");
  ImageRGB img(static_cast<int>(r.height), static_cast<int>(r.width));
  std::copy(r.data.begin(), r.data.end(), img.data.begin());
  return img;
}

inline void save_image(const fs::path& path, const ImageRGB& img) {
  if (is_raw_path(path))
    write_raw(path, img);
  else
    write_png_rgb(path, img);
}

/// Depth from a 16-bit (or 8-bit) grayscale PNG scaled by depth_scale, or a
/// single-channel GFNI file taken verbatim.
inline GrayImage load_depth(const fs::path& path, double depth_scale) {
  if (is_raw_path(path)) {
    const RawImage r = decode_raw(read_file(path), path.string());
    if (r.channels != 1) throw FormatError(path.string() + ": expected 1 channel");
    GrayImage d(static_cast<int>(r.height), static_cast<int>(r.width));
    std::copy(r.data.begin(), r.data.end(), d.data.begin());
    return d;
  }
  GrayImage d = read_png_gray(path);
  for (double& v : d.data) v *= depth_scale;
  return d;
}

inline void save_depth(const fs::path& path, const GrayImage& depth, double depth_scale) {
  if (is_raw_path(path)) {
    write_raw(path, depth);
    return;
  }
  GrayImage n = depth;
  for (double& v : n.data) v /= depth_scale;
  write_png_gray16(path, n);
}

}  // namespace gfn::io
