#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "remn/tensor.hpp"

namespace remn {

/// 8-bit raster, interleaved channels (1 = gray, 3 = RGB), row-major.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Binary PGM (P5) or PPM (P6). maxval below 255 is rescaled to 0..255.
/// Throws DataError mentioning `origin`.
Image8 decode_pnm(const std::string& bytes, const std::string& origin);
Image8 read_pnm(const std::filesystem::path& path);

/// P5 for one channel, P6 for three.
std::string encode_pnm(const Image8& image);

/// Writes via a temporary sibling and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// Bilinear resampling of a [C,H,W] tensor, half-pixel centers: output
/// pixel i samples source coordinate (i + 0.5) * in / out - 0.5, clamped
/// to the valid range.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Maps [0,1] intensities to (x - mean) / stddev.
struct Normalization {
  double mean = 0.5;
  double stddev = 0.5;

  float apply(std::uint8_t pixel) const { return static_cast<float>((pixel / 255.0 - mean) / stddev); }
  /// Back to a [0,1] intensity.
  double invert(float value) const { return value * stddev + mean; }
};

struct ImageOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  Normalization normalization;
};

/// Decoded raster -> normalized [3,H,W] tensor at the configured size;
/// grayscale is replicated into all three channels.
Tensor image_to_tensor(const Image8& image, const ImageOptions& options);

}  // namespace remn
