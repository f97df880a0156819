#include "remn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include "remn/errors.hpp"

namespace remn {
namespace {

class HeaderReader {
 public:
  HeaderReader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  // Skips whitespace and '#' comments, then reads an unsigned decimal.
  std::size_t number(const char* what) {
    skip_space();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (value > 1'000'000) fail(std::string(what) + " is too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) fail(std::string("expected ") + what);
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing whitespace after maxval");
    }
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw DataError(origin_ + ": invalid PNM: " + msg); }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 2;
};

}  // namespace

Image8 decode_pnm(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw DataError(origin + ": not a binary PGM/PPM file (expected P5 or P6 magic)");
  }
  HeaderReader header(bytes, origin);
  Image8 img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  img.width = header.number("width");
  img.height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (img.width == 0 || img.height == 0) header.fail("zero image dimension");
  if (maxval == 0 || maxval > 255) header.fail("maxval " + std::to_string(maxval) + " is not 8-bit");
  const std::size_t start = header.raster_start();
  const std::size_t needed = img.width * img.height * img.channels;
  if (bytes.size() - start < needed) {
    header.fail("raster truncated: " + std::to_string(bytes.size() - start) + " of " + std::to_string(needed) +
                " bytes");
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                    bytes.begin() + static_cast<std::ptrdiff_t>(start + needed));
  if (maxval != 255) {
    for (auto& p : img.pixels) {
      if (p > maxval) header.fail("sample exceeds maxval");
      p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
    }
  }
  return img;
}

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes, path.string());
}

std::string encode_pnm(const Image8& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("encode_pnm: channels must be 1 or 3, got " + std::to_string(image.channels));
  }
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw std::invalid_argument("encode_pnm: pixel buffer does not match dimensions");
  }
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.append(image.pixels.begin(), image.pixels.end());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: expected [C,H,W], got " + shape_str(image.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: target size must be positive");
  const std::size_t channels = image.dim(0), in_h = image.dim(1), in_w = image.dim(2);
  if (in_h == out_h && in_w == out_w) return image;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
      const std::size_t lo = std::min(static_cast<std::size_t>(src), in - 1);
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ys = taps(in_h, out_h), xs = taps(in_w, out_w);

  Tensor out({channels, out_h, out_w});
  for (std::size_t c = 0; c < channels; ++c) {
    const float* plane = image.data().data() + c * in_h * in_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const float* r0 = plane + ys[i].lo * in_w;
      const float* r1 = plane + ys[i].hi * in_w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& x = xs[j];
        const double top = r0[x.lo] + (r0[x.hi] - static_cast<double>(r0[x.lo])) * x.frac;
        const double bottom = r1[x.lo] + (r1[x.hi] - static_cast<double>(r1[x.lo])) * x.frac;
        out[(c * out_h + i) * out_w + j] = static_cast<float>(top + (bottom - top) * ys[i].frac);
      }
    }
  }
  return out;
}

Tensor image_to_tensor(const Image8& image, const ImageOptions& options) {
  if (image.channels != 1 && image.channels != 3) {
    throw DataError("image has " + std::to_string(image.channels) + " channels; expected 1 or 3");
  }
  Tensor raw({image.channels, image.height, image.width});
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) {
        raw[(c * image.height + y) * image.width + x] = image.at(y, x, c) / 255.0f;
      }
  Tensor sized = resize_bilinear(raw, options.height, options.width);

  const std::size_t plane = options.height * options.width;
  Tensor out({3, options.height, options.width});
  const auto& norm = options.normalization;
  for (std::size_t c = 0; c < 3; ++c) {
    const float* src = sized.data().data() + (image.channels == 1 ? 0 : c) * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<float>((src[i] - norm.mean) / norm.stddev);
    }
  }
  return out;
}

}  // namespace remn
