#pragma once

// Binary netpbm I/O: P6 (8-bit RGB) for images, P5 (16-bit) for depth.
// Depth is stored as round(depth / max_depth * 65535); 0 marks invalid.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

using Bytes = std::vector<std::uint8_t>;

// Depth map with validity mask, row-major.
struct DepthMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> depth;
  std::vector<std::uint8_t> mask;  // empty means every pixel is valid

  bool valid(std::size_t i) const { return mask.empty() || mask[i] != 0; }
};

namespace detail {

struct NetpbmHeader {
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

inline NetpbmHeader parse_netpbm_header(std::span<const std::uint8_t> bytes,
                                        const char* magic) {
  std::size_t pos = 0;
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw ParseError(std::string("expected magic '") + magic + "'", 0);
  }
  pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1u << 30) throw ParseError(std::string(what) + " too large", start);
      ++pos;
    }
    if (pos == start) throw ParseError(std::string("expected ") + what, start);
    return v;
  };
  NetpbmHeader h;
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw ParseError("expected whitespace after magic", pos);
  }
  h.width = read_uint("width");
  h.height = read_uint("height");
  h.maxval = read_uint("maxval");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw ParseError("expected single whitespace before raster", pos);
  }
  ++pos;
  if (h.width == 0 || h.height == 0) throw ParseError("zero image extent", pos);
  h.data_offset = pos;
  return h;
}

inline std::string netpbm_prefix(const char* magic, std::size_t w, std::size_t h,
                                 std::size_t maxval) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) +
         "\n" + std::to_string(maxval) + "\n";
}

}  // namespace detail

// image: [1,3,H,W] with values in [0,1] (clamped on write).
inline Bytes write_ppm(const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw DimensionError("write_ppm: image must be [1,3,H,W], got " +
                         shape_str(image.shape()));
  }
  const std::size_t h = image.dim(2), w = image.dim(3), npix = h * w;
  const std::string head = detail::netpbm_prefix("P6", w, h, 255);
  Bytes out(head.begin(), head.end());
  out.reserve(out.size() + 3 * npix);
  auto v = image.values();
  for (std::size_t p = 0; p < npix; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double x = std::clamp(v[c * npix + p], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(x * 255.0)));
    }
  }
  return out;
}

inline Tensor read_ppm(std::span<const std::uint8_t> bytes) {
  const auto h = detail::parse_netpbm_header(bytes, "P6");
  if (h.maxval != 255) throw ParseError("P6 maxval must be 255", h.data_offset);
  const std::size_t npix = h.width * h.height;
  if (bytes.size() - h.data_offset < 3 * npix) {
    throw ParseError("truncated P6 raster", bytes.size());
  }
  std::vector<double> v(3 * npix);
  for (std::size_t p = 0; p < npix; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      v[c * npix + p] = bytes[h.data_offset + 3 * p + c] / 255.0;
    }
  }
  return Tensor::from(Shape{1, 3, h.height, h.width}, std::move(v));
}

inline Bytes write_depth_pgm(const DepthMap& map, double max_depth) {
  if (!(max_depth > 0.0)) throw ConfigError("write_depth_pgm: max_depth must be > 0");
  const std::size_t npix = map.height * map.width;
  if (map.depth.size() != npix || (!map.mask.empty() && map.mask.size() != npix)) {
    throw DimensionError("write_depth_pgm: buffer sizes do not match extent");
  }
  const std::string head = detail::netpbm_prefix("P5", map.width, map.height, 65535);
  Bytes out(head.begin(), head.end());
  out.reserve(out.size() + 2 * npix);
  for (std::size_t p = 0; p < npix; ++p) {
    std::uint16_t q = 0;
    if (map.valid(p)) {
      const double d = map.depth[p];
      if (!std::isfinite(d) || d < 0.0 || d > max_depth) {
        throw RangeError("write_depth_pgm: depth " + std::to_string(d) +
                         " outside [0, " + std::to_string(max_depth) + "]");
      }
      const long r = std::lround(d / max_depth * 65535.0);
      // 0 is reserved for invalid pixels.
      q = static_cast<std::uint16_t>(std::clamp<long>(r, 1, 65535));
    }
    out.push_back(static_cast<std::uint8_t>(q >> 8));
    out.push_back(static_cast<std::uint8_t>(q & 0xFF));
  }
  return out;
}

inline DepthMap read_depth_pgm(std::span<const std::uint8_t> bytes, double max_depth) {
  const auto h = detail::parse_netpbm_header(bytes, "P5");
  if (h.maxval != 65535) throw ParseError("P5 depth maxval must be 65535", h.data_offset);
  const std::size_t npix = h.width * h.height;
  if (bytes.size() - h.data_offset < 2 * npix) {
    throw ParseError("truncated P5 raster", bytes.size());
  }
  DepthMap map;
  map.height = h.height;
  map.width = h.width;
  map.depth.resize(npix);
  map.mask.resize(npix);
  for (std::size_t p = 0; p < npix; ++p) {
    const std::uint16_t q = static_cast<std::uint16_t>(
        (bytes[h.data_offset + 2 * p] << 8) | bytes[h.data_offset + 2 * p + 1]);
    map.depth[p] = q / 65535.0 * max_depth;
    map.mask[p] = q != 0;
  }
  return map;
}

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace pmpd
