#pragma once

// 3x3 deformable convolution (stride 1, padding 1). The eight non-center taps
// carry a learned fractional (dx, dy); the center tap is fixed.

#include <array>
#include <cmath>
#include <vector>

#include "pmpd/ops.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

inline constexpr std::size_t kNeighborTaps = 8;
inline constexpr std::size_t kOffsetChannels = 2 * kNeighborTaps;

// Canonical (row, col) displacement of neighbor k, row-major over the 3x3
// window with the center skipped.
inline constexpr std::array<std::array<int, 2>, kNeighborTaps> kNeighborGrid{{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
}};

// Per-pixel offsets of the eight neighbor taps, shape [B, 8, 2, H, W];
// index 0 along axis 2 is dx, index 1 is dy.
struct OffsetField {
  Tensor offsets;

  std::size_t batch() const { return offsets.dim(0); }
  std::size_t height() const { return offsets.dim(3); }
  std::size_t width() const { return offsets.dim(4); }

  static OffsetField from_channels(const Tensor& channels) {
    detail::require_rank(channels, 4, "OffsetField", "offsets");
    if (channels.dim(1) != kOffsetChannels) {
      throw DimensionError("OffsetField: expected 16 offset channels, got " +
                           std::to_string(channels.dim(1)));
    }
    return OffsetField{reshape(channels, Shape{channels.dim(0), kNeighborTaps, 2,
                                               channels.dim(2), channels.dim(3)})};
  }

  void validate() const {
    if (offsets.rank() != 5 || offsets.dim(1) != kNeighborTaps ||
        offsets.dim(2) != 2) {
      throw DimensionError("OffsetField: shape must be [B,8,2,H,W], got " +
                           shape_str(offsets.shape()));
    }
    if (!all_finite(offsets)) throw NumericFault("OffsetField: non-finite offset");
  }
};

struct DeformConvResult {
  Tensor output;
  OffsetField offsets;
};

namespace detail {

// Precomputed bilinear footprint of one sample position.
struct Footprint {
  std::array<std::ptrdiff_t, 4> index;  // -1 when outside the plane
  double ax, ay;
};

inline Footprint make_footprint(std::ptrdiff_t height, std::ptrdiff_t width,
                                double x, double y) {
  const double xf = std::floor(x);
  const double yf = std::floor(y);
  const auto x0 = static_cast<std::ptrdiff_t>(xf);
  const auto y0 = static_cast<std::ptrdiff_t>(yf);
  auto idx = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> std::ptrdiff_t {
    if (yy < 0 || yy >= height || xx < 0 || xx >= width) return -1;
    return yy * width + xx;
  };
  return Footprint{{idx(y0, x0), idx(y0, x0 + 1), idx(y0 + 1, x0), idx(y0 + 1, x0 + 1)},
                   x - xf, y - yf};
}

inline double footprint_read(const Footprint& f, const double* plane) {
  auto v = [&](int k) { return f.index[k] < 0 ? 0.0 : plane[f.index[k]]; };
  if (f.ax == 0.0 && f.ay == 0.0) return v(0);
  return (1.0 - f.ay) * ((1.0 - f.ax) * v(0) + f.ax * v(1)) +
         f.ay * ((1.0 - f.ax) * v(2) + f.ax * v(3));
}

// Scatters g into dplane and returns (d/dx, d/dy) of the read.
inline BilinearGrad footprint_backward(const Footprint& f, const double* plane,
                                       double* dplane, double g) {
  auto v = [&](int k) { return f.index[k] < 0 ? 0.0 : plane[f.index[k]]; };
  const double w[4] = {(1.0 - f.ay) * (1.0 - f.ax), (1.0 - f.ay) * f.ax,
                       f.ay * (1.0 - f.ax), f.ay * f.ax};
  if (dplane) {
    for (int k = 0; k < 4; ++k)
      if (f.index[k] >= 0) dplane[f.index[k]] += g * w[k];
  }
  return BilinearGrad{g * ((1.0 - f.ay) * (v(1) - v(0)) + f.ay * (v(3) - v(2))),
                      g * ((1.0 - f.ax) * (v(2) - v(0)) + f.ax * (v(3) - v(1)))};
}

// Footprints for all 9 taps of all pixels of one image: [tap][pixel].
inline std::vector<Footprint> deform_footprints(const double* off,
                                                std::size_t h, std::size_t w) {
  const std::size_t npix = h * w;
  std::vector<Footprint> fp(9 * npix);
  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t t = 0; t < 9; ++t) {
    const int ky = static_cast<int>(t / 3) - 1;
    const int kx = static_cast<int>(t % 3) - 1;
    const std::ptrdiff_t k = t < 4 ? static_cast<std::ptrdiff_t>(t)
                                   : (t == 4 ? -1 : static_cast<std::ptrdiff_t>(t) - 1);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        double x = static_cast<double>(j) + kx;
        double y = static_cast<double>(i) + ky;
        if (k >= 0) {
          x += off[(2 * k) * npix + p];
          y += off[(2 * k + 1) * npix + p];
        }
        fp[t * npix + p] = make_footprint(sh, sw, x, y);
      }
    }
  }
  return fp;
}

}  // namespace detail

// weight: [Cout, C, 3, 3]; offsets: [B, 16, H, W] holding (dx, dy) pairs for
// the eight neighbor taps in row-major order. Output keeps the input's
// spatial size. The returned OffsetField views the same offsets as
// [B, 8, 2, H, W] and stays linked to the graph.
inline DeformConvResult deformable_conv2d(const Tensor& input,
                                          const Tensor& weight,
                                          const Tensor& bias,
                                          const Tensor& offsets) {
  detail::require_rank(input, 4, "deformable_conv2d", "input");
  detail::require_rank(weight, 4, "deformable_conv2d", "weight");
  detail::require_rank(offsets, 4, "deformable_conv2d", "offsets");
  if (offsets.dim(1) != kOffsetChannels) {
    throw DimensionError("deformable_conv2d: offsets need 16 channels, got " +
                         std::to_string(offsets.dim(1)));
  }
  if (offsets.dim(0) != input.dim(0) || offsets.dim(2) != input.dim(2) ||
      offsets.dim(3) != input.dim(3)) {
    throw DimensionError("deformable_conv2d: offsets " +
                         shape_str(offsets.shape()) + " do not match input " +
                         shape_str(input.shape()));
  }
  if (weight.dim(1) != input.dim(1) || weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw DimensionError("deformable_conv2d: weight " + shape_str(weight.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
  }
  if (bias.numel() != weight.dim(0)) {
    throw DimensionError("deformable_conv2d: bias length mismatch");
  }

  const std::size_t batch = input.dim(0), ch = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t npix = h * w;
  const std::size_t out_ch = weight.dim(0);
  const std::size_t rows = ch * 9;

  std::vector<double> cols(batch * rows * npix);
  std::vector<double> out(batch * out_ch * npix);
  const double* in = input.values().data();
  const double* off = offsets.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const auto fp = detail::deform_footprints(off + b * kOffsetChannels * npix, h, w);
    double* c = cols.data() + b * rows * npix;
    for (std::size_t cc = 0; cc < ch; ++cc) {
      const double* plane = in + (b * ch + cc) * npix;
      for (std::size_t t = 0; t < 9; ++t) {
        double* row = c + (cc * 9 + t) * npix;
        for (std::size_t p = 0; p < npix; ++p) {
          row[p] = detail::footprint_read(fp[t * npix + p], plane);
        }
      }
    }
    detail::gemm_forward(weight.values().data(), bias.values().data(), c, out_ch,
                         rows, npix, out.data() + b * out_ch * npix);
  }

  Tensor output = detail::make_result(
      Shape{batch, out_ch, h, w}, std::move(out), {&input, &weight, &bias, &offsets},
      "deformable_conv2d",
      [cols = std::move(cols), batch, ch, h, w, npix, out_ch, rows](detail::Node& n) {
        const double* in = n.parents[0]->values.data();
        const double* wt = n.parents[1]->values.data();
        const double* off = n.parents[3]->values.data();
        auto* gin = detail::grad_of(n, 0);
        auto* gw = detail::grad_of(n, 1);
        auto* gb = detail::grad_of(n, 2);
        auto* goff = detail::grad_of(n, 3);
        const bool need_cols = gin || goff;
        std::vector<double> dcols(need_cols ? rows * npix : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::gemm_backward(wt, cols.data() + b * rows * npix,
                                n.grad.data() + b * out_ch * npix, out_ch, rows,
                                npix, gw ? gw->data() : nullptr,
                                gb ? gb->data() : nullptr,
                                need_cols ? dcols.data() : nullptr);
          if (!need_cols) continue;
          const auto fp =
              detail::deform_footprints(off + b * kOffsetChannels * npix, h, w);
          double* doff = goff ? goff->data() + b * kOffsetChannels * npix : nullptr;
          for (std::size_t cc = 0; cc < ch; ++cc) {
            const double* plane = in + (b * ch + cc) * npix;
            double* dplane = gin ? gin->data() + (b * ch + cc) * npix : nullptr;
            for (std::size_t t = 0; t < 9; ++t) {
              const double* drow = dcols.data() + (cc * 9 + t) * npix;
              const std::ptrdiff_t k =
                  t < 4 ? static_cast<std::ptrdiff_t>(t)
                        : (t == 4 ? -1 : static_cast<std::ptrdiff_t>(t) - 1);
              for (std::size_t p = 0; p < npix; ++p) {
                const auto d = detail::footprint_backward(fp[t * npix + p], plane,
                                                          dplane, drow[p]);
                if (doff && k >= 0) {
                  doff[(2 * k) * npix + p] += d.dx;
                  doff[(2 * k + 1) * npix + p] += d.dy;
                }
              }
            }
          }
        }
      });
  return DeformConvResult{std::move(output), OffsetField::from_channels(offsets)};
}

}  // namespace pmpd
