#pragma once

// Differentiable operators over pmpd::Tensor. 4-D data is laid out
// (batch, channel, height, width), row-major.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op,
                         const char* arg) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must be rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline std::vector<double>* grad_of(Node& node, std::size_t parent) {
  return node.parents[parent]->grad_buffer();
}

// Zero-padded bilinear read of one HxW plane at fractional (x, y).
inline double bilinear_read(const double* plane, std::ptrdiff_t height,
                            std::ptrdiff_t width, double x, double y) {
  const double xf = std::floor(x);
  const double yf = std::floor(y);
  const auto x0 = static_cast<std::ptrdiff_t>(xf);
  const auto y0 = static_cast<std::ptrdiff_t>(yf);
  const double ax = x - xf;
  const double ay = y - yf;
  auto read = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    if (yy < 0 || yy >= height || xx < 0 || xx >= width) return 0.0;
    return plane[yy * width + xx];
  };
  // Integer positions read the pixel itself so zero displacement is exact.
  if (ax == 0.0 && ay == 0.0) return read(y0, x0);
  return (1.0 - ay) * ((1.0 - ax) * read(y0, x0) + ax * read(y0, x0 + 1)) +
         ay * ((1.0 - ax) * read(y0 + 1, x0) + ax * read(y0 + 1, x0 + 1));
}

// Backward of bilinear_read: scatters g into dplane (if non-null) and returns
// d/dx, d/dy of the sampled value.
struct BilinearGrad {
  double dx = 0.0;
  double dy = 0.0;
};

inline BilinearGrad bilinear_backward(const double* plane, double* dplane,
                                      std::ptrdiff_t height,
                                      std::ptrdiff_t width, double x, double y,
                                      double g) {
  const double xf = std::floor(x);
  const double yf = std::floor(y);
  const auto x0 = static_cast<std::ptrdiff_t>(xf);
  const auto y0 = static_cast<std::ptrdiff_t>(yf);
  const double ax = x - xf;
  const double ay = y - yf;
  auto inside = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    return yy >= 0 && yy < height && xx >= 0 && xx < width;
  };
  auto read = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) {
    return inside(yy, xx) ? plane[yy * width + xx] : 0.0;
  };
  const double v00 = read(y0, x0);
  const double v01 = read(y0, x0 + 1);
  const double v10 = read(y0 + 1, x0);
  const double v11 = read(y0 + 1, x0 + 1);
  if (dplane) {
    auto put = [&](std::ptrdiff_t yy, std::ptrdiff_t xx, double w) {
      if (inside(yy, xx)) dplane[yy * width + xx] += g * w;
    };
    put(y0, x0, (1.0 - ay) * (1.0 - ax));
    put(y0, x0 + 1, (1.0 - ay) * ax);
    put(y0 + 1, x0, ay * (1.0 - ax));
    put(y0 + 1, x0 + 1, ay * ax);
  }
  BilinearGrad out;
  out.dx = g * ((1.0 - ay) * (v01 - v00) + ay * (v11 - v10));
  out.dy = g * ((1.0 - ax) * (v10 - v00) + ax * (v11 - v01));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural operators

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, "add",
                             [](detail::Node& n) {
                               for (std::size_t p = 0; p < 2; ++p) {
                                 if (auto* g = detail::grad_of(n, p)) {
                                   for (std::size_t i = 0; i < g->size(); ++i)
                                     (*g)[i] += n.grad[i];
                                 }
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, "sub",
                             [](detail::Node& n) {
                               if (auto* g = detail::grad_of(n, 0)) {
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                   (*g)[i] += n.grad[i];
                               }
                               if (auto* g = detail::grad_of(n, 1)) {
                                 for (std::size_t i = 0; i < g->size(); ++i)
                                   (*g)[i] -= n.grad[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result(
      a.shape(), std::move(out), {&a, &b}, "mul", [](detail::Node& n) {
        const auto& av = n.parents[0]->values;
        const auto& bv = n.parents[1]->values;
        if (auto* g = detail::grad_of(n, 0)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        }
        if (auto* g = detail::grad_of(n, 1)) {
          for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
        }
      });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return detail::make_result(a.shape(), std::move(out), {&a}, "scale",
                             [s](detail::Node& n) {
                               auto* g = detail::grad_of(n, 0);
                               for (std::size_t i = 0; i < g->size(); ++i)
                                 (*g)[i] += n.grad[i] * s;
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  // NaN passes through so downstream finiteness checks still see it.
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 || std::isnan(av[i]) ? av[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), {&a}, "relu",
                             [](detail::Node& n) {
                               auto* g = detail::grad_of(n, 0);
                               const auto& x = n.parents[0]->values;
                               for (std::size_t i = 0; i < g->size(); ++i)
                                 if (x[i] > 0.0) (*g)[i] += n.grad[i];
                             });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " +
                         shape_str(shape) + " changes element count");
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return detail::make_result(std::move(shape), std::move(out), {&a}, "reshape",
                             [](detail::Node& n) {
                               auto* g = detail::grad_of(n, 0);
                               for (std::size_t i = 0; i < g->size(); ++i)
                                 (*g)[i] += n.grad[i];
                             });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result(Shape{1}, {s}, {&a}, "sum", [](detail::Node& n) {
    auto* g = detail::grad_of(n, 0);
    for (double& v : *g) v += n.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DegenerateInputError("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return detail::make_result(Shape{1}, {s * inv}, {&a}, "mean",
                             [inv](detail::Node& n) {
                               auto* g = detail::grad_of(n, 0);
                               for (double& v : *g) v += n.grad[0] * inv;
                             });
}

// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.dim(d) != first[d]) {
        throw DimensionError("concat: extent mismatch " + shape_str(first) +
                             " vs " + shape_str(t.shape()));
      }
    }
    shape[axis] += t.dim(axis);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> widths;
  const std::size_t out_row = shape[axis] * inner;
  std::size_t col = 0;
  for (const Tensor& t : parts) {
    const std::size_t w = t.dim(axis) * inner;
    widths.push_back(w);
    auto v = t.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * w, w, out.begin() + o * out_row + col);
    }
    col += w;
  }
  return detail::make_result(
      std::move(shape), std::move(out), parts, "concat",
      [widths, outer, out_row](detail::Node& n) {
        std::size_t col = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          const std::size_t w = widths[p];
          if (auto* g = detail::grad_of(n, p)) {
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t k = 0; k < w; ++k) {
                (*g)[o * w + k] += n.grad[o * out_row + col + k];
              }
            }
          }
          col += w;
        }
      });
}

// Each spatial value becomes a factor x factor block.
inline Tensor upsample_nearest(const Tensor& a, std::size_t factor) {
  detail::require_rank(a, 4, "upsample_nearest", "input");
  if (factor == 0) throw ConfigError("upsample_nearest: factor must be positive");
  const std::size_t planes = a.dim(0) * a.dim(1);
  const std::size_t h = a.dim(2), w = a.dim(3);
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(planes * oh * ow);
  auto av = a.values();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        out[(p * oh + y) * ow + x] = av[(p * h + y / factor) * w + x / factor];
      }
    }
  }
  return detail::make_result(
      Shape{a.dim(0), a.dim(1), oh, ow}, std::move(out), {&a}, "upsample_nearest",
      [planes, h, w, oh, ow, factor](detail::Node& n) {
        auto* g = detail::grad_of(n, 0);
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
              (*g)[(p * h + y / factor) * w + x / factor] +=
                  n.grad[(p * oh + y) * ow + x];
      });
}

// Mean of |pred - target| over positions where mask is nonzero.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target,
                      std::span<const std::uint8_t> mask) {
  detail::require_same_shape(pred, target, "l1_loss");
  if (mask.size() != pred.numel()) {
    throw DimensionError("l1_loss: mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(pred.numel()) +
                         " values");
  }
  std::size_t count = 0;
  double s = 0.0;
  auto pv = pred.values();
  auto tv = target.values();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      s += std::abs(pv[i] - tv[i]);
      ++count;
    }
  }
  if (count == 0) throw DegenerateInputError("l1_loss: mask selects no pixels");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::uint8_t> keep(mask.begin(), mask.end());
  return detail::make_result(
      Shape{1}, {s * inv}, {&pred, &target}, "l1_loss",
      [keep = std::move(keep), inv](detail::Node& n) {
        const auto& pv = n.parents[0]->values;
        const auto& tv = n.parents[1]->values;
        auto* gp = detail::grad_of(n, 0);
        auto* gt = detail::grad_of(n, 1);
        const double g = n.grad[0] * inv;
        for (std::size_t i = 0; i < keep.size(); ++i) {
          if (!keep[i]) continue;
          const double d = pv[i] - tv[i];
          const double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
          if (gp) (*gp)[i] += sg;
          if (gt) (*gt)[i] -= sg;
        }
      });
}

inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  std::vector<std::uint8_t> all(pred.numel(), 1);
  return l1_loss(pred, target, all);
}

// Softmax along `axis`, max-subtracted.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t len = a.dim(axis);
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, av[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(av[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  std::vector<double> probs = out;
  return detail::make_result(
      a.shape(), std::move(out), {&a}, "softmax",
      [probs = std::move(probs), outer, inner, len](detail::Node& n) {
        auto* g = detail::grad_of(n, 0);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double dot = 0.0;
            for (std::size_t k = 0; k < len; ++k)
              dot += n.grad[base + k * inner] * probs[base + k * inner];
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t idx = base + k * inner;
              (*g)[idx] += probs[idx] * (n.grad[idx] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
};

// cols[(c*kh + ky)*kw + kx][oy*out_w + ox] = zero-padded input tap.
inline void im2col(const double* plane0, const ConvGeometry& g, double* cols) {
  const std::size_t npix = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* plane = plane0 + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((c * g.kh + ky) * g.kw + kx) * npix;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            const bool in = iy >= 0 && ix >= 0 &&
                            iy < static_cast<std::ptrdiff_t>(g.height) &&
                            ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.out_w + ox] = in ? plane[iy * g.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im(const double* cols, const ConvGeometry& g, double* plane0) {
  const std::size_t npix = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* plane = plane0 + c * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * npix;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            plane[iy * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

// out[o][p] = bias[o] + sum_r weight[o][r] * cols[r][p]
inline void gemm_forward(const double* weight, const double* bias,
                         const double* cols, std::size_t out_ch,
                         std::size_t rows, std::size_t npix, double* out) {
  for (std::size_t o = 0; o < out_ch; ++o) {
    double* dst = out + o * npix;
    const double b = bias ? bias[o] : 0.0;
    for (std::size_t p = 0; p < npix; ++p) dst[p] = b;
    const double* wrow = weight + o * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const double w = wrow[r];
      const double* src = cols + r * npix;
      for (std::size_t p = 0; p < npix; ++p) dst[p] += w * src[p];
    }
  }
}

// Accumulates dweight, dbias and writes dcols (overwritten) for one image.
inline void gemm_backward(const double* weight, const double* cols,
                          const double* gout, std::size_t out_ch,
                          std::size_t rows, std::size_t npix, double* dweight,
                          double* dbias, double* dcols) {
  for (std::size_t o = 0; o < out_ch; ++o) {
    const double* go = gout + o * npix;
    if (dbias) {
      double s = 0.0;
      for (std::size_t p = 0; p < npix; ++p) s += go[p];
      dbias[o] += s;
    }
    if (dweight) {
      double* dw = dweight + o * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = cols + r * npix;
        double s = 0.0;
        for (std::size_t p = 0; p < npix; ++p) s += go[p] * src[p];
        dw[r] += s;
      }
    }
  }
  if (dcols) {
    std::fill(dcols, dcols + rows * npix, 0.0);
    for (std::size_t o = 0; o < out_ch; ++o) {
      const double* go = gout + o * npix;
      const double* wrow = weight + o * rows;
      for (std::size_t r = 0; r < rows; ++r) {
        const double w = wrow[r];
        double* dst = dcols + r * npix;
        for (std::size_t p = 0; p < npix; ++p) dst[p] += w * go[p];
      }
    }
  }
}

}  // namespace detail

// Cross-correlation. weight is [Cout, Cin, kh, kw] with odd kernel extents.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(weight, 4, "conv2d", "weight");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) +
                         " channels, weight expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.numel() != weight.dim(0)) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.numel()) +
                         " != output channels " + std::to_string(weight.dim(0)));
  }
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0) {
    throw DimensionError("conv2d: kernel extents must be odd, got " +
                         shape_str(weight.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (input.dim(2) + 2 * padding < weight.dim(2) ||
      input.dim(3) + 2 * padding < weight.dim(3)) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }

  detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3),
                         weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  const std::size_t batch = input.dim(0);
  const std::size_t out_ch = weight.dim(0);
  const std::size_t rows = g.channels * g.kh * g.kw;
  const std::size_t npix = g.out_h * g.out_w;

  std::vector<double> cols(batch * rows * npix);
  std::vector<double> out(batch * out_ch * npix);
  const double* in = input.values().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* c = cols.data() + b * rows * npix;
    detail::im2col(in + b * g.channels * g.height * g.width, g, c);
    detail::gemm_forward(weight.values().data(), bias.values().data(), c,
                         out_ch, rows, npix, out.data() + b * out_ch * npix);
  }
  return detail::make_result(
      Shape{batch, out_ch, g.out_h, g.out_w}, std::move(out),
      {&input, &weight, &bias}, "conv2d",
      [cols = std::move(cols), g, batch, out_ch, rows, npix](detail::Node& n) {
        auto* gin = detail::grad_of(n, 0);
        auto* gw = detail::grad_of(n, 1);
        auto* gb = detail::grad_of(n, 2);
        const double* w = n.parents[1]->values.data();
        std::vector<double> dcols(gin ? rows * npix : 0);
        for (std::size_t b = 0; b < batch; ++b) {
          detail::gemm_backward(w, cols.data() + b * rows * npix,
                                n.grad.data() + b * out_ch * npix, out_ch, rows,
                                npix, gw ? gw->data() : nullptr,
                                gb ? gb->data() : nullptr,
                                gin ? dcols.data() : nullptr);
          if (gin) {
            detail::col2im(dcols.data(), g,
                           gin->data() + b * g.channels * g.height * g.width);
          }
        }
      });
}

// Samples input at (j + dx, i + dy) per output pixel, zero outside the image.
// coords channel 0 holds dx, channel 1 holds dy, both in pixels.
inline Tensor bilinear_sample(const Tensor& input, const Tensor& coords) {
  detail::require_rank(input, 4, "bilinear_sample", "input");
  detail::require_rank(coords, 4, "bilinear_sample", "coords");
  if (coords.dim(0) != input.dim(0) || coords.dim(1) != 2 ||
      coords.dim(2) != input.dim(2) || coords.dim(3) != input.dim(3)) {
    throw DimensionError("bilinear_sample: coords " + shape_str(coords.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
  }
  const std::size_t batch = input.dim(0), ch = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t plane = h * w;
  std::vector<double> out(input.numel());
  auto iv = input.values();
  auto cv = coords.values();
  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dx = cv.data() + (b * 2) * plane;
    const double* dy = dx + plane;
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = iv.data() + (b * ch + c) * plane;
      double* dst = out.data() + (b * ch + c) * plane;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t p = i * w + j;
          dst[p] = detail::bilinear_read(src, sh, sw,
                                         static_cast<double>(j) + dx[p],
                                         static_cast<double>(i) + dy[p]);
        }
      }
    }
  }
  return detail::make_result(
      input.shape(), std::move(out), {&input, &coords}, "bilinear_sample",
      [batch, ch, h, w, plane](detail::Node& n) {
        const auto& iv = n.parents[0]->values;
        const auto& cv = n.parents[1]->values;
        auto* gin = detail::grad_of(n, 0);
        auto* gco = detail::grad_of(n, 1);
        const auto sh = static_cast<std::ptrdiff_t>(h);
        const auto sw = static_cast<std::ptrdiff_t>(w);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* dx = cv.data() + (b * 2) * plane;
          const double* dy = dx + plane;
          for (std::size_t c = 0; c < ch; ++c) {
            const double* src = iv.data() + (b * ch + c) * plane;
            double* dsrc = gin ? gin->data() + (b * ch + c) * plane : nullptr;
            const double* go = n.grad.data() + (b * ch + c) * plane;
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t p = i * w + j;
                const auto d = detail::bilinear_backward(
                    src, dsrc, sh, sw, static_cast<double>(j) + dx[p],
                    static_cast<double>(i) + dy[p], go[p]);
                if (gco) {
                  (*gco)[(b * 2) * plane + p] += d.dx;
                  (*gco)[(b * 2 + 1) * plane + p] += d.dy;
                }
              }
            }
          }
        }
      });
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace pmpd
