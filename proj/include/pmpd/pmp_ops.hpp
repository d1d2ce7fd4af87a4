#pragma once

// Depth-regression building blocks: correlation cost volume, soft-argmax
// initial depth, offset-aware final depth, and the triangular constraint on
// the three predicted pixel-movement fields.

#include <cmath>
#include <string>
#include <vector>

#include "pmpd/deform.hpp"
#include "pmpd/ops.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

// Matching scores C(d, i, j) for D hypotheses, shape [B, D, H, W].
struct CostVolume {
  Tensor data;
  std::size_t feature_channels = 0;

  std::size_t hypotheses() const { return data.dim(1); }
};

// Per-pixel 2-D displacement, shape [B, 2, H, W].
struct PixelMovement {
  Tensor flow;
};

enum class NeighborMode {
  averaged,     // neighbor term divided by 8
  literal_sum,  // neighbor term summed as written, no normalization
};

struct RegressionConfig {
  double alpha = 0.5;
  NeighborMode neighbor_mode = NeighborMode::averaged;
  std::size_t hypotheses = 16;
  double depth_scale = 10.0;  // meters per hypothesis index

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw ConfigError("regression: alpha must lie in [0,1], got " +
                        std::to_string(alpha));
    }
    if (hypotheses < 2) throw ConfigError("regression: need at least 2 hypotheses");
    if (!(depth_scale > 0.0)) throw ConfigError("regression: depth_scale must be > 0");
  }
};

// data[b,d,i,j] = (1/N) sum_c pred[b,c,i,j] * ref[b,c,i,j-d]; columns shifted
// past the left edge contribute zero.
inline CostVolume cost_volume(const Tensor& pred, const Tensor& ref,
                              std::size_t hypotheses) {
  detail::require_rank(pred, 4, "cost_volume", "pred");
  detail::require_same_shape(pred, ref, "cost_volume");
  const std::size_t batch = pred.dim(0), ch = pred.dim(1);
  const std::size_t h = pred.dim(2), w = pred.dim(3);
  if (hypotheses < 2) throw ConfigError("cost_volume: need at least 2 hypotheses");
  if (hypotheses > w) {
    throw ConfigError("cost_volume: " + std::to_string(hypotheses) +
                      " hypotheses exceed feature width " + std::to_string(w));
  }
  const double inv_n = 1.0 / static_cast<double>(ch);
  const std::size_t npix = h * w;
  std::vector<double> out(batch * hypotheses * npix, 0.0);
  auto pv = pred.values();
  auto rv = ref.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t d = 0; d < hypotheses; ++d) {
      double* dst = out.data() + (b * hypotheses + d) * npix;
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = pv.data() + (b * ch + c) * npix;
        const double* r = rv.data() + (b * ch + c) * npix;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = d; j < w; ++j) {
            dst[i * w + j] += p[i * w + j] * r[i * w + j - d];
          }
        }
      }
      for (std::size_t k = 0; k < npix; ++k) dst[k] *= inv_n;
    }
  }
  Tensor data = detail::make_result(
      Shape{batch, hypotheses, h, w}, std::move(out), {&pred, &ref}, "cost_volume",
      [batch, ch, h, w, npix, hypotheses, inv_n](detail::Node& n) {
        const auto& pv = n.parents[0]->values;
        const auto& rv = n.parents[1]->values;
        auto* gp = detail::grad_of(n, 0);
        auto* gr = detail::grad_of(n, 1);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t d = 0; d < hypotheses; ++d) {
            const double* go = n.grad.data() + (b * hypotheses + d) * npix;
            for (std::size_t c = 0; c < ch; ++c) {
              const std::size_t base = (b * ch + c) * npix;
              for (std::size_t i = 0; i < h; ++i) {
                for (std::size_t j = d; j < w; ++j) {
                  const double g = go[i * w + j] * inv_n;
                  if (gp) (*gp)[base + i * w + j] += g * rv[base + i * w + j - d];
                  if (gr) (*gr)[base + i * w + j - d] += g * pv[base + i * w + j];
                }
              }
            }
          }
        }
      });
  return CostVolume{std::move(data), ch};
}

// Soft-argmax over the hypothesis axis: sum_d d * softmax(C)_d, in [0, D-1].
inline Tensor initial_depth(const CostVolume& cv) {
  const Tensor& c = cv.data;
  detail::require_rank(c, 4, "initial_depth", "cost volume");
  const std::size_t batch = c.dim(0), dn = c.dim(1);
  const std::size_t npix = c.dim(2) * c.dim(3);
  std::vector<double> probs(c.numel());
  std::vector<double> out(batch * npix);
  auto cvals = c.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < npix; ++p) {
      const std::size_t base = b * dn * npix + p;
      double mx = cvals[base];
      for (std::size_t d = 1; d < dn; ++d) mx = std::max(mx, cvals[base + d * npix]);
      double z = 0.0;
      for (std::size_t d = 0; d < dn; ++d) {
        const double e = std::exp(cvals[base + d * npix] - mx);
        probs[base + d * npix] = e;
        z += e;
      }
      double expect = 0.0;
      for (std::size_t d = 0; d < dn; ++d) {
        probs[base + d * npix] /= z;
        expect += static_cast<double>(d) * probs[base + d * npix];
      }
      out[b * npix + p] = expect;
    }
  }
  std::vector<double> depth = out;
  return detail::make_result(
      Shape{batch, 1, c.dim(2), c.dim(3)}, std::move(out), {&c}, "initial_depth",
      [probs = std::move(probs), depth = std::move(depth), batch, dn,
       npix](detail::Node& n) {
        auto* g = detail::grad_of(n, 0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t p = 0; p < npix; ++p) {
            const double go = n.grad[b * npix + p];
            const double mu = depth[b * npix + p];
            const std::size_t base = b * dn * npix + p;
            for (std::size_t d = 0; d < dn; ++d) {
              (*g)[base + d * npix] +=
                  go * probs[base + d * npix] * (static_cast<double>(d) - mu);
            }
          }
        }
      });
}

// (1 - alpha) * d_init + alpha * neighbor term, where the neighbor term reads
// d_init bilinearly at the eight 3x3 neighbor positions shifted by the
// learned offsets (divided by 8 in averaged mode).
inline Tensor final_depth(const Tensor& d_init, const OffsetField& off,
                          const RegressionConfig& cfg) {
  cfg.validate();
  detail::require_rank(d_init, 4, "final_depth", "d_init");
  if (d_init.dim(1) != 1) throw DimensionError("final_depth: d_init must have 1 channel");
  if (off.offsets.rank() != 5 || off.offsets.dim(1) != kNeighborTaps ||
      off.offsets.dim(2) != 2 || off.batch() != d_init.dim(0) ||
      off.height() != d_init.dim(2) || off.width() != d_init.dim(3)) {
    throw DimensionError("final_depth: offsets " + shape_str(off.offsets.shape()) +
                         " do not match depth " + shape_str(d_init.shape()));
  }
  const std::size_t batch = d_init.dim(0);
  const std::size_t h = d_init.dim(2), w = d_init.dim(3);
  const std::size_t npix = h * w;
  const double alpha = cfg.alpha;
  const double norm =
      cfg.neighbor_mode == NeighborMode::averaged ? 1.0 / kNeighborTaps : 1.0;
  const auto sh = static_cast<std::ptrdiff_t>(h);
  const auto sw = static_cast<std::ptrdiff_t>(w);

  auto dv = d_init.values();
  auto ov = off.offsets.values();
  std::vector<double> out(batch * npix);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* plane = dv.data() + b * npix;
    const double* o = ov.data() + b * kOffsetChannels * npix;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        double neighbors = 0.0;
        for (std::size_t k = 0; k < kNeighborTaps; ++k) {
          const double x = static_cast<double>(j) + kNeighborGrid[k][1] + o[(2 * k) * npix + p];
          const double y = static_cast<double>(i) + kNeighborGrid[k][0] + o[(2 * k + 1) * npix + p];
          neighbors += detail::bilinear_read(plane, sh, sw, x, y);
        }
        out[b * npix + p] = (1.0 - alpha) * plane[p] + alpha * norm * neighbors;
      }
    }
  }
  const Tensor& offsets = off.offsets;
  return detail::make_result(
      d_init.shape(), std::move(out), {&d_init, &offsets}, "final_depth",
      [batch, h, w, npix, alpha, norm, sh, sw](detail::Node& n) {
        const auto& dv = n.parents[0]->values;
        const auto& ov = n.parents[1]->values;
        auto* gd = detail::grad_of(n, 0);
        auto* go = detail::grad_of(n, 1);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* plane = dv.data() + b * npix;
          double* dplane = gd ? gd->data() + b * npix : nullptr;
          const double* o = ov.data() + b * kOffsetChannels * npix;
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t p = i * w + j;
              const double g = n.grad[b * npix + p];
              if (dplane) dplane[p] += (1.0 - alpha) * g;
              const double gn = alpha * norm * g;
              for (std::size_t k = 0; k < kNeighborTaps; ++k) {
                const double x =
                    static_cast<double>(j) + kNeighborGrid[k][1] + o[(2 * k) * npix + p];
                const double y =
                    static_cast<double>(i) + kNeighborGrid[k][0] + o[(2 * k + 1) * npix + p];
                const auto d = detail::bilinear_backward(plane, dplane, sh, sw, x, y, gn);
                if (go) {
                  (*go)[b * kOffsetChannels * npix + (2 * k) * npix + p] += d.dx;
                  (*go)[b * kOffsetChannels * npix + (2 * k + 1) * npix + p] += d.dy;
                }
              }
            }
          }
        }
      });
}

// Mean |(v1 + v2) - L| over every pixel and both components.
inline Tensor pmtc_loss(const PixelMovement& v1, const PixelMovement& v2,
                        const PixelMovement& L) {
  detail::require_same_shape(v1.flow, v2.flow, "pmtc_loss");
  detail::require_same_shape(v1.flow, L.flow, "pmtc_loss");
  if (v1.flow.numel() == 0) throw DegenerateInputError("pmtc_loss: empty fields");
  auto a = v1.flow.values();
  auto b = v2.flow.values();
  auto l = L.flow.values();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] + b[i] - l[i]);
  const double inv = 1.0 / static_cast<double>(a.size());
  return detail::make_result(
      Shape{1}, {s * inv}, {&v1.flow, &v2.flow, &L.flow}, "pmtc_loss",
      [inv](detail::Node& n) {
        const auto& a = n.parents[0]->values;
        const auto& b = n.parents[1]->values;
        const auto& l = n.parents[2]->values;
        auto* ga = detail::grad_of(n, 0);
        auto* gb = detail::grad_of(n, 1);
        auto* gl = detail::grad_of(n, 2);
        const double g = n.grad[0] * inv;
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double r = a[i] + b[i] - l[i];
          const double sg = r > 0.0 ? g : (r < 0.0 ? -g : 0.0);
          if (ga) (*ga)[i] += sg;
          if (gb) (*gb)[i] += sg;
          if (gl) (*gl)[i] -= sg;
        }
      });
}

inline Tensor to_meters(const Tensor& depth_hyp, const RegressionConfig& cfg) {
  cfg.validate();
  return scale(depth_hyp, cfg.depth_scale);
}

}  // namespace pmpd
