#pragma once

// Naive loop references for the library operators. Written straight from the
// definitions; none of them share code with the optimized kernels.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmpd/metrics.hpp"
#include "pmpd/random.hpp"
#include "pmpd/tensor.hpp"

namespace oracle {

using pmpd::Shape;
using pmpd::Tensor;

inline Tensor random(pmpd::Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(pmpd::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double at4(const Tensor& t, std::size_t b, std::size_t c, long i, long j) {
  if (i < 0 || j < 0 || i >= static_cast<long>(t.dim(2)) || j >= static_cast<long>(t.dim(3))) return 0.0;
  return t.values()[((b * t.dim(1) + c) * t.dim(2) + i) * t.dim(3) + j];
}

inline std::vector<double> conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = bias.values()[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yi = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xi = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                s += at4(x, b, c, yi, xi) * w.values()[((o * C + c) * kh + u) * kw + v];
              }
          out.push_back(s);
        }
  return out;
}

// Four-corner bilinear interpolation with zero padding.
inline double bilinear(const Tensor& t, std::size_t b, std::size_t c, double x, double y) {
  const long x0 = static_cast<long>(std::floor(x)), y0 = static_cast<long>(std::floor(y));
  const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
  return (1 - ax) * (1 - ay) * at4(t, b, c, y0, x0) + ax * (1 - ay) * at4(t, b, c, y0, x0 + 1) +
         (1 - ax) * ay * at4(t, b, c, y0 + 1, x0) + ax * ay * at4(t, b, c, y0 + 1, x0 + 1);
}

// offsets [B,16,H,W]; tap t of the 3x3 grid (row-major), non-center taps
// numbered 0..7 in the same order, channel 2k = dx, 2k+1 = dy.
inline std::vector<double> deform_conv(const Tensor& x, const Tensor& w, const Tensor& bias,
                                       const Tensor& off) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0);
  std::vector<double> out;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = bias.values()[o];
          int k = 0;
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              double dx = 0.0, dy = 0.0;
              if (!(u == 1 && v == 1)) {
                dx = at4(off, b, 2 * k, static_cast<long>(i), static_cast<long>(j));
                dy = at4(off, b, 2 * k + 1, static_cast<long>(i), static_cast<long>(j));
                ++k;
              }
              for (std::size_t c = 0; c < C; ++c) {
                const double sample = bilinear(x, b, c, static_cast<double>(j) + (v - 1) + dx,
                                               static_cast<double>(i) + (u - 1) + dy);
                s += sample * w.values()[((o * C + c) * 3 + u) * 3 + v];
              }
            }
          out.push_back(s);
        }
  return out;
}

inline std::vector<double> cost_volume(const Tensor& pred, const Tensor& ref, std::size_t D) {
  const std::size_t B = pred.dim(0), N = pred.dim(1), H = pred.dim(2), W = pred.dim(3);
  std::vector<double> out;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < N; ++c)
            s += at4(pred, b, c, static_cast<long>(i), static_cast<long>(j)) *
                 at4(ref, b, c, static_cast<long>(i), static_cast<long>(j) - static_cast<long>(d));
          out.push_back(s / static_cast<double>(N));
        }
  return out;
}

// offsets [B,8,2,H,W]; neighbor k at grid displacement (row, col) below.
inline std::vector<double> final_depth(const Tensor& d, const Tensor& off, double alpha,
                                       bool averaged) {
  static const int grid[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                 {0, 1},   {1, -1}, {1, 0},  {1, 1}};
  const std::size_t B = d.dim(0), H = d.dim(2), W = d.dim(3);
  Tensor flat = Tensor::from(Shape{B, 16, H, W},
                             std::vector<double>(off.values().begin(), off.values().end()));
  std::vector<double> out;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double s = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double dx = at4(flat, b, 2 * k, static_cast<long>(i), static_cast<long>(j));
          const double dy = at4(flat, b, 2 * k + 1, static_cast<long>(i), static_cast<long>(j));
          s += bilinear(d, b, 0, static_cast<double>(j) + grid[k][1] + dx,
                        static_cast<double>(i) + grid[k][0] + dy);
        }
        const double centre = at4(d, b, 0, static_cast<long>(i), static_cast<long>(j));
        out.push_back((1 - alpha) * centre + alpha * (averaged ? s / 8.0 : s));
      }
  return out;
}

// Sorts instead of selecting; median of an even count is the midpoint.
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline pmpd::MetricReport metrics(const std::vector<pmpd::DepthMap>& preds,
                                  const std::vector<pmpd::DepthMap>& gts,
                                  const pmpd::EvalConfig& cfg) {
  pmpd::MetricReport r;
  std::vector<std::vector<double>> per_image;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    std::vector<double> p, g;
    for (std::size_t i = 0; i < gts[n].depth.size(); ++i) {
      const double gd = gts[n].depth[i];
      if (!gts[n].valid(i) || !preds[n].valid(i) || gd <= cfg.min_m || gd > cfg.cap_m) continue;
      p.push_back(std::min(std::max(preds[n].depth[i], cfg.min_m), cfg.cap_m));
      g.push_back(gd);
    }
    if (p.empty()) continue;
    if (cfg.median_scaling) {
      const double s = median(g) / median(p);
      for (double& x : p) x *= s;
    }
    double m[7] = {0, 0, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[0] += std::abs(p[i] - g[i]) / g[i];
      m[1] += (p[i] - g[i]) * (p[i] - g[i]) / g[i];
      m[2] += (p[i] - g[i]) * (p[i] - g[i]);
      m[3] += (std::log(p[i]) - std::log(g[i])) * (std::log(p[i]) - std::log(g[i]));
      const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
      m[4] += ratio < 1.25 ? 1 : 0;
      m[5] += ratio < std::pow(1.25, 2) ? 1 : 0;
      m[6] += ratio < std::pow(1.25, 3) ? 1 : 0;
    }
    const double k = static_cast<double>(p.size());
    per_image.push_back({m[0] / k, m[1] / k, std::sqrt(m[2] / k), std::sqrt(m[3] / k), m[4] / k,
                         m[5] / k, m[6] / k});
  }
  double* fields[7] = {&r.abs_rel, &r.sq_rel, &r.rmse, &r.rmse_log, &r.d1, &r.d2, &r.d3};
  for (const auto& img : per_image)
    for (int f = 0; f < 7; ++f) *fields[f] += img[f];
  for (int f = 0; f < 7; ++f) *fields[f] /= static_cast<double>(per_image.size());
  r.n_images = per_image.size();
  return r;
}

inline double max_metric_diff(const pmpd::MetricReport& a, const pmpd::MetricReport& b) {
  const double d[7] = {a.abs_rel - b.abs_rel, a.sq_rel - b.sq_rel, a.rmse - b.rmse,
                       a.rmse_log - b.rmse_log, a.d1 - b.d1, a.d2 - b.d2, a.d3 - b.d3};
  double m = 0.0;
  for (double x : d) m = std::max(m, std::abs(x));
  return m;
}

// Random tiny depth pair with a partial mask and some out-of-range gt.
inline std::pair<pmpd::DepthMap, pmpd::DepthMap> random_depth_pair(pmpd::Rng& rng,
                                                                    std::size_t h = 4,
                                                                    std::size_t w = 4) {
  pmpd::DepthMap p, g;
  p.height = g.height = h;
  p.width = g.width = w;
  g.mask.assign(h * w, 1);
  for (std::size_t i = 0; i < h * w; ++i) {
    g.depth.push_back(rng.uniform(0.5, 90.0));
    p.depth.push_back(rng.uniform(0.0, 95.0));
    if (rng.below(6) == 0) g.mask[i] = 0;
  }
  return {p, g};
}

}  // namespace oracle
