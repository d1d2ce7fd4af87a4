#pragma once

// Standard monocular-depth error metrics with depth capping and optional
// per-image median scaling. Metrics are computed per image and then averaged
// with equal image weight.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/netpbm.hpp"

namespace pmpd {

struct EvalConfig {
  double cap_m = 80.0;
  double min_m = 1e-3;
  bool median_scaling = true;

  void validate() const {
    if (!(min_m > 0.0 && min_m < cap_m)) {
      throw ConfigError("eval: need 0 < min_m < cap_m");
    }
  }
};

struct MetricReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
  std::size_t n_images = 0;
  std::size_t n_pixels = 0;
  std::size_t n_skipped = 0;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + mid);
  return (lower + upper) / 2.0;
}

}  // namespace detail

inline MetricReport evaluate(std::span<const DepthMap> preds, std::span<const DepthMap> gts,
                             const EvalConfig& cfg = {}) {
  cfg.validate();
  if (preds.size() != gts.size()) {
    throw DimensionError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(gts.size()) + " ground truths");
  }
  MetricReport r;
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const DepthMap& pm = preds[n];
    const DepthMap& gm = gts[n];
    if (pm.height != gm.height || pm.width != gm.width || pm.depth.size() != gm.depth.size()) {
      throw DimensionError("evaluate: image " + std::to_string(n) + " extent mismatch");
    }
    std::vector<double> p, g;
    for (std::size_t i = 0; i < gm.depth.size(); ++i) {
      const double gd = gm.depth[i];
      if (!gm.valid(i) || !pm.valid(i) || !(gd > cfg.min_m) || gd > cfg.cap_m) continue;
      p.push_back(std::clamp(pm.depth[i], cfg.min_m, cfg.cap_m));
      g.push_back(gd);
    }
    if (p.empty()) {
      ++r.n_skipped;
      continue;
    }
    if (cfg.median_scaling) {
      const double ratio = detail::median_of(g) / detail::median_of(p);
      for (double& v : p) v *= ratio;
    }
    double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
    std::size_t a1 = 0, a2 = 0, a3 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double diff = p[i] - g[i];
      abs_rel += std::abs(diff) / g[i];
      sq_rel += diff * diff / g[i];
      sq += diff * diff;
      const double dl = std::log(p[i]) - std::log(g[i]);
      sq_log += dl * dl;
      const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
      a1 += ratio < 1.25;
      a2 += ratio < 1.25 * 1.25;
      a3 += ratio < 1.25 * 1.25 * 1.25;
    }
    const double m = static_cast<double>(p.size());
    r.abs_rel += abs_rel / m;
    r.sq_rel += sq_rel / m;
    r.rmse += std::sqrt(sq / m);
    r.rmse_log += std::sqrt(sq_log / m);
    r.d1 += static_cast<double>(a1) / m;
    r.d2 += static_cast<double>(a2) / m;
    r.d3 += static_cast<double>(a3) / m;
    ++r.n_images;
    r.n_pixels += p.size();
  }
  if (r.n_images == 0) throw DegenerateInputError("evaluate: no image has valid pixels");
  const double k = static_cast<double>(r.n_images);
  for (double* v : {&r.abs_rel, &r.sq_rel, &r.rmse, &r.rmse_log, &r.d1, &r.d2, &r.d3}) *v /= k;
  return r;
}

inline constexpr const char* kMetricCsvHeader = "abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3";

inline std::string metric_csv_row(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.abs_rel, r.sq_rel,
                r.rmse, r.rmse_log, r.d1, r.d2, r.d3);
  return buf;
}

inline std::string metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t label_w = 5;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%-*s %9s %9s %9s %9s %9s %9s %9s\n",
                static_cast<int>(label_w), "", "Abs Rel", "Sq Rel", "RMSE", "RMSE log",
                "d<1.25", "d<1.25^2", "d<1.25^3");
  out += buf;
  for (const auto& [label, r] : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n",
                  static_cast<int>(label_w), label.c_str(), r.abs_rel, r.sq_rel, r.rmse,
                  r.rmse_log, r.d1, r.d2, r.d3);
    out += buf;
  }
  return out;
}

}  // namespace pmpd
