#pragma once

// Two-scale feature network with three pixel-movement heads, a deformable
// support window, a correlation cost volume and offset-aware depth
// regression. Depth and movement fields live at 1/6 of the input resolution.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmpd/deform.hpp"
#include "pmpd/ops.hpp"
#include "pmpd/pmp_ops.hpp"
#include "pmpd/random.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

struct NetworkConfig {
  std::size_t c1 = 16;
  std::size_t c2 = 16;
  std::size_t input_h = 48;
  std::size_t input_w = 96;
  RegressionConfig regression{};
  std::uint64_t seed = 1;
  // Architecture toggles used by the ablation grid.
  bool use_deformable = true;
  bool use_pmp = true;

  std::size_t hypotheses() const { return regression.hypotheses; }

  void validate() const {
    if (input_h == 0 || input_w == 0 || input_h % 12 != 0 || input_w % 12 != 0) {
      throw ConfigError("network: input " + std::to_string(input_h) + "x" +
                        std::to_string(input_w) + " must be divisible by 12");
    }
    if (c1 < 4 || c2 < 4) throw ConfigError("network: channel widths must be >= 4");
    regression.validate();
    if (regression.hypotheses > input_w / 6) {
      throw ConfigError("network: " + std::to_string(regression.hypotheses) +
                        " hypotheses exceed the 1/6-scale width " +
                        std::to_string(input_w / 6));
    }
  }
};

// Meters per hypothesis index that place the scene's far limit at the middle
// hypothesis. With zero-padded shifts the upper half of the hypothesis range is
// only reachable near the right image border, so mid-range is the safe ceiling.
inline double default_depth_scale(double max_depth, std::size_t hypotheses) {
  return 2.0 * max_depth / static_cast<double>(hypotheses);
}

struct FeaturePyramid {
  Tensor f1;  // 1/6 scale
  Tensor f2;  // 1/12 scale
};

struct ForwardOutput {
  Tensor depth_hyp;  // [B,1,H/6,W/6], hypothesis units
  Tensor depth_m;    // [B,1,H/6,W/6], meters
  PixelMovement v1, v2, L;
  OffsetField offsets;
  CostVolume cost;
};

namespace detail {

struct ConvSpec {
  const char* name;
  std::size_t in, out;
  bool zero_init;
};

inline void check_finite(const Tensor& t, const std::string& layer) {
  if (!all_finite(t)) {
    throw NumericFault("non-finite activation in layer '" + layer + "'");
  }
}

class Net {
 public:
  Net(const ParameterSet& params, const NetworkConfig& cfg)
      : params_(params), cfg_(cfg) {}

  Tensor conv(const std::string& name, const Tensor& x, std::size_t stride,
              bool activate) const {
    Tensor y = conv2d(x, params_.get(name + ".w"), params_.get(name + ".b"),
                      stride, 1);
    if (activate) y = relu(y);
    check_finite(y, name);
    return y;
  }

  // Deformable layer with its own offset branch, or a plain conv when the
  // deformable window is ablated.
  Tensor window(const std::string& name, const Tensor& x, OffsetField* captured) const {
    if (!cfg_.use_deformable) return conv(name, x, 1, true);
    Tensor off = conv(name + ".offset", x, 1, false);
    auto res = deformable_conv2d(x, params_.get(name + ".w"),
                                 params_.get(name + ".b"), off);
    Tensor y = relu(res.output);
    check_finite(y, name);
    if (captured) *captured = std::move(res.offsets);
    return y;
  }

 private:
  const ParameterSet& params_;
  const NetworkConfig& cfg_;
};

inline std::vector<ConvSpec> layer_specs(const NetworkConfig& cfg) {
  const std::size_t c1 = cfg.c1, c2 = cfg.c2;
  std::vector<ConvSpec> s{
      {"pyramid.conv1", 3, c1, false},
      {"pyramid.conv2", c1, c1, false},
      {"pyramid.conv3", c1, c1, false},
      {"pyramid.conv4", c1, c2, false},
  };
  if (cfg.use_pmp) {
    s.push_back({"move1.feat", c1, c1, false});
    s.push_back({"move1.conv1", c1 + c2, c1, false});
    s.push_back({"move1.conv2", c1, 2, false});
  }
  const std::size_t window_in = cfg.use_pmp ? 2 + c1 : c1;
  s.push_back({"window.conv1", window_in, c1, false});
  if (cfg.use_deformable) s.push_back({"window.deform1.offset", c1, kOffsetChannels, true});
  s.push_back({"window.deform1", c1, c1, false});
  s.push_back({"window.conv2", c1, c1, false});
  if (cfg.use_deformable) s.push_back({"window.deform2.offset", c1, kOffsetChannels, true});
  s.push_back({"window.deform2", c1, c1, false});
  if (cfg.use_pmp) {
    s.push_back({"move2.conv1", 2 * c1, c1, false});
    s.push_back({"move2.conv2", c1, 2, false});
    s.push_back({"move3.conv1", 2 + c1, c1, false});
    s.push_back({"move3.conv2", c1, c1, false});
    s.push_back({"move3.conv3", c1, 2, false});
    s.push_back({"match.feat", 2 + c1, c1, false});
  } else {
    s.push_back({"match.feat", c1, c1, false});
  }
  return s;
}

}  // namespace detail

// Uniform fan-in initialization, bound sqrt(1/fan_in); biases and the
// offset branches start at zero so deformable layers begin as plain convs.
inline ParameterSet init_params(const NetworkConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, 0x1417));
  ParameterSet params;
  for (const auto& spec : detail::layer_specs(cfg)) {
    const std::size_t fan_in = spec.in * 9;
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::vector<double> w(spec.out * fan_in, 0.0);
    if (!spec.zero_init) {
      for (double& v : w) v = rng.uniform(-bound, bound);
    }
    params.add(std::string(spec.name) + ".w",
               Tensor::from(Shape{spec.out, spec.in, 3, 3}, std::move(w)));
    params.add(std::string(spec.name) + ".b", Tensor::zeros(Shape{spec.out}));
  }
  return params;
}

inline FeaturePyramid extract_pyramid(const Tensor& image, const ParameterSet& params,
                                      const NetworkConfig& cfg) {
  detail::require_rank(image, 4, "extract_pyramid", "image");
  if (image.dim(1) != 3) throw DimensionError("extract_pyramid: image needs 3 channels");
  if (image.dim(2) % 12 != 0 || image.dim(3) % 12 != 0) {
    throw ConfigError("extract_pyramid: image " + std::to_string(image.dim(2)) + "x" +
                      std::to_string(image.dim(3)) + " must be divisible by 12");
  }
  detail::Net net(params, cfg);
  Tensor x = net.conv("pyramid.conv1", image, 2, true);
  x = net.conv("pyramid.conv2", x, 3, true);
  Tensor f1 = net.conv("pyramid.conv3", x, 1, true);
  Tensor f2 = net.conv("pyramid.conv4", f1, 2, true);
  return FeaturePyramid{std::move(f1), std::move(f2)};
}

inline ForwardOutput forward(const Tensor& image, const ParameterSet& params,
                             const NetworkConfig& cfg) {
  cfg.validate();
  if (image.rank() != 4 || image.dim(2) != cfg.input_h || image.dim(3) != cfg.input_w) {
    throw ConfigError("forward: image " + shape_str(image.shape()) +
                      " does not match configured input " +
                      std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w));
  }
  detail::Net net(params, cfg);
  const FeaturePyramid pyr = extract_pyramid(image, params, cfg);
  const std::size_t batch = image.dim(0);
  const std::size_t h = pyr.f1.dim(2), w = pyr.f1.dim(3);
  const Shape flow_shape{batch, 2, h, w};

  ForwardOutput out;
  Tensor window_in = pyr.f1;
  if (cfg.use_pmp) {
    // Initial movement from both scales, then warp F1 along it.
    Tensor ctx = concat({upsample_nearest(pyr.f2, 2), net.conv("move1.feat", pyr.f1, 1, true)}, 1);
    Tensor h1 = net.conv("move1.conv1", ctx, 1, true);
    out.v1.flow = net.conv("move1.conv2", h1, 1, false);
    Tensor warped = bilinear_sample(pyr.f1, out.v1.flow);
    detail::check_finite(warped, "move1.warp");
    window_in = concat({out.v1.flow, warped}, 1);
  } else {
    out.v1.flow = Tensor::zeros(flow_shape);
  }

  // Support window: conv, deform, conv, deform. Offsets of the last deform
  // layer feed the final depth regression.
  Tensor s = net.conv("window.conv1", window_in, 1, true);
  s = net.window("window.deform1", s, nullptr);
  s = net.conv("window.conv2", s, 1, true);
  s = net.window("window.deform2", s, &out.offsets);
  if (!cfg.use_deformable) {
    out.offsets = OffsetField{Tensor::zeros(Shape{batch, kNeighborTaps, 2, h, w})};
  }

  Tensor match_in = s;
  if (cfg.use_pmp) {
    Tensor h2 = net.conv("move2.conv1", concat({s, pyr.f1}, 1), 1, true);
    out.v2.flow = net.conv("move2.conv2", h2, 1, false);
    Tensor h3 = net.conv("move3.conv1", concat({out.v2.flow, h2}, 1), 1, true);
    h3 = net.conv("move3.conv2", h3, 1, true);
    out.L.flow = net.conv("move3.conv3", h3, 1, false);
    match_in = concat({out.L.flow, h3}, 1);
  } else {
    out.v2.flow = Tensor::zeros(flow_shape);
    out.L.flow = Tensor::zeros(flow_shape);
  }
  Tensor f_pred = net.conv("match.feat", match_in, 1, false);

  out.cost = cost_volume(f_pred, pyr.f1, cfg.hypotheses());
  detail::check_finite(out.cost.data, "cost_volume");
  Tensor d_init = initial_depth(out.cost);
  RegressionConfig reg = cfg.regression;
  if (!cfg.use_deformable) reg.alpha = 0.0;
  out.depth_hyp = final_depth(d_init, out.offsets, reg);
  detail::check_finite(out.depth_hyp, "final_depth");
  out.depth_m = to_meters(out.depth_hyp, reg);
  return out;
}

}  // namespace pmpd
