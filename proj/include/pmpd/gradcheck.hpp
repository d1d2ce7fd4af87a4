#pragma once

// Central finite-difference verification of every differentiable operator.
//
// Each trial draws a random small instance, reduces the operator output to
// the scalar sum(out * R) for a fixed random R, and compares the backward
// gradient of every input element with (f(x+h) - f(x-h)) / 2h. The error of
// one element is |analytic - numeric| / max(1, |numeric|).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmpd/deform.hpp"
#include "pmpd/ops.hpp"
#include "pmpd/pmp_ops.hpp"
#include "pmpd/random.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

struct GradCheckOp {
  std::string name;
  // Builds one random instance: the inputs to differentiate and the operator
  // applied to them.
  std::function<std::vector<Tensor>(Rng&)> make_inputs;
  std::function<Tensor(const std::vector<Tensor>&)> apply;
};

struct GradCheckResult {
  std::string op;
  std::size_t trials = 0;
  double max_error = 0.0;
  bool passed = false;
};

namespace gradcheck_detail {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + rng.below(static_cast<std::uint32_t>(hi - lo + 1));
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Values whose magnitude stays in [0.05, 1]: keeps kinks (relu, |x|) out of
// the finite-difference stencil.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.05, 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Sub-pixel displacements with fractional part in [0.05, 0.95] so sample
// positions never sit on (or cross) integer grid lines.
inline Tensor fractional_offsets(Rng& rng, Shape shape, int span) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    const int whole = static_cast<int>(rng.below(static_cast<std::uint32_t>(2 * span))) - span;
    x = whole + rng.uniform(0.05, 0.95);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline double reduce(const Tensor& out, const std::vector<double>& r) {
  double s = 0.0;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * r[i];
  return s;
}

}  // namespace gradcheck_detail

inline const std::vector<GradCheckOp>& gradcheck_ops() {
  using namespace gradcheck_detail;
  static const std::vector<GradCheckOp> ops = [] {
    std::vector<GradCheckOp> v;
    v.push_back({"conv2d",
                 [](Rng& r) {
                   const std::size_t k = r.below(2) ? 3 : 1;
                   const std::size_t cin = pick(r, 1, 3), cout = pick(r, 1, 3);
                   return std::vector<Tensor>{
                       random_tensor(r, {pick(r, 1, 2), cin, pick(r, 3, 6), pick(r, 3, 6)}),
                       random_tensor(r, {cout, cin, k, k}), random_tensor(r, {cout})};
                 },
                 [](const std::vector<Tensor>& in) {
                   // Stride and padding are folded into the input extents.
                   const std::size_t stride = 1 + (in[0].dim(2) + in[0].dim(3)) % 2;
                   const std::size_t pad = in[1].dim(2) == 3 ? in[0].dim(2) % 2 : 0;
                   return conv2d(in[0], in[1], in[2], stride, pad);
                 }});
    v.push_back({"deformable_conv2d",
                 [](Rng& r) {
                   const std::size_t b = pick(r, 1, 2), c = pick(r, 1, 2), co = pick(r, 1, 2);
                   const std::size_t h = pick(r, 3, 5), w = pick(r, 3, 5);
                   return std::vector<Tensor>{random_tensor(r, {b, c, h, w}),
                                              random_tensor(r, {co, c, 3, 3}),
                                              random_tensor(r, {co}),
                                              fractional_offsets(r, {b, 16, h, w}, 1)};
                 },
                 [](const std::vector<Tensor>& in) {
                   return deformable_conv2d(in[0], in[1], in[2], in[3]).output;
                 }});
    v.push_back({"bilinear_sample",
                 [](Rng& r) {
                   const std::size_t b = pick(r, 1, 2), h = pick(r, 2, 5), w = pick(r, 2, 5);
                   return std::vector<Tensor>{random_tensor(r, {b, pick(r, 1, 3), h, w}),
                                              fractional_offsets(r, {b, 2, h, w}, 2)};
                 },
                 [](const std::vector<Tensor>& in) { return bilinear_sample(in[0], in[1]); }});
    v.push_back({"softmax",
                 [](Rng& r) {
                   return std::vector<Tensor>{
                       random_tensor(r, {pick(r, 1, 3), pick(r, 2, 5), pick(r, 1, 3)}, -3.0, 3.0)};
                 },
                 [](const std::vector<Tensor>& in) {
                   return softmax(in[0], in[0].numel() % 3);
                 }});
    v.push_back({"cost_volume",
                 [](Rng& r) {
                   const Shape s{pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 3), pick(r, 3, 6)};
                   return std::vector<Tensor>{random_tensor(r, s), random_tensor(r, s)};
                 },
                 [](const std::vector<Tensor>& in) {
                   const std::size_t d = 2 + in[0].numel() % (in[0].dim(3) - 1);
                   return cost_volume(in[0], in[1], d).data;
                 }});
    v.push_back({"initial_depth",
                 [](Rng& r) {
                   return std::vector<Tensor>{random_tensor(
                       r, {pick(r, 1, 2), pick(r, 2, 6), pick(r, 1, 3), pick(r, 1, 3)}, -2.0, 2.0)};
                 },
                 [](const std::vector<Tensor>& in) {
                   return initial_depth(CostVolume{in[0], 1});
                 }});
    v.push_back({"final_depth",
                 [](Rng& r) {
                   const std::size_t b = pick(r, 1, 2), h = pick(r, 2, 5), w = pick(r, 2, 5);
                   return std::vector<Tensor>{random_tensor(r, {b, 1, h, w}, 0.0, 8.0),
                                              fractional_offsets(r, {b, 8, 2, h, w}, 1)};
                 },
                 [](const std::vector<Tensor>& in) {
                   RegressionConfig cfg;
                   cfg.alpha = 0.25 + 0.125 * static_cast<double>(in[0].numel() % 5);
                   cfg.neighbor_mode = in[0].dim(2) % 2 ? NeighborMode::averaged
                                                         : NeighborMode::literal_sum;
                   return final_depth(in[0], OffsetField{in[1]}, cfg);
                 }});
    v.push_back({"pmtc_loss",
                 [](Rng& r) {
                   const Shape s{pick(r, 1, 2), 2, pick(r, 1, 4), pick(r, 1, 4)};
                   Tensor a = random_tensor(r, s), b = random_tensor(r, s);
                   Tensor gap = away_from_zero(r, s);
                   std::vector<double> l(a.numel());
                   for (std::size_t i = 0; i < l.size(); ++i)
                     l[i] = a.values()[i] + b.values()[i] + gap.values()[i];
                   return std::vector<Tensor>{a, b, Tensor::from(s, std::move(l), true)};
                 },
                 [](const std::vector<Tensor>& in) {
                   return pmtc_loss(PixelMovement{in[0]}, PixelMovement{in[1]},
                                    PixelMovement{in[2]});
                 }});
    v.push_back({"l1_loss",
                 [](Rng& r) {
                   const Shape s{pick(r, 1, 2), 1, pick(r, 1, 4), pick(r, 1, 4)};
                   Tensor t = random_tensor(r, s), gap = away_from_zero(r, s);
                   std::vector<double> p(t.numel());
                   for (std::size_t i = 0; i < p.size(); ++i) p[i] = t.values()[i] + gap.values()[i];
                   return std::vector<Tensor>{Tensor::from(s, std::move(p), true), t};
                 },
                 [](const std::vector<Tensor>& in) {
                   std::vector<std::uint8_t> mask(in[0].numel());
                   for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3) != 1;
                   return l1_loss(in[0], in[1], mask);
                 }});
    auto pair4 = [](Rng& r) {
      const Shape s{pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)};
      return std::vector<Tensor>{random_tensor(r, s), random_tensor(r, s)};
    };
    auto one4 = [](Rng& r) {
      return std::vector<Tensor>{
          away_from_zero(r, {pick(r, 1, 2), pick(r, 1, 3), pick(r, 1, 4), pick(r, 1, 4)})};
    };
    v.push_back({"add", pair4, [](const std::vector<Tensor>& in) { return add(in[0], in[1]); }});
    v.push_back({"sub", pair4, [](const std::vector<Tensor>& in) { return sub(in[0], in[1]); }});
    v.push_back({"mul", pair4, [](const std::vector<Tensor>& in) { return mul(in[0], in[1]); }});
    v.push_back({"scale", one4, [](const std::vector<Tensor>& in) { return scale(in[0], -1.75); }});
    v.push_back({"relu", one4, [](const std::vector<Tensor>& in) { return relu(in[0]); }});
    v.push_back({"concat",
                 [](Rng& r) {
                   const std::size_t b = pick(r, 1, 2), h = pick(r, 1, 3), w = pick(r, 1, 3);
                   return std::vector<Tensor>{random_tensor(r, {b, pick(r, 1, 3), h, w}),
                                              random_tensor(r, {b, pick(r, 1, 3), h, w})};
                 },
                 [](const std::vector<Tensor>& in) { return concat({in[0], in[1]}, 1); }});
    v.push_back({"upsample_nearest", one4,
                 [](const std::vector<Tensor>& in) { return upsample_nearest(in[0], 2); }});
    v.push_back({"mean", one4, [](const std::vector<Tensor>& in) { return mean(in[0]); }});
    v.push_back({"sum", one4, [](const std::vector<Tensor>& in) { return sum(in[0]); }});
    v.push_back({"to_meters", one4, [](const std::vector<Tensor>& in) {
                   RegressionConfig cfg;
                   cfg.depth_scale = 2.5;
                   return to_meters(in[0], cfg);
                 }});
    return v;
  }();
  return ops;
}

inline const GradCheckOp* find_gradcheck_op(const std::string& name) {
  for (const auto& op : gradcheck_ops())
    if (op.name == name) return &op;
  return nullptr;
}

// Max relative error over one random instance. `corrupt` perturbs the
// analytic gradient (test hook for the failure path).
inline double gradcheck_trial(const GradCheckOp& op, Rng& rng, double h = 1e-5,
                              bool corrupt = false) {
  std::vector<Tensor> inputs = op.make_inputs(rng);
  const Tensor probe = op.apply(inputs);
  std::vector<double> weights(probe.numel());
  for (double& w : weights) w = rng.uniform(-1.0, 1.0);

  Tensor loss = sum(mul(probe, Tensor::from(probe.shape(), weights)));
  backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(inputs[k].grad().begin(), inputs[k].grad().end());
    if (corrupt && k == 0) analytic[0] += 0.1 + 0.1 * std::abs(analytic[0]);
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      std::vector<Tensor> shifted = inputs;
      auto eval = [&](double delta) {
        std::vector<double> v(inputs[k].values().begin(), inputs[k].values().end());
        v[i] += delta;
        shifted[k] = Tensor::from(inputs[k].shape(), std::move(v));
        NoGradGuard no_grad;
        return gradcheck_detail::reduce(op.apply(shifted), weights);
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline GradCheckResult gradcheck(const GradCheckOp& op, std::size_t trials, double tol,
                                 std::uint64_t seed = 7, bool corrupt = false) {
  Rng rng(mix_seed(seed, std::hash<std::string>{}(op.name) & 0xFFFF));
  GradCheckResult res;
  res.op = op.name;
  res.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    res.max_error = std::max(res.max_error, gradcheck_trial(op, rng, 1e-5, corrupt));
  }
  res.passed = res.max_error < tol;
  return res;
}

}  // namespace pmpd
