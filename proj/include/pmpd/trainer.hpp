#pragma once

// Adam training loop: L1 depth loss in meters plus the weighted pixel-movement
// triangle loss, halving the learning rate every 10 epochs from epoch 20.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pmpd/checkpoint.hpp"
#include "pmpd/dataset.hpp"
#include "pmpd/metrics.hpp"
#include "pmpd/network.hpp"
#include "pmpd/ops.hpp"
#include "pmpd/pmp_ops.hpp"
#include "pmpd/random.hpp"

namespace pmpd {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 4;
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lambda_pmtc = 1.0;
  bool use_deformable = true;
  bool use_pmp = true;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables

  void validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw ConfigError("train: betas must lie in (0,1)");
    }
    if (!(eps > 0.0)) throw ConfigError("train: eps must be > 0");
    if (batch_size == 0) throw ConfigError("train: batch size must be positive");
    if (!(lambda_pmtc >= 0.0)) throw ConfigError("train: lambda_pmtc must be >= 0");
    if (!(clip_norm >= 0.0)) throw ConfigError("train: clip_norm must be >= 0");
  }
};

// 0-based epochs: 0-19 -> lr0, 20-29 -> lr0/2, 30-39 -> lr0/4, ...
inline double lr_at(std::size_t epoch, double lr0) {
  if (epoch < 20) return lr0;
  const std::size_t halvings = (epoch - 20) / 10 + 1;
  return std::ldexp(lr0, -static_cast<int>(halvings));
}

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over the trainable parameters. Any non-finite gradient
// aborts before the state or the parameters change.
inline void adam_step(ParameterSet& params, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericFault("non-finite gradient for '" + p.name + "'");
    }
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam: state/parameter mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  std::size_t k = 0;
  for (auto& p : params) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    ++k;
    if (!p.trainable) continue;
    auto w = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

struct LossTerms {
  Tensor l1;
  Tensor pmtc;  // undefined when the term is disabled
  Tensor total;
};

// L1 in meters against full-resolution ground truth (prediction upsampled
// from 1/6 scale), plus lambda * PMTC when enabled.
inline LossTerms depth_losses(const ForwardOutput& out, const Tensor& depth_gt,
                              std::span<const std::uint8_t> mask, double lambda_pmtc,
                              bool use_pmp) {
  const std::size_t factor = depth_gt.dim(2) / out.depth_m.dim(2);
  LossTerms t;
  t.l1 = l1_loss(upsample_nearest(out.depth_m, factor), depth_gt, mask);
  t.total = t.l1;
  if (use_pmp && lambda_pmtc > 0.0) {
    t.pmtc = pmtc_loss(out.v1, out.v2, out.L);
    t.total = add(t.l1, scale(t.pmtc, lambda_pmtc));
  }
  return t;
}

struct Batch {
  Tensor images;
  Tensor depth;
  std::vector<std::uint8_t> mask;
};

inline Batch make_batch(const std::vector<Sample>& data, std::span<const std::size_t> idx) {
  const std::size_t h = data[idx[0]].height(), w = data[idx[0]].width();
  std::vector<double> img, dep;
  Batch b;
  for (std::size_t k : idx) {
    const Sample& s = data[k];
    if (s.height() != h || s.width() != w) throw DimensionError("batch: mixed sample extents");
    img.insert(img.end(), s.image.values().begin(), s.image.values().end());
    dep.insert(dep.end(), s.depth_gt.values().begin(), s.depth_gt.values().end());
    b.mask.insert(b.mask.end(), s.mask.begin(), s.mask.end());
  }
  b.images = Tensor::from(Shape{idx.size(), 3, h, w}, std::move(img));
  b.depth = Tensor::from(Shape{idx.size(), 1, h, w}, std::move(dep));
  return b;
}

// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0xE0C0 + epoch));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.below(static_cast<std::uint32_t>(i));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double l1 = 0.0;
  std::optional<double> pmtc;
  double total = 0.0;
};

struct TrainResult {
  ParameterSet params;
  NetworkConfig network;
  std::vector<EpochLog> log;
  bool aborted = false;
  std::string fault;
};

struct TrainOutput {
  std::filesystem::path dir;  // empty: keep everything in memory
  double max_depth = kSceneMaxDepth;
  std::function<void(const EpochLog&)> on_epoch;
};

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_epoch%03zu.pmpd", epoch);
  return buf;
}

inline std::string loss_csv_row(const EpochLog& e) {
  char buf[160];
  char pmtc[40] = "";
  if (e.pmtc) std::snprintf(pmtc, sizeof(pmtc), "%.10g", *e.pmtc);
  std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%s,%.10g", e.epoch, e.lr, e.l1, pmtc, e.total);
  return buf;
}

// Applies the ablation toggles to the architecture.
inline NetworkConfig effective_network(NetworkConfig net, const TrainConfig& tc) {
  net.use_deformable = tc.use_deformable;
  net.use_pmp = tc.use_pmp;
  return net;
}

inline void clip_gradients(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& p : params)
    if (p.trainable)
      for (double& g : p.tensor.mutable_grad()) g *= s;
}

// One optimizer step on one batch; returns the loss terms of the forward pass
// that produced the gradients.
inline EpochLog train_step(ParameterSet& params, AdamState& adam, const NetworkConfig& net,
                           const TrainConfig& tc, const Batch& batch, double lr) {
  params.zero_grad();
  const ForwardOutput out = forward(batch.images, params, net);
  const double lambda = net.use_pmp ? tc.lambda_pmtc : 0.0;
  const LossTerms loss = depth_losses(out, batch.depth, batch.mask, lambda, net.use_pmp);
  if (!std::isfinite(loss.total.item())) throw NumericFault("non-finite loss");
  backward(loss.total);
  if (tc.clip_norm > 0.0) clip_gradients(params, tc.clip_norm);
  adam_step(params, adam, lr, AdamConfig{tc.beta1, tc.beta2, tc.eps});
  EpochLog e;
  e.lr = lr;
  e.l1 = loss.l1.item();
  if (loss.pmtc.defined()) e.pmtc = loss.pmtc.item();
  e.total = loss.total.item();
  return e;
}

inline TrainResult train(const std::vector<Sample>& dataset, const NetworkConfig& net_cfg,
                         const TrainConfig& tc, const TrainOutput& output = {}) {
  if (dataset.empty()) throw DegenerateInputError("train: empty dataset");
  tc.validate();
  TrainResult result;
  result.network = effective_network(net_cfg, tc);
  result.network.validate();
  result.params = init_params(result.network);

  std::ofstream csv;
  if (!output.dir.empty()) {
    std::filesystem::create_directories(output.dir);
    csv.open(output.dir / "loss.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write loss.csv in '" + output.dir.string() + "'");
    csv << "epoch,lr,l1,pmtc,total\n";
  }

  AdamState adam;
  ParameterSet last_good = result.params.clone();
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_at(epoch, tc.lr0);
    const auto order = epoch_order(dataset.size(), tc.seed, epoch);
    EpochLog acc;
    acc.epoch = epoch;
    acc.lr = lr;
    double pmtc_sum = 0.0;
    bool have_pmtc = false;
    try {
      for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
        const std::size_t stop = std::min(order.size(), start + tc.batch_size);
        const std::span<const std::size_t> idx(order.data() + start, stop - start);
        const Batch batch = make_batch(dataset, idx);
        const EpochLog step = train_step(result.params, adam, result.network, tc, batch, lr);
        const double wgt = static_cast<double>(idx.size());
        acc.l1 += step.l1 * wgt;
        acc.total += step.total * wgt;
        if (step.pmtc) {
          pmtc_sum += *step.pmtc * wgt;
          have_pmtc = true;
        }
      }
    } catch (const NumericFault& e) {
      result.aborted = true;
      result.fault = "epoch " + std::to_string(epoch) + ": " + e.what();
      result.params = std::move(last_good);
      return result;
    }
    const double n = static_cast<double>(dataset.size());
    acc.l1 /= n;
    acc.total /= n;
    if (have_pmtc) acc.pmtc = pmtc_sum / n;
    if (!std::isfinite(acc.total)) {
      result.aborted = true;
      result.fault = "epoch " + std::to_string(epoch) + ": non-finite epoch loss";
      result.params = std::move(last_good);
      return result;
    }
    result.log.push_back(acc);
    last_good = result.params.clone();
    if (!output.dir.empty()) {
      save_checkpoint((output.dir / checkpoint_name(epoch)).string(), result.params,
                      result.network, output.max_depth);
      csv << loss_csv_row(acc) << "\n";
      csv.flush();
    }
    if (output.on_epoch) output.on_epoch(acc);
  }
  return result;
}

// Full-resolution metric depth: the 1/6-scale prediction upsampled by 6.
inline std::vector<DepthMap> predict_depth_maps(const ParameterSet& params,
                                                const NetworkConfig& net,
                                                const std::vector<Sample>& samples,
                                                std::size_t batch_size = 8) {
  NoGradGuard no_grad;
  std::vector<DepthMap> out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    idx.clear();
    for (std::size_t k = start; k < std::min(samples.size(), start + batch_size); ++k) idx.push_back(k);
    // Only images are needed; samples loaded for inference carry no ground truth.
    const std::size_t ih = samples[start].image.dim(2), iw = samples[start].image.dim(3);
    std::vector<double> img;
    for (std::size_t k : idx) {
      const Tensor& im = samples[k].image;
      if (im.dim(2) != ih || im.dim(3) != iw) throw DimensionError("predict: mixed image extents");
      img.insert(img.end(), im.values().begin(), im.values().end());
    }
    const Tensor images = Tensor::from(Shape{idx.size(), 3, ih, iw}, std::move(img));
    const ForwardOutput f = forward(images, params, net);
    const Tensor full = upsample_nearest(f.depth_m, ih / f.depth_m.dim(2));
    const std::size_t h = full.dim(2), w = full.dim(3);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      DepthMap m;
      m.height = h;
      m.width = w;
      auto v = full.values();
      m.depth.assign(v.begin() + k * h * w, v.begin() + (k + 1) * h * w);
      out.push_back(std::move(m));
    }
  }
  return out;
}

inline MetricReport evaluate_model(const ParameterSet& params, const NetworkConfig& net,
                                   const std::vector<Sample>& samples,
                                   const EvalConfig& cfg = {}) {
  const auto preds = predict_depth_maps(params, net, samples);
  std::vector<DepthMap> gts;
  for (const Sample& s : samples) gts.push_back(to_depth_map(s.depth_gt, s.mask));
  return evaluate(preds, gts, cfg);
}

}  // namespace pmpd
