// pmpd: synthetic data generation, training, inference, evaluation,
// gradient checking and the ablation grid.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or input error,
// 3 numeric fault.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pmpd/ablation.hpp"
#include "pmpd/checkpoint.hpp"
#include "pmpd/dataset.hpp"
#include "pmpd/gradcheck.hpp"
#include "pmpd/metrics.hpp"
#include "pmpd/trainer.hpp"

namespace fs = std::filesystem;
using namespace pmpd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

struct UsageError : Error {
  using Error::Error;
};

void require_dir(const std::string& path, const char* flag) {
  if (!fs::is_directory(path)) throw UsageError(std::string(flag) + ": no such directory '" + path + "'");
}

void require_file(const std::string& path, const char* flag) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(flag) + ": no such file '" + path + "'");
}

bool nonempty_dir(const std::string& path) {
  return fs::is_directory(path) && !fs::is_empty(path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 10;
  std::size_t h = 48;
  std::size_t w = 96;
  std::uint64_t seed = 0;
  double max_depth = kSceneMaxDepth;
  bool force = false;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count == 0) throw UsageError("--count must be positive");
  if (a.h == 0 || a.w == 0 || a.h % 12 != 0 || a.w % 12 != 0) {
    throw UsageError("--h and --w must be positive multiples of 12, got " + std::to_string(a.h) +
                     "x" + std::to_string(a.w));
  }
  if (!(a.max_depth > 0.0 && a.max_depth <= kSceneMaxDepth)) {
    throw UsageError("--max-depth must lie in (0, " + fmt(kSceneMaxDepth) + "]");
  }
  if (fs::exists(a.out) && !fs::is_directory(a.out)) throw UsageError("--out exists and is not a directory");
  if (nonempty_dir(a.out) && !a.force) {
    throw UsageError("--out '" + a.out + "' is not empty (use --force to overwrite)");
  }

  if (a.force && fs::is_directory(a.out)) {
    for (const auto& e : fs::directory_iterator(a.out)) {
      const std::string name = e.path().filename().string();
      const bool ours = name == "meta.txt" || name.ends_with("_img.ppm") || name.ends_with("_depth.pgm");
      if (ours && e.is_regular_file()) fs::remove(e.path());
    }
  }
  DatasetMeta meta{a.count, a.h, a.w, a.max_depth, a.seed};
  write_dataset(a.out, synth_samples(a.count, a.h, a.w, a.seed, a.max_depth), meta);
  std::printf("wrote %zu samples (%zux%zu) to %s\n", a.count, a.h, a.w, a.out.c_str());
  return kExitOk;
}

// ---- run configuration ------------------------------------------------------

struct RunConfig {
  NetworkConfig net;
  TrainConfig train;
  std::optional<double> depth_scale;  // unset: derived from the dataset depth range
};

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

void apply_config_file(RunConfig& rc, const std::string& path) {
  for (const auto& [key, v] : read_key_values(path)) {
    try {
      if (key == "epochs") rc.train.epochs = std::stoull(v);
      else if (key == "batch_size") rc.train.batch_size = std::stoull(v);
      else if (key == "lr0") rc.train.lr0 = std::stod(v);
      else if (key == "lambda_pmtc") rc.train.lambda_pmtc = std::stod(v);
      else if (key == "clip_norm") rc.train.clip_norm = std::stod(v);
      else if (key == "seed") rc.train.seed = std::stoull(v);
      else if (key == "use_deformable") rc.train.use_deformable = parse_bool(key, v);
      else if (key == "use_pmp") rc.train.use_pmp = parse_bool(key, v);
      else if (key == "alpha") rc.net.regression.alpha = std::stod(v);
      else if (key == "hypotheses") rc.net.regression.hypotheses = std::stoull(v);
      else if (key == "depth_scale") rc.depth_scale = std::stod(v);
      else if (key == "c1") rc.net.c1 = std::stoull(v);
      else if (key == "c2") rc.net.c2 = std::stoull(v);
      else if (key == "neighbor_mode") {
        if (v == "averaged") rc.net.regression.neighbor_mode = NeighborMode::averaged;
        else if (v == "literal_sum") rc.net.regression.neighbor_mode = NeighborMode::literal_sum;
        else throw ConfigError("neighbor_mode: expected averaged or literal_sum");
      } else {
        throw ConfigError(path + ": unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError(path + ": malformed value for '" + key + "': '" + v + "'");
    }
  }
}

std::string describe(const RunConfig& rc, const DatasetMeta& meta) {
  const auto& r = rc.net.regression;
  std::ostringstream s;
  s << "# effective configuration\n"
    << "epochs=" << rc.train.epochs << "\n"
    << "batch_size=" << rc.train.batch_size << "\n"
    << "lr0=" << fmt(rc.train.lr0) << "\n"
    << "lambda_pmtc=" << fmt(rc.train.lambda_pmtc) << "\n"
    << "clip_norm=" << fmt(rc.train.clip_norm) << "\n"
    << "seed=" << rc.train.seed << "\n"
    << "use_deformable=" << (rc.train.use_deformable ? "true" : "false") << "\n"
    << "use_pmp=" << (rc.train.use_pmp ? "true" : "false") << "\n"
    << "alpha=" << fmt(r.alpha) << "\n"
    << "hypotheses=" << r.hypotheses << "\n"
    << "depth_scale=" << fmt(r.depth_scale) << "\n"
    << "neighbor_mode=" << (r.neighbor_mode == NeighborMode::averaged ? "averaged" : "literal_sum") << "\n"
    << "c1=" << rc.net.c1 << "\n"
    << "c2=" << rc.net.c2 << "\n"
    << "# dataset\n"
    << "H=" << meta.height << "\n"
    << "W=" << meta.width << "\n"
    << "max_depth=" << fmt(meta.max_depth) << "\n";
  return s.str();
}

// Resolves dataset-dependent fields and validates everything.
void finalize(RunConfig& rc, const DatasetMeta& meta) {
  rc.net.input_h = meta.height;
  rc.net.input_w = meta.width;
  rc.net.seed = rc.train.seed;
  rc.net.regression.depth_scale =
      rc.depth_scale.value_or(default_depth_scale(meta.max_depth, rc.net.regression.hypotheses));
  rc.train.validate();
  effective_network(rc.net, rc.train).validate();
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config;
  std::optional<std::size_t> epochs;
  std::optional<double> alpha, lambda_pmtc;
  std::optional<std::uint64_t> seed;
  bool no_deformable = false, no_pmp = false;
};

int cmd_train(const TrainArgs& a) {
  require_dir(a.data, "--data");
  RunConfig rc;
  if (!a.config.empty()) {
    require_file(a.config, "--config");
    apply_config_file(rc, a.config);
  }
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.alpha) rc.net.regression.alpha = *a.alpha;
  if (a.lambda_pmtc) rc.train.lambda_pmtc = *a.lambda_pmtc;
  if (a.seed) rc.train.seed = *a.seed;
  if (a.no_deformable) rc.train.use_deformable = false;
  if (a.no_pmp) rc.train.use_pmp = false;
  if (rc.train.epochs == 0) throw UsageError("--epochs must be positive");

  DatasetMeta meta;
  const auto data = load_dataset(a.data, &meta);
  finalize(rc, meta);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt", describe(rc, meta));

  std::printf("%5s %10s %12s %12s %12s\n", "epoch", "lr", "l1", "pmtc", "total");
  TrainOutput output;
  output.dir = a.out;
  output.max_depth = meta.max_depth;
  output.on_epoch = [](const EpochLog& e) {
    char pm[32] = "-";
    if (e.pmtc) std::snprintf(pm, sizeof(pm), "%.6f", *e.pmtc);
    std::printf("%5zu %10.3g %12.6f %12s %12.6f\n", e.epoch, e.lr, e.l1, pm, e.total);
    std::fflush(stdout);
  };
  const TrainResult r = train(data, rc.net, rc.train, output);
  if (r.aborted) {
    std::fprintf(stderr, "training aborted: %s\n", r.fault.c_str());
    if (!r.log.empty()) {
      std::fprintf(stderr, "last good checkpoint: %s\n",
                   (fs::path(a.out) / checkpoint_name(r.log.back().epoch)).string().c_str());
    }
    return kExitNumeric;
  }
  return kExitOk;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  std::string ckpt, image, data, out;
};

DepthMap predict_one(const Checkpoint& ck, const Tensor& image) {
  if (image.dim(2) != ck.network.input_h || image.dim(3) != ck.network.input_w) {
    throw DimensionError("image is " + std::to_string(image.dim(2)) + "x" +
                         std::to_string(image.dim(3)) + " but the checkpoint expects " +
                         std::to_string(ck.network.input_h) + "x" +
                         std::to_string(ck.network.input_w));
  }
  Sample s;
  s.image = image;
  DepthMap m = predict_depth_maps(ck.params, ck.network, {s}).front();
  // The hypothesis range can extend past the stored depth range.
  for (double& d : m.depth) d = std::clamp(d, 0.0, ck.max_depth);
  return m;
}

int cmd_infer(const InferArgs& a) {
  require_file(a.ckpt, "--ckpt");
  if (a.image.empty() == a.data.empty()) throw UsageError("infer: give exactly one of --image or --data");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  ck.network.validate();

  if (!a.image.empty()) {
    require_file(a.image, "--image");
    const Tensor image = read_ppm(read_file(a.image));
    write_file(a.out, write_depth_pgm(predict_one(ck, image), ck.max_depth));
    std::printf("wrote %s\n", a.out.c_str());
    return kExitOk;
  }

  require_dir(a.data, "--data");
  DatasetMeta meta = read_meta(a.data);
  std::vector<Tensor> images;
  for (std::size_t k = 0; k < meta.count; ++k) {
    images.push_back(read_ppm(read_file((fs::path(a.data) / (sample_stem(k) + "_img.ppm")).string())));
  }
  fs::create_directories(a.out);
  for (std::size_t k = 0; k < images.size(); ++k) {
    write_file((fs::path(a.out) / (sample_stem(k) + "_depth.pgm")).string(),
               write_depth_pgm(predict_one(ck, images[k]), ck.max_depth));
  }
  meta.max_depth = ck.max_depth;
  write_meta(a.out, meta);
  std::printf("wrote %zu depth maps to %s\n", images.size(), a.out.c_str());
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, csv;
  double cap = 80.0;
  double min = 1e-3;
  bool no_median_scaling = false;
};

std::vector<DepthMap> load_depth_maps(const std::string& dir) {
  const DatasetMeta meta = read_meta(dir);
  std::vector<DepthMap> maps;
  for (std::size_t k = 0; k < meta.count; ++k) {
    maps.push_back(read_depth_pgm(
        read_file((fs::path(dir) / (sample_stem(k) + "_depth.pgm")).string()), meta.max_depth));
  }
  return maps;
}

int cmd_eval(const EvalArgs& a) {
  require_dir(a.pred, "--pred");
  require_dir(a.gt, "--gt");
  EvalConfig cfg;
  cfg.cap_m = a.cap;
  cfg.min_m = a.min;
  cfg.median_scaling = !a.no_median_scaling;
  cfg.validate();

  const auto preds = load_depth_maps(a.pred);
  const auto gts = load_depth_maps(a.gt);
  if (preds.size() != gts.size()) {
    throw UsageError("eval: " + std::to_string(preds.size()) + " predictions but " +
                     std::to_string(gts.size()) + " ground-truth maps");
  }
  const MetricReport r = evaluate(preds, gts, cfg);
  std::printf("%s", metric_table({{"eval", r}}).c_str());
  std::printf("images %zu, pixels %zu, skipped %zu\n", r.n_images, r.n_pixels, r.n_skipped);
  const std::string csv = a.csv.empty() ? (fs::path(a.pred) / "metrics.csv").string() : a.csv;
  write_text(csv, std::string(kMetricCsvHeader) + "\n" + metric_csv_row(r) + "\n");
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

struct GradcheckArgs {
  std::string ops = "all";
  std::size_t trials = 20;
  double tol = 1e-4;
  std::uint64_t seed = 7;
  bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.trials == 0) throw UsageError("--trials must be positive");
  if (!(a.tol > 0.0)) throw UsageError("--tol must be positive");
  std::vector<const GradCheckOp*> selected;
  if (a.ops == "all") {
    for (const auto& op : gradcheck_ops()) selected.push_back(&op);
  } else {
    std::stringstream names(a.ops);
    std::string name;
    while (std::getline(names, name, ',')) {
      const GradCheckOp* op = find_gradcheck_op(name);
      if (!op) throw UsageError("--ops: unknown operator '" + name + "'");
      selected.push_back(op);
    }
  }

  bool all_ok = true;
  std::printf("%-20s %7s %12s  %s\n", "op", "trials", "max_error", "result");
  for (const GradCheckOp* op : selected) {
    const GradCheckResult r = gradcheck(*op, a.trials, a.tol, a.seed, a.corrupt);
    all_ok = all_ok && r.passed;
    std::printf("%-20s %7zu %12.3e  %s\n", r.op.c_str(), r.trials, r.max_error,
                r.passed ? "pass" : "FAIL");
  }
  return all_ok ? kExitOk : kExitVerify;
}

// ---- ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string data, heldout, out;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
};

int cmd_ablate(const AblateArgs& a) {
  require_dir(a.data, "--data");
  if (!a.heldout.empty()) require_dir(a.heldout, "--heldout");
  if (a.epochs == 0) throw UsageError("--epochs must be positive");
  const std::size_t workers = worker_count();

  DatasetMeta meta;
  std::vector<Sample> train_set = load_dataset(a.data, &meta);
  std::vector<Sample> heldout;
  if (!a.heldout.empty()) {
    DatasetMeta hm;
    heldout = load_dataset(a.heldout, &hm);
    if (hm.height != meta.height || hm.width != meta.width) {
      throw UsageError("--heldout extents differ from --data");
    }
  } else {
    // Without an explicit held-out set the last fifth of the data is held out.
    const std::size_t n_hold = train_set.size() / 5;
    if (n_hold == 0) throw UsageError("ablate: need at least 5 samples to split off a held-out set");
    heldout.assign(train_set.end() - static_cast<std::ptrdiff_t>(n_hold), train_set.end());
    train_set.resize(train_set.size() - n_hold);
  }

  RunConfig rc;
  rc.train.epochs = a.epochs;
  rc.train.seed = a.seed;
  finalize(rc, meta);

  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.txt",
             describe(rc, meta) + "train_samples=" + std::to_string(train_set.size()) +
                 "\nheldout_samples=" + std::to_string(heldout.size()) + "\n");
  const auto rows = run_ablation(train_set, heldout, rc.net, rc.train, EvalConfig{}, workers);
  write_text(fs::path(a.out) / "ablation.csv", ablation_csv(rows));
  std::printf("%s", ablation_table(rows).c_str());
  for (const auto& r : rows) {
    if (r.aborted) {
      std::fprintf(stderr, "row %s aborted: %s\n", r.label.c_str(), r.fault.c_str());
      return kExitNumeric;
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monocular depth with pixel-movement prediction"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->set_help_flag("--help", "Print this help message and exit");  // frees -h for --h
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--count", sa.count, "Number of samples");
  synth->add_option("--h", sa.h, "Image height (multiple of 12)");
  synth->add_option("--w", sa.w, "Image width (multiple of 12)");
  synth->add_option("--seed", sa.seed, "Base scene seed");
  synth->add_option("--max-depth", sa.max_depth, "Depth range in meters");
  synth->add_flag("--force", sa.force, "Overwrite a non-empty output directory");

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a model");
  trainc->add_option("--data", ta.data, "Dataset directory")->required();
  trainc->add_option("--out", ta.out, "Output directory for checkpoints and loss.csv")->required();
  trainc->add_option("--config", ta.config, "key=value configuration file");
  trainc->add_option("--epochs", ta.epochs, "Number of epochs");
  trainc->add_option("--alpha", ta.alpha, "Offset blend weight in [0,1]");
  trainc->add_option("--lambda-pmtc", ta.lambda_pmtc, "Weight of the movement consistency loss");
  trainc->add_option("--seed", ta.seed, "Seed for initialization and shuffling");
  trainc->add_flag("--no-deformable", ta.no_deformable, "Use plain convolutions in the support window");
  trainc->add_flag("--no-pmp", ta.no_pmp, "Bypass the pixel-movement heads");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "Predict depth for one image or a dataset directory");
  infer->add_option("--ckpt", ia.ckpt, "Checkpoint file")->required();
  infer->add_option("--image", ia.image, "Input PPM image");
  infer->add_option("--data", ia.data, "Dataset directory (batch mode)");
  infer->add_option("--out", ia.out, "Output PGM (single) or directory (batch)")->required();

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Evaluate predicted depth maps");
  evalc->add_option("--pred", ea.pred, "Directory of predicted depth maps")->required();
  evalc->add_option("--gt", ea.gt, "Ground-truth dataset directory")->required();
  evalc->add_option("--cap", ea.cap, "Depth cap in meters");
  evalc->add_option("--min", ea.min, "Minimum valid depth in meters");
  evalc->add_option("--csv", ea.csv, "CSV output path (default PRED/metrics.csv)");
  evalc->add_flag("--no-median-scaling", ea.no_median_scaling, "Disable per-image median scaling");

  GradcheckArgs ga;
  auto* gradc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gradc->add_option("--ops", ga.ops, "all, or comma-separated operator names");
  gradc->add_option("--trials", ga.trials, "Random instances per operator");
  gradc->add_option("--tol", ga.tol, "Maximum relative error");
  gradc->add_option("--seed", ga.seed, "Seed for random instances");
  gradc->add_flag("--corrupt", ga.corrupt, "Perturb analytic gradients (checks the failure path)")
      ->group("");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the 2x2 module grid");
  ablate->add_option("--data", aa.data, "Training dataset directory")->required();
  ablate->add_option("--heldout", aa.heldout, "Held-out dataset (default: last fifth of --data)");
  ablate->add_option("--out", aa.out, "Output directory")->required();
  ablate->add_option("--epochs", aa.epochs, "Epochs per row");
  ablate->add_option("--seed", aa.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*trainc) return cmd_train(ta);
    if (*infer) return cmd_infer(ia);
    if (*evalc) return cmd_eval(ea);
    if (*gradc) return cmd_gradcheck(ga);
    if (*ablate) return cmd_ablate(aa);
  } catch (const NumericFault& e) {
    std::fprintf(stderr, "numeric fault: %s\n", e.what());
    return kExitNumeric;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "error: %s (byte %zu)\n", e.what(), e.offset());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
