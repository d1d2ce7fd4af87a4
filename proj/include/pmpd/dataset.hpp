#pragma once

// On-disk dataset layout:
//   NNNNNN_img.ppm    P6 image
//   NNNNNN_depth.pgm  P5 16-bit depth, scaled by max_depth
//   meta.txt          key=value lines: count, H, W, max_depth, seed
// Sample k is rendered from scene seed (seed + k).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/netpbm.hpp"
#include "pmpd/synth.hpp"

namespace pmpd {

struct DatasetMeta {
  std::size_t count = 0;
  std::size_t height = 48;
  std::size_t width = 96;
  double max_depth = kSceneMaxDepth;
  std::uint64_t seed = 0;
};

inline std::string sample_stem(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

inline DepthMap to_depth_map(const Tensor& depth, std::span<const std::uint8_t> mask) {
  DepthMap m;
  m.height = depth.dim(depth.rank() - 2);
  m.width = depth.dim(depth.rank() - 1);
  m.depth.assign(depth.values().begin(), depth.values().end());
  m.mask.assign(mask.begin(), mask.end());
  return m;
}

inline std::vector<Sample> synth_samples(std::size_t count, std::size_t height,
                                         std::size_t width, std::uint64_t seed,
                                         double max_depth = kSceneMaxDepth) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back(generate(default_scene_spec(seed + k, max_depth), height, width));
  }
  return out;
}

// key=value text, '#' comments, blank lines ignored.
inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void write_meta(const std::filesystem::path& dir, const DatasetMeta& meta) {
  std::ofstream out(dir / "meta.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write meta.txt in '" + dir.string() + "'");
  out << "count=" << meta.count << "\n"
      << "H=" << meta.height << "\n"
      << "W=" << meta.width << "\n"
      << "max_depth=" << meta.max_depth << "\n"
      << "seed=" << meta.seed << "\n";
}

inline DatasetMeta read_meta(const std::filesystem::path& dir) {
  const auto kv = read_key_values((dir / "meta.txt").string());
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("meta.txt: missing key '" + std::string(key) + "'");
    return it->second;
  };
  DatasetMeta m;
  try {
    m.count = std::stoull(need("count"));
    m.height = std::stoull(need("H"));
    m.width = std::stoull(need("W"));
    m.max_depth = std::stod(need("max_depth"));
    m.seed = std::stoull(need("seed"));
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("meta.txt: malformed value: ") + e.what());
  }
  return m;
}

inline void write_sample(const std::filesystem::path& dir, std::size_t index,
                         const Sample& s, double max_depth) {
  const std::string stem = sample_stem(index);
  write_file((dir / (stem + "_img.ppm")).string(), write_ppm(s.image));
  write_file((dir / (stem + "_depth.pgm")).string(),
             write_depth_pgm(to_depth_map(s.depth_gt, s.mask), max_depth));
}

inline void write_dataset(const std::filesystem::path& dir,
                          const std::vector<Sample>& samples, const DatasetMeta& meta) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < samples.size(); ++k) write_sample(dir, k, samples[k], meta.max_depth);
  write_meta(dir, meta);
}

inline Sample load_sample(const std::filesystem::path& dir, std::size_t index,
                          double max_depth) {
  const std::string stem = sample_stem(index);
  Sample s;
  s.image = read_ppm(read_file((dir / (stem + "_img.ppm")).string()));
  DepthMap d = read_depth_pgm(read_file((dir / (stem + "_depth.pgm")).string()), max_depth);
  if (d.height != s.image.dim(2) || d.width != s.image.dim(3)) {
    throw DimensionError("sample " + stem + ": image and depth extents differ");
  }
  s.depth_gt = Tensor::from(Shape{1, 1, d.height, d.width}, std::move(d.depth));
  s.mask = std::move(d.mask);
  return s;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& dir,
                                        DatasetMeta* meta_out = nullptr) {
  const DatasetMeta meta = read_meta(dir);
  std::vector<Sample> out;
  out.reserve(meta.count);
  for (std::size_t k = 0; k < meta.count; ++k) out.push_back(load_sample(dir, k, meta.max_depth));
  if (meta_out) *meta_out = meta;
  return out;
}

}  // namespace pmpd
