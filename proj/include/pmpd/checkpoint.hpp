#pragma once

// Checkpoint format (all integers little-endian):
//   "PMPD"            4 bytes magic
//   version           u32 (currently 1)
//   count             u32 number of records
//   per record:
//     name_len u32, name bytes,
//     rank u32, dims u32 x rank,
//     values f64 x prod(dims), IEEE-754 little-endian
// Network configuration and dataset depth range travel as a record named
// "meta/network"; every other record is a parameter tensor.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "pmpd/errors.hpp"
#include "pmpd/netpbm.hpp"
#include "pmpd/network.hpp"
#include "pmpd/tensor.hpp"

namespace pmpd {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kMetaRecord = "meta/network";

struct Checkpoint {
  ParameterSet params;
  NetworkConfig network;
  double max_depth = 80.0;
};

namespace detail {

inline void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(Bytes& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline void put_record(Bytes& out, const std::string& name, const Shape& shape,
                       std::span<const double> values) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : values) put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8, "f64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError(std::string("checkpoint truncated reading ") + what, pos_);
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<double> encode_network(const NetworkConfig& c, double max_depth) {
  return {static_cast<double>(c.c1),
          static_cast<double>(c.c2),
          static_cast<double>(c.input_h),
          static_cast<double>(c.input_w),
          static_cast<double>(c.regression.hypotheses),
          c.regression.alpha,
          c.regression.neighbor_mode == NeighborMode::averaged ? 0.0 : 1.0,
          c.regression.depth_scale,
          c.use_deformable ? 1.0 : 0.0,
          c.use_pmp ? 1.0 : 0.0,
          static_cast<double>(c.seed),
          max_depth};
}

inline NetworkConfig decode_network(std::span<const double> v, double* max_depth) {
  if (v.size() != 12) throw ParseError("meta/network record has wrong length", 0);
  NetworkConfig c;
  c.c1 = static_cast<std::size_t>(v[0]);
  c.c2 = static_cast<std::size_t>(v[1]);
  c.input_h = static_cast<std::size_t>(v[2]);
  c.input_w = static_cast<std::size_t>(v[3]);
  c.regression.hypotheses = static_cast<std::size_t>(v[4]);
  c.regression.alpha = v[5];
  c.regression.neighbor_mode = v[6] == 0.0 ? NeighborMode::averaged : NeighborMode::literal_sum;
  c.regression.depth_scale = v[7];
  c.use_deformable = v[8] != 0.0;
  c.use_pmp = v[9] != 0.0;
  c.seed = static_cast<std::uint64_t>(v[10]);
  *max_depth = v[11];
  return c;
}

}  // namespace detail

inline Bytes encode_checkpoint(const ParameterSet& params, const NetworkConfig& network,
                               double max_depth) {
  Bytes out{'P', 'M', 'P', 'D'};
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size() + 1));
  const auto meta = detail::encode_network(network, max_depth);
  detail::put_record(out, kMetaRecord, Shape{meta.size()}, meta);
  for (const auto& p : params) {
    detail::put_record(out, p.name, p.tensor.shape(), p.tensor.values());
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::Reader r(bytes);
  if (r.str(4) != "PMPD") throw ParseError("bad checkpoint magic", 0);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  bool have_meta = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw ParseError("implausible tensor rank", at);
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (n > bytes.size() / 8) throw ParseError("tensor larger than file", at);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    if (name == kMetaRecord) {
      ck.network = detail::decode_network(values, &ck.max_depth);
      have_meta = true;
    } else {
      ck.params.add(name, Tensor::from(std::move(shape), std::move(values)));
    }
  }
  if (!r.done()) throw ParseError("trailing bytes after last record", r.pos());
  if (!have_meta) throw ParseError("checkpoint has no meta/network record", 0);
  return ck;
}

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            const NetworkConfig& network, double max_depth) {
  write_file(path, encode_checkpoint(params, network, max_depth));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace pmpd
