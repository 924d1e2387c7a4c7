#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "ssimfuse/config.hpp"
#include "ssimfuse/network.hpp"

namespace ssimfuse {

/// Checkpoint layout, all integers little-endian:
///
///   "SSIMFUSE"            8-byte magic
///   u32 version           kCheckpointVersion
///   u64 steps             optimizer steps applied
///   u64 len, bytes        FusionConfig as canonical JSON
///   u32 count             number of tensor blobs
///   count x blob:
///     u16 len, bytes      tensor name
///     u8 kind             ParamKind
///     u64 n, c, h, w      shape
///     f64 x numel         IEEE-754 binary64 values
///     u32 crc32           over the blob bytes from the name length onward
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'I', 'M', 'F', 'U', 'S', 'E'};

struct Checkpoint {
  ParamSet<double> params;
  FusionConfig config;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
  }
  void f64(double d) { le(std::bit_cast<std::uint64_t>(d)); }
  std::size_t size() const { return buf_.size(); }
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& b, std::string path) : buf_(b), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError("corrupt-checkpoint", path_ + ": truncated checkpoint");
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }
  const unsigned char* at(std::size_t p) const { return buf_.data() + p; }

 private:
  const std::vector<unsigned char>& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace detail

/// Serializes the checkpoint to bytes.
inline std::vector<unsigned char> encode_checkpoint(const ParamSet<double>& params, const FusionConfig& config) {
  params.check_against(config);
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(params.steps);
  const std::string json = canonical_json(config);
  w.le<std::uint64_t>(json.size());
  w.raw(json.data(), json.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    const std::size_t start = w.size();
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    const Shape s = e.value.shape();
    for (std::uint64_t d : {s.n, s.c, s.h, s.w}) w.le<std::uint64_t>(d);
    for (double v : e.value.vec()) w.f64(v);
    w.le<std::uint32_t>(detail::crc32_of(w.bytes().data() + start, w.size() - start));
  }
  return w.bytes();
}

/// Parses a full checkpoint image; nothing is returned unless every blob
/// decodes and matches the stored configuration.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "checkpoint") {
  detail::ByteReader r(bytes, origin);
  if (r.str(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw CheckpointError("corrupt-checkpoint", origin + ": not a checkpoint file (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("version-mismatch", origin + ": checkpoint format version " + std::to_string(version) +
                                                  ", expected " + std::to_string(kCheckpointVersion));
  Checkpoint ck;
  ck.params.steps = r.le<std::uint64_t>();
  const auto json_len = r.le<std::uint64_t>();
  r.need(json_len);
  try {
    ck.config = fusion_config_from_json(nlohmann::json::parse(r.str(json_len)));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt-checkpoint", origin + ": header config is not valid JSON: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError("corrupt-checkpoint", origin + ": header config invalid: " + e.what());
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t start = r.pos();
    const auto name_len = r.le<std::uint16_t>();
    std::string name = r.str(name_len);
    const auto kind = r.le<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(ParamKind::RunningVar))
      throw CheckpointError("corrupt-checkpoint", origin + ": blob '" + name + "' has unknown kind");
    Shape s;
    s.n = r.le<std::uint64_t>();
    s.c = r.le<std::uint64_t>();
    s.h = r.le<std::uint64_t>();
    s.w = r.le<std::uint64_t>();
    const std::size_t numel = s.numel();
    if (numel > (bytes.size() - r.pos()) / 8)
      throw CheckpointError("corrupt-checkpoint", origin + ": blob '" + name + "' truncated");
    std::vector<double> data(numel);
    for (double& v : data) v = r.f64();
    const std::uint32_t expect = detail::crc32_of(r.at(start), r.pos() - start);
    if (r.le<std::uint32_t>() != expect)
      throw CheckpointError("corrupt-checkpoint", origin + ": checksum mismatch in blob '" + name + "'");
    ck.params.add(std::move(name), Tensor<double>(s, std::move(data)), static_cast<ParamKind>(kind));
  }
  if (!r.done()) throw CheckpointError("corrupt-checkpoint", origin + ": trailing bytes after last blob");
  ck.params.check_against(ck.config);
  return ck;
}

/// Writes through a temporary file and renames, so readers never see a
/// partially written checkpoint.
inline void save_checkpoint(const ParamSet<double>& params, const FusionConfig& config,
                            const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, config);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

/// Loads and additionally requires the stored architecture to match `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const FusionConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  ck.params.check_against(expected);
  return ck;
}

}  // namespace ssimfuse
