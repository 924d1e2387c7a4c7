#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "ssimfuse/image.hpp"

namespace ssimfuse {

namespace fs = std::filesystem;

/// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bytes;  // h * w * 3
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline bool is_png(const std::vector<unsigned char>& b) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

inline Image decode_png(const std::vector<unsigned char>& b, const std::string& name) {
  // IHDR is always the first chunk: bit depth at byte 24, colour type at 25.
  if (b.size() < 33 || std::memcmp(b.data() + 12, "IHDR", 4) != 0)
    throw ImageError("decode", name + ": malformed PNG header");
  const int depth = b[24], color = b[25];
  if (color != 0) throw ImageError("not-grayscale", name + ": PNG colour type " + std::to_string(color) + " is not grayscale");
  if (depth != 8) throw ImageError("unsupported-bit-depth", name + ": PNG bit depth " + std::to_string(depth) + ", need 8");

  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, b.data(), b.size()))
    throw ImageError("decode", name + ": " + img.message);
  img.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageError("decode", name + ": " + img.message);
  }
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = raw[i] / 255.0;
  return out;
}

/// Binary (P5) or ASCII (P2) graymap with maxval 255.
inline Image decode_pgm(const std::vector<unsigned char>& b, const std::string& name) {
  std::size_t pos = 2;
  auto skip = [&] {
    while (pos < b.size()) {
      if (std::isspace(b[pos])) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip();
    if (pos >= b.size() || !std::isdigit(b[pos])) throw ImageError("decode", name + ": malformed PGM header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
    return v;
  };
  const bool ascii = b[1] == '2';
  const long w = number(), h = number(), maxval = number();
  if (w <= 0 || h <= 0) throw ImageError("decode", name + ": bad PGM dimensions");
  if (maxval != 255)
    throw ImageError("unsupported-bit-depth", name + ": PGM maxval " + std::to_string(maxval) + ", need 255");
  Image out{std::size_t(h), std::size_t(w)};
  if (ascii) {
    for (double& v : out.pixels) v = std::min(1.0, double(number()) / 255.0);
  } else {
    ++pos;  // single whitespace after maxval
    if (b.size() < pos + out.size()) throw ImageError("decode", name + ": truncated PGM raster");
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels[i] = b[pos + i] / 255.0;
  }
  return out;
}

}  // namespace detail

/// Reads an 8-bit grayscale PNG or PGM, scaling intensities by 1/255.
inline Image read_image(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string name = path.string();
  if (detail::is_png(bytes)) return detail::decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P') {
    if (bytes[1] == '5' || bytes[1] == '2') return detail::decode_pgm(bytes, name);
    if (bytes[1] == '6' || bytes[1] == '3') throw ImageError("not-grayscale", name + ": PPM colour image");
  }
  throw ImageError("unsupported-format", name + ": neither PNG nor PGM");
}

inline std::vector<std::uint8_t> quantize(const Image& img) {
  std::vector<std::uint8_t> raw(img.size());
  std::transform(img.pixels.begin(), img.pixels.end(), raw.begin(), to_byte);
  return raw;
}

inline void write_png(const fs::path& path, const Image& img) {
  const auto raw = quantize(img);
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, raw.data(), 0, nullptr))
    throw IoError("cannot write '" + path.string() + "': " + pi.message);
}

inline void write_png(const fs::path& path, const RgbImage& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, img.bytes.data(), 0, nullptr))
    throw IoError("cannot write '" + path.string() + "': " + pi.message);
}

/// Binary P5 graymap.
inline void write_pgm(const fs::path& path, const Image& img) {
  const std::string header = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const auto raw = quantize(img);
  bytes.insert(bytes.end(), raw.begin(), raw.end());
  detail::write_file(path, bytes.data(), bytes.size());
}

/// Writes PGM for a ".pgm" extension, PNG otherwise.
inline void write_image(const fs::path& path, const Image& img) {
  if (path.extension() == ".pgm")
    write_pgm(path, img);
  else
    write_png(path, img);
}

/// Pair id from a file stem, dropping an "_anat"/"_func" suffix.
inline std::string pair_id_from_path(const fs::path& path) {
  std::string stem = path.stem().string();
  for (const char* suffix : {"_anat", "_func"}) {
    const std::size_t n = std::strlen(suffix);
    if (stem.size() > n && stem.compare(stem.size() - n, n, suffix) == 0) return stem.substr(0, stem.size() - n);
  }
  return stem;
}

inline ImagePair load_pair(const fs::path& anatomical, const fs::path& functional) {
  ImagePair p{read_image(anatomical), read_image(functional), pair_id_from_path(anatomical)};
  if (p.anatomical.height != p.functional.height || p.anatomical.width != p.functional.width)
    throw ImageError("dimension-mismatch", "'" + anatomical.string() + "' is " + std::to_string(p.anatomical.width) +
                                               "x" + std::to_string(p.anatomical.height) + " but '" +
                                               functional.string() + "' is " + std::to_string(p.functional.width) +
                                               "x" + std::to_string(p.functional.height));
  return p;
}

struct PairFiles {
  std::string id;
  fs::path anatomical;
  fs::path functional;
};

/// Finds `<id>_anat.{png,pgm}` / `<id>_func.{png,pgm}` pairs, sorted by id.
inline std::vector<PairFiles> list_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<PairFiles> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path& p = entry.path();
    const std::string stem = p.stem().string();
    const std::string ext = p.extension().string();
    if ((ext != ".png" && ext != ".pgm") || stem.size() <= 5 || stem.compare(stem.size() - 5, 5, "_anat") != 0)
      continue;
    const std::string id = stem.substr(0, stem.size() - 5);
    const fs::path func = dir / (id + "_func" + ext);
    if (!fs::exists(func)) throw IoError("'" + p.string() + "' has no matching '" + func.string() + "'");
    out.push_back({id, p, func});
  }
  std::sort(out.begin(), out.end(), [](const PairFiles& a, const PairFiles& b) { return a.id < b.id; });
  return out;
}

inline std::vector<ImagePair> load_dataset(const fs::path& dir) {
  std::vector<ImagePair> pairs;
  for (const auto& f : list_pairs(dir)) pairs.push_back(load_pair(f.anatomical, f.functional));
  if (pairs.empty()) throw IoError("no image pairs found in '" + dir.string() + "'");
  return pairs;
}

}  // namespace ssimfuse
