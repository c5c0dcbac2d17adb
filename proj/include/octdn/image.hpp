#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "octdn/common.hpp"

namespace octdn {

enum class Eye { left, right };
enum class ScanKind { clean, noisy, single, denoised, phantom };
enum class FileFormat { raw_float, gray8, gray16 };

inline const char* to_string(Eye e) { return e == Eye::left ? "left" : "right"; }

inline Eye eye_from_string(const std::string& s) {
  if (s == "left") return Eye::left;
  if (s == "right") return Eye::right;
  throw DataError("unknown eye: '" + s + "'");
}

inline const char* to_string(ScanKind k) {
  switch (k) {
    case ScanKind::clean: return "clean";
    case ScanKind::noisy: return "noisy";
    case ScanKind::single: return "single";
    case ScanKind::denoised: return "denoised";
    case ScanKind::phantom: return "phantom";
  }
  return "?";
}

constexpr int kMinScanDim = 16;

struct ScanMeta {
  std::string subject_id;
  Eye eye = Eye::left;
  int scan_index = 0;
  ScanKind kind = ScanKind::clean;
};

// A single 2-D grayscale B-scan, row-major, intensities in [0,1].
struct BScan {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;
  ScanMeta meta;

  float at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
  float& at(int r, int c) { return pixels[static_cast<size_t>(r) * width + c]; }
  size_t size() const { return pixels.size(); }
};

inline void validate_bscan(const BScan& s) {
  if (s.height < kMinScanDim || s.width < kMinScanDim)
    throw DataError("B-scan dimensions below " + std::to_string(kMinScanDim) + "x" +
                    std::to_string(kMinScanDim));
  if (s.pixels.size() != static_cast<size_t>(s.height) * s.width)
    throw DataError("B-scan pixel buffer does not match dimensions");
  for (float v : s.pixels) {
    if (!(v >= 0.0f && v <= 1.0f))
      throw DataError("B-scan intensity outside [0,1]");
  }
}

inline BScan make_bscan(int height, int width, float fill = 0.0f, ScanMeta meta = {}) {
  BScan s;
  s.height = height;
  s.width = width;
  s.pixels.assign(static_cast<size_t>(height) * width, fill);
  s.meta = std::move(meta);
  validate_bscan(s);
  return s;
}

// Ordered stack of B-scans from one (subject, eye) acquisition.
struct Volume {
  std::vector<BScan> scans;
};

inline void validate_volume(const Volume& v) {
  for (size_t i = 0; i < v.scans.size(); ++i) {
    const BScan& s = v.scans[i];
    if (s.height != v.scans[0].height || s.width != v.scans[0].width)
      throw DataError("volume scans have mixed dimensions");
    if (s.meta.subject_id != v.scans[0].meta.subject_id || s.meta.eye != v.scans[0].meta.eye)
      throw DataError("volume scans have mixed subject/eye");
    if (s.meta.scan_index != static_cast<int>(i))
      throw DataError("volume scan_index values not consecutive from 0");
  }
}

// ---------------------------------------------------------------------------
// Per-pixel tissue labels emitted alongside phantoms. Stored as binary PGM
// whose pixel values are the raw label codes.

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> labels;

  uint8_t at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }
  uint8_t& at(int r, int c) { return labels[static_cast<size_t>(r) * width + c]; }
};

// ---------------------------------------------------------------------------
// File I/O.
//
// raw_float: 16-byte header (magic "OCTF", u32le height, u32le width,
//            4 reserved zero bytes) then height*width f32le, row-major.
// gray8/gray16: binary PGM (P5), maxval 255 / 65535. 16-bit samples are
//            big-endian per the PGM convention.

namespace detail {

inline void put_u32le(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

// PGM header token reader: skips whitespace and '#' comment lines.
inline int next_pgm_token(std::istream& is) {
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = is.get();
  }
  if (c == EOF) throw DataError("truncated PGM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  return value;
}

inline void write_pgm(const std::filesystem::path& path, int height, int width, int maxval,
                      const std::vector<uint16_t>& samples) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << "P5\n" << width << " " << height << "\n" << maxval << "\n";
  if (maxval <= 255) {
    std::vector<uint8_t> raw(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) raw[i] = static_cast<uint8_t>(samples[i]);
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  } else {
    std::vector<uint8_t> raw(samples.size() * 2);
    for (size_t i = 0; i < samples.size(); ++i) {
      raw[2 * i] = static_cast<uint8_t>(samples[i] >> 8);
      raw[2 * i + 1] = static_cast<uint8_t>(samples[i] & 0xff);
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  }
  if (!os) throw DataError("short write to " + path.string());
}

inline void read_pgm(const std::filesystem::path& path, int& height, int& width, int& maxval,
                     std::vector<uint16_t>& samples) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '5') throw DataError("not a binary PGM: " + path.string());
  width = next_pgm_token(is);
  height = next_pgm_token(is);
  maxval = next_pgm_token(is);
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
    throw DataError("bad PGM header in " + path.string());
  size_t n = static_cast<size_t>(height) * width;
  samples.resize(n);
  if (maxval <= 255) {
    std::vector<uint8_t> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (!is) throw DataError("truncated PGM payload in " + path.string());
    for (size_t i = 0; i < n; ++i) samples[i] = raw[i];
  } else {
    std::vector<uint8_t> raw(n * 2);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 2));
    if (!is) throw DataError("truncated PGM payload in " + path.string());
    for (size_t i = 0; i < n; ++i)
      samples[i] = static_cast<uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
}

}  // namespace detail

inline void save_bscan(const BScan& scan, const std::filesystem::path& path, FileFormat format) {
  validate_bscan(scan);
  if (format == FileFormat::raw_float) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os.write("OCTF", 4);
    detail::put_u32le(os, static_cast<uint32_t>(scan.height));
    detail::put_u32le(os, static_cast<uint32_t>(scan.width));
    detail::put_u32le(os, 0u);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(scan.pixels.data()),
             static_cast<std::streamsize>(scan.pixels.size() * 4));
    if (!os) throw DataError("short write to " + path.string());
    return;
  }
  int maxval = format == FileFormat::gray8 ? 255 : 65535;
  std::vector<uint16_t> q(scan.pixels.size());
  for (size_t i = 0; i < scan.pixels.size(); ++i) {
    // round-half-up of intensity * maxval
    long code = std::lround(static_cast<double>(scan.pixels[i]) * maxval);
    if (code < 0) code = 0;
    if (code > maxval) code = maxval;
    q[i] = static_cast<uint16_t>(code);
  }
  detail::write_pgm(path, scan.height, scan.width, maxval, q);
}

inline BScan load_bscan(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  if (!is) throw DataError("truncated file " + path.string());

  BScan s;
  if (std::memcmp(magic, "OCTF", 4) == 0) {
    s.height = static_cast<int>(detail::get_u32le(is));
    s.width = static_cast<int>(detail::get_u32le(is));
    detail::get_u32le(is);  // reserved
    if (!is || s.height <= 0 || s.width <= 0) throw DataError("bad OCTF header in " + path.string());
    size_t n = static_cast<size_t>(s.height) * s.width;
    s.pixels.resize(n);
    is.read(reinterpret_cast<char*>(s.pixels.data()), static_cast<std::streamsize>(n * 4));
    if (!is) throw DataError("truncated OCTF payload in " + path.string());
  } else if (magic[0] == 'P' && magic[1] == '5') {
    int maxval = 0;
    std::vector<uint16_t> samples;
    is.close();
    detail::read_pgm(path, s.height, s.width, maxval, samples);
    s.pixels.resize(samples.size());
    for (size_t i = 0; i < samples.size(); ++i)
      s.pixels[i] = static_cast<float>(static_cast<double>(samples[i]) / maxval);
  } else {
    throw DataError("unsupported image format in " + path.string());
  }
  validate_bscan(s);
  return s;
}

inline void save_label_map(const LabelMap& map, const std::filesystem::path& path) {
  std::vector<uint16_t> raw(map.labels.begin(), map.labels.end());
  detail::write_pgm(path, map.height, map.width, 255, raw);
}

inline LabelMap load_label_map(const std::filesystem::path& path) {
  LabelMap m;
  int maxval = 0;
  std::vector<uint16_t> raw;
  detail::read_pgm(path, m.height, m.width, maxval, raw);
  if (maxval != 255) throw DataError("label map is not gray8: " + path.string());
  m.labels.assign(raw.begin(), raw.end());
  return m;
}

}  // namespace octdn
