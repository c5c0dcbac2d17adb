#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "octdn/image.hpp"
#include "octdn/manifest.hpp"
#include "octdn/phantom.hpp"
#include "octdn/rng.hpp"

namespace octdn::augment {

struct ElasticParams {
  int grid_spacing = 32;          // control-point lattice spacing, pixels
  double displacement_sigma = 4.0;  // per-control-point Gaussian sigma, pixels
};

struct OcclusionParams {
  int count = 10;
  int patch_height = 60;
  int patch_width = 20;
  double factor_min = 0.2;
  double factor_max = 0.8;
};

struct AugmentationSpec {
  ElasticParams elastic;
  double rotation_degrees = 10.0;
  OcclusionParams occlusion;
  bool hflip = true;
  uint64_t seed = 0;
};

inline void validate_spec(const AugmentationSpec& s, int height, int width) {
  if (!(s.occlusion.factor_min > 0.0 && s.occlusion.factor_min <= s.occlusion.factor_max &&
        s.occlusion.factor_max < 1.0))
    throw DataError("occlusion factors must satisfy 0 < min <= max < 1");
  if (std::abs(s.rotation_degrees) > 45.0) throw DataError("|rotation_degrees| must be <= 45");
  if (s.occlusion.count > 0 &&
      (s.occlusion.patch_height > height || s.occlusion.patch_width > width))
    throw DataError("occlusion patch does not fit inside the image");
  if (s.elastic.grid_spacing < 8) throw DataError("elastic grid_spacing must be >= 8");
  if (s.elastic.displacement_sigma < 0.0) throw DataError("displacement_sigma must be >= 0");
}

// ---------------------------------------------------------------------------

inline BScan hflip(const BScan& scan) {
  BScan out = scan;
  for (int r = 0; r < scan.height; ++r)
    for (int c = 0; c < scan.width; ++c) out.at(r, c) = scan.at(r, scan.width - 1 - c);
  return out;
}

namespace detail {

// Bilinear sample with zero fill outside the image.
inline double sample_bilinear(const BScan& s, double r, double c) {
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  double fr = r - r0, fc = c - c0;
  auto at = [&](int rr, int cc) -> double {
    if (rr < 0 || cc < 0 || rr >= s.height || cc >= s.width) return 0.0;
    return s.at(rr, cc);
  };
  return (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
         fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
}

// Catmull-Rom weight for the 4-tap cubic.
inline void catmull_rom(double t, double w[4]) {
  double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

}  // namespace detail

// Rotation about the image center, bilinear, zero fill, dims unchanged.
inline BScan rotate(const BScan& scan, double degrees) {
  if (std::abs(degrees) > 45.0) throw DataError("|rotation_degrees| must be <= 45");
  if (degrees == 0.0) return scan;
  BScan out = scan;
  double rad = degrees * 3.14159265358979323846 / 180.0;
  double cos_t = std::cos(rad), sin_t = std::sin(rad);
  double cr = 0.5 * (scan.height - 1), cc = 0.5 * (scan.width - 1);
  for (int r = 0; r < scan.height; ++r) {
    for (int c = 0; c < scan.width; ++c) {
      // inverse mapping: rotate output coords by -theta
      double dr = r - cr, dc = c - cc;
      double sr = cr + dr * cos_t - dc * sin_t;
      double sc = cc + dr * sin_t + dc * cos_t;
      if (sr < 0.0 || sc < 0.0 || sr > scan.height - 1 || sc > scan.width - 1) {
        out.at(r, c) = 0.0f;
      } else {
        out.at(r, c) = static_cast<float>(std::clamp(detail::sample_bilinear(scan, sr, sc), 0.0, 1.0));
      }
    }
  }
  return out;
}

// Coarse Gaussian displacement field on a grid_spacing lattice, bicubically
// upsampled to per-pixel displacements, applied with bilinear sampling.
inline BScan elastic_deform(const BScan& scan, const ElasticParams& params, uint64_t seed) {
  if (params.grid_spacing < 8) throw DataError("elastic grid_spacing must be >= 8");
  if (params.displacement_sigma < 0.0) throw DataError("displacement_sigma must be >= 0");
  if (params.displacement_sigma == 0.0) return scan;

  const int H = scan.height, W = scan.width, gs = params.grid_spacing;
  const int gh = (H - 1) / gs + 2;  // control rows covering the image, +1 for the far edge
  const int gw = (W - 1) / gs + 2;
  Rng rng(seed);
  std::vector<double> dy(static_cast<size_t>(gh) * gw), dx(dy.size());
  for (size_t i = 0; i < dy.size(); ++i) dy[i] = params.displacement_sigma * rng.normal();
  for (size_t i = 0; i < dx.size(); ++i) dx[i] = params.displacement_sigma * rng.normal();

  auto ctrl = [&](const std::vector<double>& f, int gr, int gc) {
    gr = std::clamp(gr, 0, gh - 1);
    gc = std::clamp(gc, 0, gw - 1);
    return f[static_cast<size_t>(gr) * gw + gc];
  };
  BScan out = scan;
  for (int r = 0; r < H; ++r) {
    int gr = r / gs;
    double tr = static_cast<double>(r % gs) / gs;
    double wr[4];
    detail::catmull_rom(tr, wr);
    for (int c = 0; c < W; ++c) {
      int gc = c / gs;
      double tc = static_cast<double>(c % gs) / gs;
      double wc[4];
      detail::catmull_rom(tc, wc);
      double ddy = 0.0, ddx = 0.0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
          double w = wr[i] * wc[j];
          ddy += w * ctrl(dy, gr - 1 + i, gc - 1 + j);
          ddx += w * ctrl(dx, gr - 1 + i, gc - 1 + j);
        }
      double sr = r + ddy, sc = c + ddx;
      if (sr < 0.0 || sc < 0.0 || sr > H - 1 || sc > W - 1)
        out.at(r, c) = 0.0f;
      else
        out.at(r, c) = static_cast<float>(std::clamp(detail::sample_bilinear(scan, sr, sc), 0.0, 1.0));
    }
  }
  return out;
}

// Multiplies `count` uniform-random axis-aligned patches by uniform-random
// factors. Overlaps compose multiplicatively; other pixels are untouched.
inline BScan occlude(const BScan& scan, const OcclusionParams& params, uint64_t seed) {
  if (params.count > 0 &&
      (params.patch_height > scan.height || params.patch_width > scan.width))
    throw DataError("occlusion patch does not fit inside the image");
  if (!(params.factor_min > 0.0 && params.factor_min <= params.factor_max &&
        params.factor_max < 1.0))
    throw DataError("occlusion factors must satisfy 0 < min <= max < 1");
  BScan out = scan;
  Rng rng(seed);
  for (int k = 0; k < params.count; ++k) {
    int top = rng.uniform_int(0, scan.height - params.patch_height);
    int left = rng.uniform_int(0, scan.width - params.patch_width);
    double factor = rng.uniform(params.factor_min, params.factor_max);
    for (int r = top; r < top + params.patch_height; ++r)
      for (int c = left; c < left + params.patch_width; ++c)
        out.at(r, c) = static_cast<float>(out.at(r, c) * factor);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Offline dataset expansion: each source scan emits the original plus
// (factor-1) augmented variants, then a fresh-noise counterpart of every clean
// variant. Slots 1..5 are the single transforms, later slots random pairs.

enum class Transform { occlusion, elastic, rotate_cw, rotate_ccw, hflip };

inline const char* to_string(Transform t) {
  switch (t) {
    case Transform::occlusion: return "occlude";
    case Transform::elastic: return "elastic";
    case Transform::rotate_cw: return "rotate+";
    case Transform::rotate_ccw: return "rotate-";
    case Transform::hflip: return "hflip";
  }
  return "?";
}

inline std::vector<Transform> variant_recipe(int slot, uint64_t pick_seed) {
  static const Transform kSingles[5] = {Transform::occlusion, Transform::elastic,
                                        Transform::rotate_cw, Transform::rotate_ccw,
                                        Transform::hflip};
  if (slot <= 0) return {};
  if (slot <= 5) return {kSingles[slot - 1]};
  Rng rng(pick_seed);
  int a = rng.uniform_int(0, 4);
  int b = rng.uniform_int(0, 3);
  if (b >= a) ++b;  // distinct pair
  return {kSingles[a], kSingles[b]};
}

inline BScan apply_transform(const BScan& scan, Transform t, const AugmentationSpec& spec,
                             uint64_t seed) {
  switch (t) {
    case Transform::occlusion: return occlude(scan, spec.occlusion, seed);
    case Transform::elastic: return elastic_deform(scan, spec.elastic, seed);
    case Transform::rotate_cw: return rotate(scan, spec.rotation_degrees);
    case Transform::rotate_ccw: return rotate(scan, -spec.rotation_degrees);
    case Transform::hflip: return hflip(scan);
  }
  throw DataError("unknown transform");
}

struct ExpandSource {
  std::filesystem::path clean_file;
  std::string scan_id;
  std::string subject_id;
  Eye eye = Eye::left;
  Split split = Split::train;
};

struct ExpandResult {
  DatasetManifest manifest;
  int pairs = 0;
};

// Emits files into out_dir and appends rows to `result.manifest` (paths
// relative to out_dir) and per-pair metadata lines to the sidecar stream.
inline ExpandResult expand_dataset(const std::vector<ExpandSource>& sources,
                                   const AugmentationSpec& spec,
                                   const phantom::NoiseSpec& noise, int factor,
                                   const std::filesystem::path& out_dir,
                                   std::ostream& sidecar) {
  if (sources.empty()) throw DataError("expand_dataset: no input scans");
  if (factor < 1) throw DataError("expand_dataset: factor must be >= 1");
  ExpandResult result;
  result.manifest.base_dir = out_dir;
  for (const ExpandSource& src : sources) {
    BScan original = load_bscan(src.clean_file);
    validate_spec(spec, original.height, original.width);
    uint64_t scan_hash = hash64(src.scan_id);
    for (int v = 0; v < factor; ++v) {
      std::vector<Transform> recipe =
          variant_recipe(v, derive_seed(spec.seed, scan_hash, static_cast<uint64_t>(v), 0x9ec1ULL));
      BScan clean = original;
      std::string desc;
      for (size_t t = 0; t < recipe.size(); ++t) {
        uint64_t tseed = derive_seed(spec.seed, scan_hash, static_cast<uint64_t>(v), t + 1);
        clean = apply_transform(clean, recipe[t], spec, tseed);
        if (!desc.empty()) desc += "+";
        desc += to_string(recipe[t]);
        if (recipe[t] == Transform::occlusion || recipe[t] == Transform::elastic)
          desc += "(seed=" + std::to_string(tseed) + ")";
      }
      if (desc.empty()) desc = "none";
      clean.meta = ScanMeta{src.subject_id, src.eye, 0, ScanKind::clean};

      phantom::NoiseSpec ns = noise;
      ns.seed = derive_seed(noise.seed, scan_hash, static_cast<uint64_t>(v), 0x0153ULL);
      BScan noisy = phantom::add_noise(clean, ns);

      char suffix[16];
      std::snprintf(suffix, sizeof(suffix), "_v%02d", v);
      std::string clean_name = src.scan_id + suffix + "c.octf";
      std::string noisy_name = src.scan_id + suffix + "n.octf";
      save_bscan(clean, out_dir / clean_name, FileFormat::raw_float);
      save_bscan(noisy, out_dir / noisy_name, FileFormat::raw_float);

      ManifestEntry e;
      e.clean_path = clean_name;
      e.noisy_path = noisy_name;
      e.subject_id = src.subject_id;
      e.eye = src.eye;
      e.split = src.split;
      result.manifest.entries.push_back(e);
      char sigma_txt[40];
      std::snprintf(sigma_txt, sizeof(sigma_txt), "%.17g", ns.sigma);
      sidecar << clean_name << '\t' << noisy_name << '\t' << src.subject_id << '\t'
              << octdn::to_string(src.eye) << '\t' << octdn::to_string(src.split) << '\t' << v
              << '\t' << desc << '\t' << sigma_txt << '\t' << ns.seed << '\n';
      ++result.pairs;
    }
  }
  return result;
}

}  // namespace octdn::augment
