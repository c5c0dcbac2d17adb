#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "octdn/image.hpp"
#include "octdn/metrics.hpp"
#include "octdn/rng.hpp"

namespace octdn::phantom {

struct VesselShadow {
  int center_col = 0;
  int width = 0;
  double attenuation = 0.5;  // multiplies intensities in (0,1]
};

// Synthetic layered ONH-like geometry. Bands are stacked top to bottom; the
// default 8-band layout is vitreous, RNFL, GCL+IPL, other retinal layers,
// RPE, choroid, sclera, LC (labels 0..7). Boundaries are smooth random cubic
// curves; an optional central depression mimics the cup.
struct PhantomConfig {
  int height = 496;
  int width = 384;

  // Boundary base depths as fractions of height (bands-1 entries, increasing)
  // and per-band mean intensities (bands entries). Empty -> 8-band defaults.
  std::vector<double> boundary_fractions;
  std::vector<double> intensities;

  // Explicit per-column boundary depths override the generated curves
  // (boundaries[i][c] = depth of boundary i at column c).
  std::vector<std::vector<double>> explicit_boundaries;

  double curve_amplitude = 0.015;  // cubic jitter amplitude, fraction of height
  double texture_sigma = 0.03;     // within-band intensity jitter

  bool cup = true;
  double cup_depth_frac = 0.08;
  double cup_center_frac = 0.5;
  double cup_width_frac = 0.10;

  std::vector<VesselShadow> vessels;
  int shadow_from_band = 3;  // shadows attenuate rows at or below this band's top boundary

  uint64_t seed = 0;
};

inline std::vector<double> default_boundary_fractions() {
  return {0.19, 0.29, 0.39, 0.50, 0.60, 0.71, 0.82};
}

inline std::vector<double> default_intensities() {
  return {0.05, 0.72, 0.38, 0.55, 0.85, 0.45, 0.65, 0.58};
}

struct PhantomOutput {
  BScan scan;
  LabelMap labels;
};

namespace detail {

// Smooth random cubic over the column range, zero mean-ish, bounded by amp.
inline std::vector<double> cubic_jitter(int width, double amp, Rng& rng) {
  double a0 = rng.normal() * 0.4, a1 = rng.normal(), a2 = rng.normal(), a3 = rng.normal();
  std::vector<double> out(width);
  double peak = 1e-9;
  for (int c = 0; c < width; ++c) {
    double x = width > 1 ? static_cast<double>(c) / (width - 1) - 0.5 : 0.0;
    out[c] = a0 + a1 * x + a2 * x * x + a3 * x * x * x;
    peak = std::max(peak, std::abs(out[c]));
  }
  for (double& v : out) v *= amp / peak;
  return out;
}

}  // namespace detail

// Generates the per-column boundary curves for a config (the same curves
// generate_phantom uses when explicit_boundaries is empty).
inline std::vector<std::vector<double>> phantom_boundaries(const PhantomConfig& cfg) {
  if (!cfg.explicit_boundaries.empty()) return cfg.explicit_boundaries;
  std::vector<double> fracs =
      cfg.boundary_fractions.empty() ? default_boundary_fractions() : cfg.boundary_fractions;
  const int H = cfg.height, W = cfg.width;
  Rng rng(derive_seed(cfg.seed, 0xb07dULL));
  std::vector<std::vector<double>> bounds(fracs.size(), std::vector<double>(W));
  for (size_t i = 0; i < fracs.size(); ++i) {
    std::vector<double> jitter = detail::cubic_jitter(W, cfg.curve_amplitude * H, rng);
    for (int c = 0; c < W; ++c) bounds[i][c] = fracs[i] * H + jitter[c];
  }
  if (cfg.cup && !bounds.empty()) {
    // Depression fades with depth; deepest boundaries stay put.
    double depth = cfg.cup_depth_frac * H;
    double cc = cfg.cup_center_frac * (W - 1);
    double cw = std::max(1.0, cfg.cup_width_frac * W);
    for (size_t i = 0; i < bounds.size(); ++i) {
      double scale = std::max(0.0, 1.0 - 0.2 * static_cast<double>(i));
      if (scale == 0.0) break;
      for (int c = 0; c < W; ++c) {
        double z = (c - cc) / cw;
        bounds[i][c] += scale * depth * std::exp(-0.5 * z * z);
      }
    }
  }
  // Keep ordering and margins: the top boundary must clear the background ROI
  // rows, and every band keeps at least a 2px gap.
  constexpr double kMinGap = 2.0;
  for (int c = 0; c < W; ++c) {
    if (!bounds.empty())
      bounds[0][c] = std::clamp(bounds[0][c], static_cast<double>(metrics::kBackgroundRows + 1),
                                static_cast<double>(H - 1));
    for (size_t i = 1; i < bounds.size(); ++i)
      bounds[i][c] = std::max(bounds[i][c], bounds[i - 1][c] + kMinGap);
    for (size_t ri = bounds.size(); ri-- > 0;) {
      double ceiling = H - kMinGap * static_cast<double>(bounds.size() - ri);
      bounds[ri][c] = std::min(bounds[ri][c], ceiling);
    }
  }
  return bounds;
}

inline PhantomOutput generate_phantom(const PhantomConfig& cfg) {
  const int H = cfg.height, W = cfg.width;
  std::vector<double> intensities =
      cfg.intensities.empty() ? default_intensities() : cfg.intensities;
  for (double v : intensities)
    if (!(v > 0.0 && v <= 1.0)) throw DataError("phantom intensities must lie in (0,1]");
  for (const VesselShadow& v : cfg.vessels)
    if (!(v.attenuation > 0.0 && v.attenuation <= 1.0))
      throw DataError("vessel attenuation must lie in (0,1]");
  if (cfg.texture_sigma < 0.0) throw DataError("texture_sigma must be >= 0");

  std::vector<std::vector<double>> bounds = phantom_boundaries(cfg);
  if (bounds.size() + 1 != intensities.size())
    throw DataError("phantom needs intensities for every band (boundaries + 1)");
  for (const auto& b : bounds)
    if (static_cast<int>(b.size()) != W) throw DataError("boundary column count mismatch");
  for (int c = 0; c < W; ++c)
    for (size_t i = 1; i < bounds.size(); ++i)
      if (!(bounds[i][c] > bounds[i - 1][c]))
        throw DataError("boundary curves cross: ordering violated at column " + std::to_string(c));

  PhantomOutput out;
  out.scan = make_bscan(H, W, 0.0f, ScanMeta{"", Eye::left, 0, ScanKind::phantom});
  out.labels.height = H;
  out.labels.width = W;
  out.labels.labels.assign(static_cast<size_t>(H) * W, 0);

  Rng rng(derive_seed(cfg.seed, 0x71e8ULL));
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      size_t band = 0;
      while (band < bounds.size() && r >= bounds[band][c]) ++band;
      double v = intensities[band];
      if (cfg.texture_sigma > 0.0) v += cfg.texture_sigma * rng.normal();
      out.scan.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      out.labels.at(r, c) = static_cast<uint8_t>(band);
    }
  }
  // Vessel shadows multiply everything below the inner retina in their span.
  size_t start_boundary = std::min<size_t>(bounds.size(), cfg.shadow_from_band > 0
                                                              ? static_cast<size_t>(cfg.shadow_from_band - 1)
                                                              : 0);
  for (const VesselShadow& vessel : cfg.vessels) {
    int c0 = std::max(0, vessel.center_col - vessel.width / 2);
    int c1 = std::min(W, vessel.center_col + (vessel.width + 1) / 2);
    for (int c = c0; c < c1; ++c) {
      int r0 = bounds.empty() ? 0
                              : static_cast<int>(std::ceil(bounds[std::min(start_boundary,
                                                                           bounds.size() - 1)][c]));
      for (int r = std::max(0, r0); r < H; ++r)
        out.scan.at(r, c) = static_cast<float>(out.scan.at(r, c) * vessel.attenuation);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Additive Gaussian noise on the [0,1] intensity scale.

struct NoiseSpec {
  double mu = 0.0;
  double sigma = 1.0;
  bool clip = true;
  uint64_t seed = 0;
};

inline BScan add_noise(const BScan& scan, const NoiseSpec& spec) {
  if (spec.sigma < 0.0) throw DataError("noise sigma must be >= 0");
  BScan out = scan;
  out.meta.kind = ScanKind::noisy;
  Rng rng(spec.seed);
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    double v = static_cast<double>(scan.pixels[i]) + spec.mu + spec.sigma * rng.normal();
    if (spec.clip) v = std::clamp(v, 0.0, 1.0);
    out.pixels[i] = static_cast<float>(v);
  }
  return out;
}

// Finds sigma such that the mean SNR of add_noise(clean) over the set hits the
// target within tol_db, by bisection on [1e-4, 4]. SNR is monotone
// non-increasing in sigma (the same Gaussian draws are reused at every trial),
// so bisection is valid. Targets above the SNR at the lower bracket return the
// bracket edge (vanishing noise); targets below the SNR at the upper bracket
// are unreachable and throw.
inline double calibrate_noise_sigma(const std::vector<BScan>& clean_set, double target_snr_db,
                                    const NoiseSpec& proto = {}, double tol_db = 0.2) {
  if (clean_set.empty()) throw DataError("calibrate_noise_sigma: empty clean set");
  if (!std::isfinite(target_snr_db)) throw DataError("calibrate_noise_sigma: non-finite target");
  auto mean_snr = [&](double sigma) {
    double acc = 0.0;
    for (size_t i = 0; i < clean_set.size(); ++i) {
      NoiseSpec s = proto;
      s.sigma = sigma;
      s.seed = derive_seed(proto.seed, 0xca1bULL, i);
      acc += metrics::snr_db(clean_set[i], add_noise(clean_set[i], s));
    }
    return acc / static_cast<double>(clean_set.size());
  };
  double lo = 1e-4, hi = 4.0;
  double snr_lo = mean_snr(lo);
  if (snr_lo <= target_snr_db) return lo;
  double snr_hi = mean_snr(hi);
  if (snr_hi >= target_snr_db + tol_db)
    throw NumericError("calibrate_noise_sigma: target below what sigma <= 4 can reach");
  for (int iter = 0; iter < 60; ++iter) {
    double mid = 0.5 * (lo + hi);
    double snr = mean_snr(mid);
    if (std::abs(snr - target_snr_db) <= tol_db) return mid;
    if (snr > target_snr_db)
      lo = mid;
    else
      hi = mid;
  }
  throw NumericError("calibrate_noise_sigma: bisection did not converge");
}

}  // namespace octdn::phantom
