#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "octdn/image.hpp"
#include "octdn/rng.hpp"

namespace octdn::metrics {

struct Roi {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

inline bool roi_in_bounds(const Roi& r, int h, int w) {
  return r.top >= 0 && r.left >= 0 && r.height > 0 && r.width > 0 && r.top + r.height <= h &&
         r.left + r.width <= w;
}

constexpr int kRoiSize = 8;            // tissue ROIs are 8x8
constexpr int kBackgroundRows = 20;    // background ROI spans rows 0..19, full width
constexpr int kRoisPerTissue = 25;
constexpr double kSsimC1 = 6.50;       // on the 0..255 intensity scale
constexpr double kSsimC2 = 58.52;

inline const std::array<const char*, 7>& tissue_names() {
  static const std::array<const char*, 7> names = {
      "rnfl", "gcl_ipl", "retina_other", "rpe", "choroid", "sclera", "lc"};
  return names;
}

// ---------------------------------------------------------------------------
// SNR (dB) of a test scan against its clean reference:
//   -10 * log10(||ref - test||^2 / ||ref||^2)
// Identical scans return +inf.

inline double snr_db(const BScan& reference, const BScan& test) {
  if (reference.height != test.height || reference.width != test.width)
    throw DataError("snr: dimension mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < reference.pixels.size(); ++i) {
    double r = reference.pixels[i];
    double d = r - static_cast<double>(test.pixels[i]);
    num += d * d;
    den += r * r;
  }
  if (den == 0.0) throw DataError("snr: all-zero reference");
  if (num == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(num / den);
}

// ---------------------------------------------------------------------------
// CNR between a tissue ROI and the background ROI. The printed formula in the
// source repeats sigma_b in the denominator; `standard` uses
// sqrt(0.5*(sigma_r^2 + sigma_b^2)), `paper_literal` keeps sigma_b.

enum class CnrVariant { standard, paper_literal };

inline CnrVariant cnr_variant_from_string(const std::string& s) {
  if (s == "standard") return CnrVariant::standard;
  if (s == "paper_literal") return CnrVariant::paper_literal;
  throw DataError("unknown cnr variant: '" + s + "'");
}

struct RoiStats {
  double mean = 0.0;
  double var = 0.0;  // population variance
};

inline RoiStats roi_stats(const BScan& scan, const Roi& roi) {
  if (!roi_in_bounds(roi, scan.height, scan.width)) throw DataError("ROI out of bounds");
  double sum = 0.0, sumsq = 0.0;
  for (int r = roi.top; r < roi.top + roi.height; ++r)
    for (int c = roi.left; c < roi.left + roi.width; ++c) {
      double v = scan.at(r, c);
      sum += v;
      sumsq += v * v;
    }
  double n = static_cast<double>(roi.height) * roi.width;
  RoiStats s;
  s.mean = sum / n;
  s.var = sumsq / n - s.mean * s.mean;
  if (s.var < 0.0) s.var = 0.0;
  return s;
}

inline double cnr_single(double mu_r, double var_r, double mu_b, double var_b,
                         CnrVariant variant) {
  double num = std::abs(mu_r - mu_b);
  double den = variant == CnrVariant::standard ? std::sqrt(0.5 * (var_r + var_b))
                                               : std::sqrt(0.5 * (var_b + var_b));
  if (den == 0.0)
    return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

// Mean CNR over the tissue ROIs against a shared background ROI.
inline double cnr(const BScan& scan, const std::vector<Roi>& tissue_rois, const Roi& background,
                  CnrVariant variant = CnrVariant::standard) {
  if (tissue_rois.empty()) throw DataError("cnr: no tissue ROIs");
  RoiStats bg = roi_stats(scan, background);
  double acc = 0.0;
  for (const Roi& roi : tissue_rois) {
    RoiStats ts = roi_stats(scan, roi);
    acc += cnr_single(ts.mean, ts.var, bg.mean, bg.var, variant);
  }
  return acc / static_cast<double>(tissue_rois.size());
}

// ---------------------------------------------------------------------------
// SSIM over one window pair. Inputs are [0,1] intensities; they are mapped to
// the 0..255 scale the constants were chosen for. Population (co)variances.

inline double ssim_window_raw(const double* x, const double* y, int n) {
  double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  double inv = 1.0 / n;
  double mx = sx * inv, my = sy * inv;
  double vx = sxx * inv - mx * mx;
  double vy = syy * inv - my * my;
  double cxy = sxy * inv - mx * my;
  return ((2.0 * mx * my + kSsimC1) * (2.0 * cxy + kSsimC2)) /
         ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
}

inline void extract_window_255(const BScan& s, const Roi& roi, std::vector<double>& out) {
  out.resize(static_cast<size_t>(roi.height) * roi.width);
  size_t k = 0;
  for (int r = roi.top; r < roi.top + roi.height; ++r)
    for (int c = roi.left; c < roi.left + roi.width; ++c) out[k++] = 255.0 * s.at(r, c);
}

inline double ssim_window(const BScan& x, const BScan& y, const Roi& roi) {
  if (x.height != y.height || x.width != y.width) throw DataError("ssim: dimension mismatch");
  if (!roi_in_bounds(roi, x.height, x.width)) throw DataError("ssim: ROI out of bounds");
  std::vector<double> wx, wy;
  extract_window_255(x, roi, wx);
  extract_window_255(y, roi, wy);
  return ssim_window_raw(wx.data(), wy.data(), static_cast<int>(wx.size()));
}

// Mean SSIM over every 8x8 window at stride 1 in both dimensions.
inline double mssim(const BScan& x, const BScan& y) {
  if (x.height != y.height || x.width != y.width) throw DataError("mssim: dimension mismatch");
  if (x.height < kRoiSize || x.width < kRoiSize) throw DataError("mssim: image smaller than window");
  const int H = x.height, W = x.width;
  double acc = 0.0;
  std::vector<double> wx(kRoiSize * kRoiSize), wy(kRoiSize * kRoiSize);
  for (int r = 0; r + kRoiSize <= H; ++r) {
    for (int c = 0; c + kRoiSize <= W; ++c) {
      size_t k = 0;
      for (int dr = 0; dr < kRoiSize; ++dr) {
        const float* px = &x.pixels[static_cast<size_t>(r + dr) * W + c];
        const float* py = &y.pixels[static_cast<size_t>(r + dr) * W + c];
        for (int dc = 0; dc < kRoiSize; ++dc) {
          wx[k] = 255.0 * px[dc];
          wy[k] = 255.0 * py[dc];
          ++k;
        }
      }
      acc += ssim_window_raw(wx.data(), wy.data(), kRoiSize * kRoiSize);
    }
  }
  double windows = static_cast<double>(H - kRoiSize + 1) * (W - kRoiSize + 1);
  return acc / windows;
}

// ---------------------------------------------------------------------------
// Tissue ROI sampling from a phantom label map. Labels: 0 = vitreous
// (background), 1..7 = the tissue bands. The background ROI is fixed at rows
// 0..19 over the full width.

struct TissueRoiSet {
  std::map<int, std::vector<Roi>> per_tissue;  // label -> sampled ROIs
  Roi background;
  std::vector<int> short_tissues;  // labels with fewer than the requested count
  std::vector<int> absent_tissues; // labels with no pure placement at all
};

inline TissueRoiSet sample_tissue_rois(const LabelMap& map, uint64_t seed,
                                       int rois_per_tissue = kRoisPerTissue,
                                       int max_label = 7) {
  const int H = map.height, W = map.width;
  if (H < kBackgroundRows) throw DataError("label map too short for the background ROI");
  TissueRoiSet set;
  set.background = Roi{0, 0, kBackgroundRows, W};

  // Block purity via per-label summed-area table: an 8x8 block is pure iff its
  // indicator sum is 64.
  std::vector<int32_t> sat(static_cast<size_t>(H + 1) * (W + 1));
  for (int label = 1; label <= max_label; ++label) {
    for (int r = 0; r < H; ++r) {
      int32_t rowsum = 0;
      for (int c = 0; c < W; ++c) {
        rowsum += map.at(r, c) == label ? 1 : 0;
        sat[static_cast<size_t>(r + 1) * (W + 1) + (c + 1)] =
            sat[static_cast<size_t>(r) * (W + 1) + (c + 1)] + rowsum;
      }
    }
    std::vector<std::pair<int, int>> candidates;
    for (int r = 0; r + kRoiSize <= H; ++r) {
      for (int c = 0; c + kRoiSize <= W; ++c) {
        auto s = [&](int rr, int cc) { return sat[static_cast<size_t>(rr) * (W + 1) + cc]; };
        int32_t block = s(r + kRoiSize, c + kRoiSize) - s(r, c + kRoiSize) -
                        s(r + kRoiSize, c) + s(r, c);
        if (block == kRoiSize * kRoiSize) candidates.emplace_back(r, c);
      }
    }
    if (candidates.empty()) {
      set.absent_tissues.push_back(label);
      continue;
    }
    // Uniform sample of distinct positions: partial Fisher-Yates.
    Rng rng(derive_seed(seed, static_cast<uint64_t>(label)));
    std::vector<Roi> rois;
    int want = std::min<int>(rois_per_tissue, static_cast<int>(candidates.size()));
    for (int i = 0; i < want; ++i) {
      int j = rng.uniform_int(i, static_cast<int>(candidates.size()) - 1);
      std::swap(candidates[i], candidates[j]);
      rois.push_back(Roi{candidates[i].first, candidates[i].second, kRoiSize, kRoiSize});
    }
    if (want < rois_per_tissue) set.short_tissues.push_back(label);
    set.per_tissue[label] = std::move(rois);
  }
  return set;
}

// External ROI file for scans without a label map: lines
//   tissue_label top left height width
// with '#' comments.
inline TissueRoiSet load_roi_file(const std::filesystem::path& path, int image_width) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read ROI file " + path.string());
  TissueRoiSet set;
  set.background = Roi{0, 0, kBackgroundRows, image_width};
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int label = 0;
    Roi roi;
    if (!(ls >> label >> roi.top >> roi.left >> roi.height >> roi.width))
      throw DataError("bad ROI line: " + line);
    set.per_tissue[label].push_back(roi);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Report: one row per (scan, kind) plus mean +/- sd aggregates. Aggregates are
// recomputed from rows on save and must match.

struct MetricsRow {
  std::string scan_id;
  std::string kind;  // noisy | denoised | clean
  double snr_db = 0.0;
  double mssim = 0.0;
  std::array<double, 7> cnr{};  // NaN where a tissue is absent
};

struct Aggregate {
  std::string kind;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;  // population sd
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::vector<Aggregate> aggregates;
};

inline std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline double parse_value(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::stod(s);
}

// Mean/sd of a value list; infinities propagate literally.
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                         std::numeric_limits<double>::quiet_NaN()};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) {
    double d = x - mean;
    var += d * d;
  }
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

inline std::vector<Aggregate> compute_aggregates(const std::vector<MetricsRow>& rows) {
  std::vector<Aggregate> out;
  std::vector<std::string> kinds;
  for (const auto& r : rows)
    if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
  for (const auto& kind : kinds) {
    std::vector<std::string> metrics = {"snr_db", "mssim"};
    for (const char* t : tissue_names()) metrics.push_back(std::string("cnr_") + t);
    metrics.push_back("cnr_all");
    for (const auto& metric : metrics) {
      std::vector<double> vals;
      for (const auto& r : rows) {
        if (r.kind != kind) continue;
        if (metric == "snr_db") {
          vals.push_back(r.snr_db);
        } else if (metric == "mssim") {
          vals.push_back(r.mssim);
        } else if (metric == "cnr_all") {
          double acc = 0.0;
          int n = 0;
          for (double c : r.cnr)
            if (!std::isnan(c)) {
              acc += c;
              ++n;
            }
          if (n > 0) vals.push_back(acc / n);
        } else {
          for (size_t t = 0; t < tissue_names().size(); ++t) {
            if (metric == std::string("cnr_") + tissue_names()[t] && !std::isnan(r.cnr[t]))
              vals.push_back(r.cnr[t]);
          }
        }
      }
      auto [mean, sd] = mean_sd(vals);
      out.push_back(Aggregate{kind, metric, mean, sd});
    }
  }
  return out;
}

inline bool values_equal(double a, double b, double tol) {
  if (std::isnan(a) && std::isnan(b)) return true;
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= tol;
}

inline void save_report(const MetricsReport& report, const std::filesystem::path& path) {
  // Aggregate rows must be recomputable from the per-scan rows.
  std::vector<Aggregate> check = compute_aggregates(report.rows);
  if (check.size() != report.aggregates.size()) throw NumericError("report aggregates inconsistent");
  for (size_t i = 0; i < check.size(); ++i) {
    const Aggregate& a = report.aggregates[i];
    const Aggregate& b = check[i];
    if (a.kind != b.kind || a.metric != b.metric || !values_equal(a.mean, b.mean, 1e-9) ||
        !values_equal(a.sd, b.sd, 1e-9))
      throw NumericError("report aggregates inconsistent with rows");
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report " + path.string());
  os << "scan_id,kind,snr_db,mssim";
  for (const char* t : tissue_names()) os << ",cnr_" << t;
  os << "\n";
  for (const auto& r : report.rows) {
    os << r.scan_id << ',' << r.kind << ',' << format_value(r.snr_db) << ','
       << format_value(r.mssim);
    for (double c : r.cnr) os << ',' << format_value(c);
    os << "\n";
  }
  for (const auto& a : report.aggregates) {
    os << "aggregate," << a.kind << ',' << a.metric << ',' << format_value(a.mean) << ','
       << format_value(a.sd) << "\n";
  }
  if (!os) throw DataError("short write to " + path.string());
}

inline MetricsReport load_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read report " + path.string());
  MetricsReport rep;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cur;
    while (std::getline(ls, cur, ',')) f.push_back(cur);
    if (f.size() >= 5 && f[0] == "aggregate") {
      rep.aggregates.push_back(Aggregate{f[1], f[2], parse_value(f[3]), parse_value(f[4])});
    } else if (f.size() == 4 + tissue_names().size()) {
      MetricsRow r;
      r.scan_id = f[0];
      r.kind = f[1];
      r.snr_db = parse_value(f[2]);
      r.mssim = parse_value(f[3]);
      for (size_t t = 0; t < tissue_names().size(); ++t) r.cnr[t] = parse_value(f[4 + t]);
      rep.rows.push_back(std::move(r));
    } else {
      throw DataError("bad report line: " + line);
    }
  }
  return rep;
}

inline double aggregate_value(const MetricsReport& rep, const std::string& kind,
                              const std::string& metric) {
  for (const auto& a : rep.aggregates)
    if (a.kind == kind && a.metric == metric) return a.mean;
  throw DataError("aggregate not found: " + kind + "/" + metric);
}

// ---------------------------------------------------------------------------
// Evaluation over (clean, noisy, denoised) triples. CNR uses one ROI set per
// scan (sampled from its label map, or loaded from a file), shared by all
// three kinds so contrasts are comparable.

struct EvalInput {
  std::string scan_id;
  BScan clean;
  BScan noisy;
  BScan denoised;
  const LabelMap* labels = nullptr;  // optional; nullptr with roi_file policy
};

struct RoiPolicy {
  uint64_t seed = 0;
  int rois_per_tissue = kRoisPerTissue;
  std::filesystem::path roi_file;  // non-empty -> load instead of sampling
};

inline MetricsReport evaluate(const std::vector<EvalInput>& inputs, const RoiPolicy& policy,
                              CnrVariant variant = CnrVariant::standard) {
  MetricsReport rep;
  for (const auto& in : inputs) {
    TissueRoiSet rois;
    if (!policy.roi_file.empty()) {
      rois = load_roi_file(policy.roi_file, in.clean.width);
    } else {
      if (!in.labels) throw DataError("evaluate: no label map and no ROI file for " + in.scan_id);
      rois = sample_tissue_rois(*in.labels, derive_seed(policy.seed, hash64(in.scan_id)),
                                policy.rois_per_tissue);
    }
    auto row_for = [&](const std::string& kind, const BScan& scan) {
      MetricsRow r;
      r.scan_id = in.scan_id;
      r.kind = kind;
      r.snr_db = snr_db(in.clean, scan);
      r.mssim = mssim(scan, in.clean);
      for (size_t t = 0; t < tissue_names().size(); ++t) {
        int label = static_cast<int>(t) + 1;
        auto it = rois.per_tissue.find(label);
        r.cnr[t] = (it == rois.per_tissue.end() || it->second.empty())
                       ? std::numeric_limits<double>::quiet_NaN()
                       : cnr(scan, it->second, rois.background, variant);
      }
      return r;
    };
    rep.rows.push_back(row_for("noisy", in.noisy));
    rep.rows.push_back(row_for("denoised", in.denoised));
    rep.rows.push_back(row_for("clean", in.clean));
  }
  rep.aggregates = compute_aggregates(rep.rows);
  return rep;
}

}  // namespace octdn::metrics
