#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "octdn/metrics.hpp"
#include "octdn/phantom.hpp"
#include "octdn/rng.hpp"

using namespace octdn;
using namespace octdn::metrics;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Independent brute-force oracles. These translate the formulas directly with
// two-pass statistics, deliberately ordering the arithmetic differently from
// the implementation.

namespace {

double oracle_snr_db(const BScan& ref, const BScan& test) {
  double num = 0.0;
  for (int r = 0; r < ref.height; ++r)
    for (int c = 0; c < ref.width; ++c) {
      double d = static_cast<double>(ref.at(r, c)) - static_cast<double>(test.at(r, c));
      num += d * d;
    }
  double den = 0.0;
  for (int r = 0; r < ref.height; ++r)
    for (int c = 0; c < ref.width; ++c) den += static_cast<double>(ref.at(r, c)) * ref.at(r, c);
  if (num == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(num / den);
}

void oracle_stats(const std::vector<double>& v, double& mean, double& var) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
}

std::vector<double> roi_values(const BScan& s, const Roi& roi, double scale = 1.0) {
  std::vector<double> v;
  for (int r = roi.top; r < roi.top + roi.height; ++r)
    for (int c = roi.left; c < roi.left + roi.width; ++c)
      v.push_back(scale * static_cast<double>(s.at(r, c)));
  return v;
}

double oracle_cnr(const BScan& s, const std::vector<Roi>& rois, const Roi& bg,
                  CnrVariant variant) {
  double mu_b, var_b;
  auto bv = roi_values(s, bg);
  oracle_stats(bv, mu_b, var_b);
  double acc = 0.0;
  for (const Roi& roi : rois) {
    double mu_r, var_r;
    auto rv = roi_values(s, roi);
    oracle_stats(rv, mu_r, var_r);
    double den = variant == CnrVariant::standard ? std::sqrt(0.5 * (var_r + var_b))
                                                 : std::sqrt(0.5 * (var_b + var_b));
    acc += std::abs(mu_r - mu_b) / den;
  }
  return acc / static_cast<double>(rois.size());
}

double oracle_ssim(const std::vector<double>& x, const std::vector<double>& y) {
  double mx, vx, my, vy;
  oracle_stats(x, mx, vx);
  oracle_stats(y, my, vy);
  double cxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) cxy += (x[i] - mx) * (y[i] - my);
  cxy /= static_cast<double>(x.size());
  return ((2.0 * mx * my + 6.50) * (2.0 * cxy + 58.52)) /
         ((mx * mx + my * my + 6.50) * (vx + vy + 58.52));
}

double oracle_mssim(const BScan& x, const BScan& y) {
  double acc = 0.0;
  int count = 0;
  for (int r = 0; r + 8 <= x.height; ++r)
    for (int c = 0; c + 8 <= x.width; ++c) {
      Roi roi{r, c, 8, 8};
      acc += oracle_ssim(roi_values(x, roi, 255.0), roi_values(y, roi, 255.0));
      ++count;
    }
  return acc / count;
}

BScan random_scan(int h, int w, uint64_t seed) {
  Rng rng(seed);
  BScan s = make_bscan(h, w);
  for (auto& v : s.pixels) v = static_cast<float>(rng.uniform());
  return s;
}

// bypasses the size floor: the metric formulas themselves have no 16px minimum
BScan raw_scan(int h, int w, uint64_t seed) {
  Rng rng(seed);
  BScan s;
  s.height = h;
  s.width = w;
  s.pixels.resize(static_cast<size_t>(h) * w);
  for (auto& v : s.pixels) v = static_cast<float>(rng.uniform());
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// SNR

TEST_CASE("snr closed forms") {
  // identical scans -> +inf sentinel
  BScan a = random_scan(16, 16, 5);
  CHECK(std::isinf(snr_db(a, a)));

  // reference all 1.0, test offset by +0.1 -> -10*log10(0.01) = 20 dB
  BScan ref = make_bscan(16, 16, 1.0f);
  BScan test = ref;
  for (auto& v : test.pixels) v = 1.1f;
  double d = static_cast<double>(1.1f) - 1.0;  // the offset actually stored
  CHECK(std::abs(snr_db(ref, test) - (-10.0 * std::log10(d * d))) < 1e-9);
  CHECK(snr_db(ref, test) == Catch::Approx(20.0).margin(1e-5));

  // [1,1,1,1] vs [1.5,0.5,1.5,0.5] -> -10*log10(1/4); raw struct, 4 pixels
  BScan r4;
  r4.height = 1;
  r4.width = 4;
  r4.pixels = {1.0f, 1.0f, 1.0f, 1.0f};
  BScan t4 = r4;
  t4.pixels = {1.5f, 0.5f, 1.5f, 0.5f};
  CHECK(std::abs(snr_db(r4, t4) - (-10.0 * std::log10(0.25))) < 1e-9);
  CHECK(snr_db(r4, t4) == Catch::Approx(6.0205999).epsilon(1e-6));

  // all-zero reference is undefined
  BScan z = make_bscan(16, 16, 0.0f);
  CHECK_THROWS_AS(snr_db(z, a), DataError);
}

TEST_CASE("snr matches oracle on random inputs") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    BScan ref = raw_scan(8 + seed % 9, 9 + seed % 7, seed * 2 + 1);
    BScan test = raw_scan(ref.height, ref.width, seed * 2 + 2);
    double got = snr_db(ref, test);
    double want = oracle_snr_db(ref, test);
    CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("snr invariant under simultaneous scaling") {
  BScan ref = random_scan(20, 24, 3);
  BScan test = random_scan(20, 24, 4);
  double base = snr_db(ref, test);
  // power-of-two factors scale float pixels exactly
  for (float c : {0.25f, 0.5f, 2.0f}) {
    BScan r2 = ref, t2 = test;
    for (auto& v : r2.pixels) v *= c;
    for (auto& v : t2.pixels) v *= c;
    CHECK(std::abs(snr_db(r2, t2) - base) < 1e-9);
  }
}

TEST_CASE("snr strictly decreases as noise sigma grows") {
  BScan clean = random_scan(32, 32, 9);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {0.01, 0.02, 0.05, 0.1, 0.2, 0.4}) {
    phantom::NoiseSpec spec;
    spec.sigma = sigma;
    spec.seed = 123;  // same draws, scaled: monotone by construction
    double snr = snr_db(clean, phantom::add_noise(clean, spec));
    CHECK(snr < prev);
    prev = snr;
  }
}

// ---------------------------------------------------------------------------
// CNR

namespace {

// Fills an 8x8 ROI with two alternating values (population stats are exact).
void fill_roi(BScan& s, const Roi& roi, float lo, float hi) {
  for (int r = roi.top; r < roi.top + roi.height; ++r)
    for (int c = roi.left; c < roi.left + roi.width; ++c)
      s.at(r, c) = ((r + c) % 2 == 0) ? lo : hi;
}

}  // namespace

TEST_CASE("cnr closed forms") {
  // mu_r=10, mu_b=2, var_r=var_b=4 (standard) -> 8/sqrt(0.5*8) = 4.0
  BScan s;
  s.height = 32;
  s.width = 32;
  s.pixels.assign(32 * 32, 0.0f);
  Roi tissue{12, 12, 8, 8};
  Roi bg{0, 0, 8, 8};
  fill_roi(s, tissue, 8.0f, 12.0f);  // mean 10, var 4
  fill_roi(s, bg, 0.0f, 4.0f);       // mean 2, var 4
  CHECK(std::abs(cnr(s, {tissue}, bg, CnrVariant::standard) - 4.0) < 1e-9);

  // distinct variances separate the two variants
  fill_roi(s, bg, 1.0f, 3.0f);  // mean 2, var 1
  CHECK(std::abs(cnr(s, {tissue}, bg, CnrVariant::standard) - 8.0 / std::sqrt(2.5)) < 1e-9);
  CHECK(std::abs(cnr(s, {tissue}, bg, CnrVariant::paper_literal) - 8.0) < 1e-9);

  // mu_r == mu_b -> 0 regardless of variances
  fill_roi(s, tissue, 1.0f, 3.0f);
  CHECK(cnr(s, {tissue}, bg, CnrVariant::standard) == 0.0);

  // zero denominator -> +inf sentinel
  BScan flat = make_bscan(32, 32, 0.25f);
  for (int r = 12; r < 20; ++r)
    for (int c = 12; c < 20; ++c) flat.at(r, c) = 0.75f;
  CHECK(std::isinf(cnr(flat, {tissue}, bg, CnrVariant::standard)));
}

TEST_CASE("cnr matches oracle on random ROIs") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    BScan s = random_scan(40, 40, 1000 + seed);
    Rng rng(seed);
    std::vector<Roi> rois;
    for (int i = 0; i < 3; ++i)
      rois.push_back(Roi{rng.uniform_int(0, 32), rng.uniform_int(0, 32), 8, 8});
    Roi bg{0, 0, 8, 40};
    for (CnrVariant variant : {CnrVariant::standard, CnrVariant::paper_literal}) {
      double got = cnr(s, rois, bg, variant);
      double want = oracle_cnr(s, rois, bg, variant);
      CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("cnr standard mode invariant under constant offset") {
  BScan s = random_scan(40, 40, 12);
  for (auto& v : s.pixels) v = 0.2f + 0.5f * v;  // keep room for the shift
  std::vector<Roi> rois = {Roi{20, 4, 8, 8}, Roi{28, 20, 8, 8}};
  Roi bg{0, 0, 8, 40};
  double base = cnr(s, rois, bg, CnrVariant::standard);
  BScan shifted = s;
  for (auto& v : shifted.pixels) v += 0.25f;
  CHECK(std::abs(cnr(shifted, rois, bg, CnrVariant::standard) - base) < 1e-6);
}

// ---------------------------------------------------------------------------
// SSIM / MSSIM

TEST_CASE("ssim closed forms") {
  // constant windows 100 vs 50 on the 0-255 scale: variances cancel to C2/C2
  std::vector<double> x(64, 100.0), y(64, 50.0);
  double want = 10006.5 / 12506.5;
  CHECK(std::abs(ssim_window_raw(x.data(), y.data(), 64) - want) < 1e-9);
  CHECK(ssim_window_raw(x.data(), y.data(), 64) == Catch::Approx(0.80011).epsilon(1e-4));

  // y == x -> exactly 1
  BScan a = random_scan(16, 16, 31);
  CHECK(ssim_window(a, a, Roi{2, 3, 8, 8}) == 1.0);

  // [0,1]-scale wrapper maps through x255: 0.5 and 0.25 are exact in float
  BScan half = make_bscan(16, 16, 0.5f);
  BScan quarter = make_bscan(16, 16, 0.25f);
  double mx = 127.5, my = 63.75;
  double expect = (2.0 * mx * my + 6.50) * 58.52 / ((mx * mx + my * my + 6.50) * 58.52);
  CHECK(std::abs(ssim_window(half, quarter, Roi{0, 0, 8, 8}) - expect) < 1e-12);
}

TEST_CASE("ssim matches oracle on random windows") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(64), y(64);
    for (auto& v : x) v = 255.0 * rng.uniform();
    for (auto& v : y) v = 255.0 * rng.uniform();
    double got = ssim_window_raw(x.data(), y.data(), 64);
    double want = oracle_ssim(x, y);
    CHECK(std::abs(got - want) <= 1e-12);
  }
}

TEST_CASE("mssim closed and degenerate cases") {
  BScan a = random_scan(24, 20, 40);
  CHECK(mssim(a, a) == 1.0);

  // 8x8 image: single window
  BScan b8 = raw_scan(8, 8, 41);
  BScan c8 = raw_scan(8, 8, 42);
  CHECK(mssim(b8, c8) == ssim_window(b8, c8, Roi{0, 0, 8, 8}));

  BScan tiny;
  tiny.height = 4;
  tiny.width = 4;
  tiny.pixels.assign(16, 0.5f);
  CHECK_THROWS_AS(mssim(tiny, tiny), DataError);
}

TEST_CASE("mssim matches exhaustive window oracle") {
  // 16x16 -> 81 windows
  BScan x = random_scan(16, 16, 50);
  BScan y = random_scan(16, 16, 51);
  CHECK(std::abs(mssim(x, y) - oracle_mssim(x, y)) <= 1e-12);

  for (uint64_t seed = 0; seed < 20; ++seed) {
    BScan a = raw_scan(10 + seed % 8, 9 + seed % 9, 300 + 2 * seed);
    BScan b = raw_scan(a.height, a.width, 301 + 2 * seed);
    CHECK(std::abs(mssim(a, b) - oracle_mssim(a, b)) <= 1e-12);
    CHECK(std::abs(mssim(a, b) - mssim(b, a)) <= 1e-12);  // symmetry
  }
}

// ---------------------------------------------------------------------------
// Tissue ROI sampling

TEST_CASE("two-band phantom: tissue ROIs confined to their band") {
  phantom::PhantomConfig pc;
  pc.height = 64;
  pc.width = 64;
  pc.boundary_fractions = {0.5};
  pc.intensities = {0.2, 0.8};
  pc.texture_sigma = 0.0;
  pc.cup = false;
  pc.curve_amplitude = 0.0;
  pc.seed = 3;
  auto out = phantom::generate_phantom(pc);
  TissueRoiSet set = sample_tissue_rois(out.labels, 99, 25, 1);
  REQUIRE(set.per_tissue.count(1) == 1);
  CHECK(set.per_tissue[1].size() == 25);
  for (const Roi& roi : set.per_tissue[1]) {
    for (int r = roi.top; r < roi.top + roi.height; ++r)
      for (int c = roi.left; c < roi.left + roi.width; ++c) CHECK(out.labels.at(r, c) == 1);
    CHECK(roi.top >= 32);  // strictly inside the lower band
  }
  CHECK(set.background.top == 0);
  CHECK(set.background.height == 20);
  CHECK(set.background.width == 64);
}

TEST_CASE("roi sampling is deterministic per seed") {
  phantom::PhantomConfig pc;
  pc.height = 128;
  pc.width = 128;
  pc.seed = 17;
  auto out = phantom::generate_phantom(pc);
  TissueRoiSet a = sample_tissue_rois(out.labels, 5);
  TissueRoiSet b = sample_tissue_rois(out.labels, 5);
  TissueRoiSet c = sample_tissue_rois(out.labels, 6);
  REQUIRE(a.per_tissue.size() == b.per_tissue.size());
  bool all_equal = true, any_diff_seed = false;
  for (const auto& [label, rois] : a.per_tissue) {
    for (size_t i = 0; i < rois.size(); ++i) {
      const Roi &ra = rois[i], &rb = b.per_tissue[label][i], &rc = c.per_tissue[label][i];
      all_equal &= ra.top == rb.top && ra.left == rb.left;
      any_diff_seed |= ra.top != rc.top || ra.left != rc.left;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_seed);
}

TEST_CASE("default phantom yields label-pure ROIs for all seven tissues") {
  phantom::PhantomConfig pc;
  pc.height = 128;
  pc.width = 128;
  pc.seed = 23;
  auto out = phantom::generate_phantom(pc);
  TissueRoiSet set = sample_tissue_rois(out.labels, 77);
  CHECK(set.absent_tissues.empty());
  for (int label = 1; label <= 7; ++label) {
    REQUIRE(set.per_tissue.count(label) == 1);
    CHECK(set.per_tissue[label].size() >= 20u);  // thin bands may cap below 25
    for (const Roi& roi : set.per_tissue[label])
      for (int r = roi.top; r < roi.top + roi.height; ++r)
        for (int c = roi.left; c < roi.left + roi.width; ++c)
          REQUIRE(out.labels.at(r, c) == label);
  }
}

// ---------------------------------------------------------------------------
// evaluate + report

TEST_CASE("evaluate with identity denoiser duplicates noisy metrics") {
  phantom::PhantomConfig pc;
  pc.height = 64;
  pc.width = 64;
  pc.seed = 8;
  pc.boundary_fractions = {0.35, 0.65};
  pc.intensities = {0.1, 0.7, 0.4};
  auto ph = phantom::generate_phantom(pc);
  phantom::NoiseSpec ns;
  ns.sigma = 0.2;
  ns.seed = 4;

  EvalInput in;
  in.scan_id = "t0";
  in.clean = ph.scan;
  in.noisy = phantom::add_noise(ph.scan, ns);
  in.denoised = in.noisy;  // identity pass-through
  in.labels = &ph.labels;
  RoiPolicy policy;
  policy.seed = 11;
  MetricsReport rep = evaluate({in}, policy);
  REQUIRE(rep.rows.size() == 3);
  const MetricsRow& noisy = rep.rows[0];
  const MetricsRow& denoised = rep.rows[1];
  const MetricsRow& clean = rep.rows[2];
  CHECK(noisy.kind == "noisy");
  CHECK(denoised.kind == "denoised");
  CHECK(denoised.snr_db == noisy.snr_db);
  CHECK(denoised.mssim == noisy.mssim);
  for (size_t t = 0; t < 7; ++t) {
    if (std::isnan(noisy.cnr[t]))
      CHECK(std::isnan(denoised.cnr[t]));
    else
      CHECK(denoised.cnr[t] == noisy.cnr[t]);
  }
  // clean-vs-clean rows: SNR inf sentinel, MSSIM exactly 1
  CHECK(std::isinf(clean.snr_db));
  CHECK(clean.mssim == 1.0);
}

TEST_CASE("report save validates aggregates and round-trips") {
  fs::path dir = fs::temp_directory_path() / "octdn_test_metrics";
  fs::create_directories(dir);
  MetricsReport rep;
  for (int i = 0; i < 4; ++i) {
    MetricsRow r;
    r.scan_id = "s" + std::to_string(i);
    r.kind = i % 2 == 0 ? "noisy" : "denoised";
    r.snr_db = 3.0 + i;
    r.mssim = 0.1 * i;
    for (size_t t = 0; t < 7; ++t) r.cnr[t] = 1.0 + 0.5 * i + 0.1 * static_cast<double>(t);
    rep.rows.push_back(r);
  }
  rep.aggregates = compute_aggregates(rep.rows);
  fs::path p = dir / "report.csv";
  save_report(rep, p);
  MetricsReport back = load_report(p);
  REQUIRE(back.rows.size() == rep.rows.size());
  REQUIRE(back.aggregates.size() == rep.aggregates.size());
  for (size_t i = 0; i < rep.aggregates.size(); ++i) {
    CHECK(back.aggregates[i].kind == rep.aggregates[i].kind);
    CHECK(back.aggregates[i].metric == rep.aggregates[i].metric);
    CHECK(std::abs(back.aggregates[i].mean - rep.aggregates[i].mean) < 1e-9);
    CHECK(std::abs(back.aggregates[i].sd - rep.aggregates[i].sd) < 1e-9);
  }
  // recompute from re-loaded rows matches the emitted aggregates
  std::vector<Aggregate> again = compute_aggregates(back.rows);
  for (size_t i = 0; i < again.size(); ++i) {
    CHECK(values_equal(again[i].mean, back.aggregates[i].mean, 1e-9));
    CHECK(values_equal(again[i].sd, back.aggregates[i].sd, 1e-9));
  }

  // tampered aggregates are rejected on save
  rep.aggregates[0].mean += 0.5;
  CHECK_THROWS_AS(save_report(rep, dir / "bad.csv"), NumericError);
}
