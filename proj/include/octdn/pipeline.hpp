#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "octdn/augment.hpp"
#include "octdn/config.hpp"
#include "octdn/image.hpp"
#include "octdn/manifest.hpp"
#include "octdn/metrics.hpp"
#include "octdn/nn/network.hpp"
#include "octdn/phantom.hpp"
#include "octdn/training.hpp"

namespace octdn::pipe {

namespace fs = std::filesystem;

struct OutPaths {
  fs::path root, phantom_dir, augment_dir, train_dir, denoise_dir, eval_dir;

  static OutPaths at(const fs::path& root) {
    return OutPaths{root,         root / "phantom", root / "augment",
                    root / "train", root / "denoise", root / "eval"};
  }
};

inline OutPaths out_paths(const cfg::RunConfig& rc) {
  return OutPaths::at(fs::path(rc.str("global", "out")));
}

inline std::string scan_file_id(const std::string& subject, Eye eye, int index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%c_%03d", subject.c_str(), eye == Eye::left ? 'L' : 'R',
                index);
  return buf;
}

inline fs::path label_path_for(const fs::path& clean_path) {
  fs::path p = clean_path;
  p.replace_extension();
  p += ".labels.pgm";
  return p;
}

// ---------------------------------------------------------------------------
// phantom: synthesize clean scans + label maps + a manifest skeleton with a
// subject-disjoint train/test split.

struct PhantomRun {
  int scans = 0, train = 0, test = 0;
  fs::path manifest_path;
};

inline phantom::PhantomConfig phantom_config_for(const cfg::RunConfig& rc,
                                                 const std::string& subject, int subject_idx,
                                                 Eye eye, int scan_idx) {
  phantom::PhantomConfig pc;
  pc.height = static_cast<int>(rc.integer("phantom", "height"));
  pc.width = static_cast<int>(rc.integer("phantom", "width"));
  pc.texture_sigma = rc.number("phantom", "texture_sigma");
  pc.curve_amplitude = rc.number("phantom", "curve_amplitude");
  pc.cup = rc.boolean("phantom", "cup");
  pc.cup_depth_frac = rc.number("phantom", "cup_depth");
  pc.cup_width_frac = rc.number("phantom", "cup_width");
  uint64_t seed = rc.u64("global", "seed");

  int bands = static_cast<int>(rc.integer("phantom", "bands"));
  if (bands < 2) throw ConfigError("phantom.bands must be >= 2");
  if (bands == 8) {
    pc.boundary_fractions = phantom::default_boundary_fractions();
    pc.intensities = phantom::default_intensities();
  } else {
    const std::vector<double> tissue = {0.72, 0.38, 0.55, 0.85, 0.45, 0.65, 0.58};
    pc.intensities = {0.05};
    for (int i = 0; i < bands - 1; ++i) pc.intensities.push_back(tissue[i % tissue.size()]);
    for (int i = 1; i < bands; ++i)
      pc.boundary_fractions.push_back(0.18 + (0.85 - 0.18) * (i - 1) / std::max(1, bands - 1));
  }
  // mild per-subject anatomy variation
  Rng subject_rng(derive_seed(seed, 0x5abULL, static_cast<uint64_t>(subject_idx)));
  for (double& f : pc.boundary_fractions) f += 0.01 * subject_rng.normal();
  for (size_t i = 1; i < pc.intensities.size(); ++i)
    pc.intensities[i] = std::clamp(pc.intensities[i] + 0.03 * subject_rng.normal(), 0.02, 0.98);

  int eye_idx = eye == Eye::left ? 0 : 1;
  pc.seed = derive_seed(seed, static_cast<uint64_t>(subject_idx),
                        static_cast<uint64_t>(eye_idx), static_cast<uint64_t>(scan_idx));
  Rng vessel_rng(derive_seed(pc.seed, 0x0e55ULL));
  int vessel_count = static_cast<int>(rc.integer("phantom", "vessel_count"));
  int vwidth = std::max(2, static_cast<int>(rc.number("phantom", "vessel_width_frac") * pc.width));
  double amin = rc.number("phantom", "vessel_atten_min");
  double amax = rc.number("phantom", "vessel_atten_max");
  for (int v = 0; v < vessel_count; ++v) {
    phantom::VesselShadow shadow;
    shadow.center_col = vessel_rng.uniform_int(pc.width / 10, pc.width - 1 - pc.width / 10);
    shadow.width = vwidth;
    shadow.attenuation = vessel_rng.uniform(amin, amax);
    pc.vessels.push_back(shadow);
  }
  (void)subject;
  return pc;
}

inline PhantomRun run_phantom(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.phantom_dir);
  rc.write_resolved(paths.root / "resolved_phantom.ini");

  int n_subjects = static_cast<int>(rc.integer("phantom", "n_subjects"));
  int scans_per_eye = static_cast<int>(rc.integer("phantom", "scans_per_eye"));
  double train_fraction = rc.number("phantom", "train_fraction");
  if (n_subjects < 1 || scans_per_eye < 1) throw ConfigError("phantom: counts must be >= 1");
  int train_subjects =
      std::clamp(static_cast<int>(std::lround(n_subjects * train_fraction)), 0, n_subjects);

  PhantomRun run;
  DatasetManifest manifest;
  manifest.base_dir = paths.phantom_dir;
  for (int si = 1; si <= n_subjects; ++si) {
    char subject[16];
    std::snprintf(subject, sizeof(subject), "S%02d", si);
    Split split = si <= train_subjects ? Split::train : Split::test;
    for (Eye eye : {Eye::left, Eye::right}) {
      for (int k = 0; k < scans_per_eye; ++k) {
        phantom::PhantomConfig pc = phantom_config_for(rc, subject, si, eye, k);
        phantom::PhantomOutput out = phantom::generate_phantom(pc);
        out.scan.meta = ScanMeta{subject, eye, k, ScanKind::phantom};
        std::string id = scan_file_id(subject, eye, k);
        save_bscan(out.scan, paths.phantom_dir / (id + ".octf"), FileFormat::raw_float);
        save_label_map(out.labels, paths.phantom_dir / (id + ".labels.pgm"));
        ManifestEntry e;
        e.clean_path = id + ".octf";
        e.noisy_path = kNoFile;
        e.subject_id = subject;
        e.eye = eye;
        e.split = split;
        manifest.entries.push_back(e);
        ++run.scans;
        (split == Split::train ? run.train : run.test) += 1;
      }
    }
  }
  run.manifest_path = paths.phantom_dir / "manifest.tsv";
  save_manifest(manifest, run.manifest_path);
  ManifestValidation check = validate_manifest(load_manifest(run.manifest_path));
  if (!check.ok()) throw DataError("phantom manifest failed validation: " + check.problems[0]);
  return run;
}

// ---------------------------------------------------------------------------
// augment: expand the train split, give every test scan a single noisy
// counterpart, and write the final manifest + per-pair metadata sidecar.

struct AugmentRun {
  double sigma = 0.0;
  int train_pairs = 0, test_pairs = 0;
  fs::path manifest_path, sidecar_path;
};

inline AugmentRun run_augment(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.augment_dir);
  rc.write_resolved(paths.root / "resolved_augment.ini");

  DatasetManifest phantoms = load_manifest(paths.phantom_dir / "manifest.tsv");
  uint64_t seed = rc.u64("global", "seed");

  augment::AugmentationSpec spec;
  spec.elastic.grid_spacing = static_cast<int>(rc.integer("augment", "elastic_grid"));
  spec.elastic.displacement_sigma = rc.number("augment", "elastic_sigma");
  spec.rotation_degrees = rc.number("augment", "rotation_deg");
  spec.occlusion.count = static_cast<int>(rc.integer("augment", "occl_count"));
  spec.occlusion.patch_height = static_cast<int>(rc.integer("augment", "occl_height"));
  spec.occlusion.patch_width = static_cast<int>(rc.integer("augment", "occl_width"));
  spec.occlusion.factor_min = rc.number("augment", "occl_factor_min");
  spec.occlusion.factor_max = rc.number("augment", "occl_factor_max");
  spec.seed = derive_seed(seed, 0xa0ULL);

  phantom::NoiseSpec noise;
  noise.mu = 0.0;
  noise.clip = rc.boolean("augment", "noise_clip");
  noise.seed = derive_seed(seed, 0x0153ULL);

  std::vector<augment::ExpandSource> train_sources;
  std::vector<const ManifestEntry*> test_rows;
  for (const auto& e : phantoms.entries) {
    if (e.split == Split::train) {
      augment::ExpandSource src;
      src.clean_file = phantoms.resolve(e.clean_path);
      src.scan_id = fs::path(e.clean_path).stem().string();
      src.subject_id = e.subject_id;
      src.eye = e.eye;
      src.split = e.split;
      train_sources.push_back(std::move(src));
    } else {
      test_rows.push_back(&e);
    }
  }

  const std::string mode = rc.str("augment", "noise_mode");
  AugmentRun run;
  if (mode == "literal") {
    run.sigma = 1.0;
  } else if (mode == "fixed") {
    run.sigma = rc.number("augment", "noise_sigma");
  } else if (mode == "calibrated") {
    std::vector<BScan> clean;
    clean.reserve(train_sources.size());
    for (const auto& s : train_sources) clean.push_back(load_bscan(s.clean_file));
    run.sigma =
        phantom::calibrate_noise_sigma(clean, rc.number("augment", "noise_target_snr_db"), noise);
  } else {
    throw ConfigError("augment.noise_mode must be literal, fixed, or calibrated");
  }
  noise.sigma = run.sigma;

  run.sidecar_path = paths.augment_dir / "pairs_meta.tsv";
  std::ofstream sidecar(run.sidecar_path);
  if (!sidecar) throw DataError("cannot write " + run.sidecar_path.string());
  char sigma_txt[40];
  std::snprintf(sigma_txt, sizeof(sigma_txt), "%.17g", run.sigma);
  sidecar << "# noise_mode = " << mode << "\n# noise_sigma = " << sigma_txt << "\n";
  sidecar << "# clean\tnoisy\tsubject\teye\tsplit\tvariant\ttransforms\tnoise_sigma\tnoise_seed\n";

  int factor = static_cast<int>(rc.integer("augment", "factor"));
  augment::ExpandResult expanded =
      augment::expand_dataset(train_sources, spec, noise, factor, paths.augment_dir, sidecar);
  run.train_pairs = expanded.pairs;

  DatasetManifest final_manifest = expanded.manifest;
  for (const ManifestEntry* e : test_rows) {
    BScan clean = load_bscan(phantoms.resolve(e->clean_path));
    std::string id = fs::path(e->clean_path).stem().string();
    phantom::NoiseSpec ns = noise;
    ns.seed = derive_seed(noise.seed, hash64(id), 0, 0x7e57ULL);
    BScan noisy = phantom::add_noise(clean, ns);
    std::string noisy_name = id + "_v00n.octf";
    save_bscan(noisy, paths.augment_dir / noisy_name, FileFormat::raw_float);
    ManifestEntry out = *e;
    out.clean_path = "../phantom/" + e->clean_path;
    out.noisy_path = noisy_name;
    final_manifest.entries.push_back(out);
    sidecar << out.clean_path << '\t' << noisy_name << '\t' << e->subject_id << '\t'
            << to_string(e->eye) << '\t' << to_string(e->split) << "\t0\tnone\t" << sigma_txt
            << '\t' << ns.seed << '\n';
    ++run.test_pairs;
  }
  run.manifest_path = paths.augment_dir / "manifest.tsv";
  save_manifest(final_manifest, run.manifest_path);

  std::ofstream meta(paths.augment_dir / "meta.ini");
  meta << "noise_mode = " << mode << "\nnoise_sigma = " << sigma_txt
       << "\ntrain_pairs = " << run.train_pairs << "\ntest_pairs = " << run.test_pairs << "\n";
  return run;
}

// ---------------------------------------------------------------------------
// train / denoise / eval

inline nn::NetworkConfig network_config(const cfg::RunConfig& rc) {
  nn::NetworkConfig nc;
  nc.base_filters = static_cast<int>(rc.integer("network", "base_filters"));
  nc.width_scale = rc.number("network", "width_scale");
  nc.levels = static_cast<int>(rc.integer("network", "levels"));
  nc.kernel = static_cast<int>(rc.integer("network", "kernel"));
  nc.skip_mode = nn::skip_mode_from_string(rc.str("network", "skip_mode"));
  return nc;
}

inline train::TrainResult run_train(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.train_dir);
  rc.write_resolved(paths.root / "resolved_train.ini");

  DatasetManifest manifest = load_manifest(paths.augment_dir / "manifest.tsv");
  train::TrainConfig tc;
  tc.learning_rate = rc.number("train", "learning_rate");
  tc.beta1 = rc.number("train", "beta1");
  tc.beta2 = rc.number("train", "beta2");
  tc.epsilon = rc.number("train", "epsilon");
  tc.batch_size = static_cast<int>(rc.integer("train", "batch_size"));
  tc.epochs = static_cast<int>(rc.integer("train", "epochs"));
  tc.checkpoint_every = static_cast<int>(rc.integer("train", "checkpoint_every"));
  tc.patch_height = static_cast<int>(rc.integer("train", "patch_height"));
  tc.patch_width = static_cast<int>(rc.integer("train", "patch_width"));
  tc.seed = rc.u64("global", "seed");

  train::TrainIo io;
  io.log_path = paths.train_dir / "train_log.csv";
  io.ckpt_dir = paths.train_dir;
  return train::train(manifest, network_config(rc), tc, io);
}

struct DenoiseRun {
  int scans = 0;
  double mean_ms = 0.0;
};

inline DenoiseRun run_denoise(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.denoise_dir);
  rc.write_resolved(paths.root / "resolved_denoise.ini");

  DatasetManifest manifest = load_manifest(paths.augment_dir / "manifest.tsv");
  nn::GraphDesc graph = nn::build_network(network_config(rc));
  nn::WeightStore<float> ws = nn::make_weights<float>(graph);
  std::string ckpt = rc.str("denoise", "checkpoint");
  fs::path ckpt_path = ckpt.empty() ? paths.train_dir / "ckpt_final.octw" : fs::path(ckpt);
  nn::load_weights(graph, ws, ckpt_path);

  DenoiseRun run;
  double total_ms = 0.0;
  for (const auto& e : manifest.entries) {
    if (e.split != Split::test) continue;
    BScan noisy = load_bscan(manifest.resolve(e.noisy_path));
    auto t0 = std::chrono::steady_clock::now();
    BScan denoised = nn::denoise(graph, ws, noisy);
    total_ms +=
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    fs::path out = paths.denoise_dir / (fs::path(e.noisy_path).filename().string() + ".den");
    save_bscan(denoised, out, FileFormat::raw_float);
    ++run.scans;
  }
  if (run.scans == 0) throw DataError("denoise: no test rows in manifest");
  run.mean_ms = total_ms / run.scans;
  std::ofstream timing(paths.denoise_dir / "timing.txt");
  timing << "scans = " << run.scans << "\nmean_ms_per_scan = " << run.mean_ms << "\n";
  return run;
}

namespace detail {

inline void write_montage(const BScan& clean, const BScan& noisy, const BScan& denoised,
                          const fs::path& path) {
  const int sep = 4;
  BScan wide = make_bscan(clean.height, clean.width * 3 + sep * 2, 0.0f);
  for (int r = 0; r < clean.height; ++r) {
    for (int c = 0; c < clean.width; ++c) {
      wide.at(r, c) = clean.at(r, c);
      wide.at(r, clean.width + sep + c) = noisy.at(r, c);
      wide.at(r, 2 * (clean.width + sep) + c) = denoised.at(r, c);
    }
  }
  save_bscan(wide, path, FileFormat::gray8);
}

inline void write_bar_svg(const fs::path& path, const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars) {
  const int width = 420, height = 300, base = 250, left = 60;
  double vmax = 1e-12;
  for (const auto& [label, v] : bars)
    if (std::isfinite(v)) vmax = std::max(vmax, std::abs(v));
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "  <text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        "font-family=\"sans-serif\">"
     << title << "</text>\n";
  os << "  <line x1=\"" << left - 10 << "\" y1=\"" << base << "\" x2=\"" << width - 20
     << "\" y2=\"" << base << "\" stroke=\"black\"/>\n";
  int slot = (width - left - 20) / std::max<size_t>(1, bars.size());
  int bw = slot * 2 / 3;
  for (size_t i = 0; i < bars.size(); ++i) {
    const auto& [label, v] = bars[i];
    int x = left + static_cast<int>(i) * slot;
    char txt[40];
    if (std::isfinite(v)) {
      int h = static_cast<int>(std::lround(std::abs(v) / vmax * 190.0));
      std::snprintf(txt, sizeof(txt), "%.3g", v);
      os << "  <rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << bw << "\" height=\""
         << h << "\" fill=\"#4878a8\"/>\n";
      os << "  <text x=\"" << x + bw / 2 << "\" y=\"" << base - h - 6
         << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << txt
         << "</text>\n";
    } else {
      std::snprintf(txt, sizeof(txt), "%s", v > 0 ? "inf" : "n/a");
      os << "  <text x=\"" << x + bw / 2 << "\" y=\"" << base - 10
         << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << txt
         << "</text>\n";
    }
    os << "  <text x=\"" << x + bw / 2 << "\" y=\"" << base + 18
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << label
       << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace detail

struct EvalRun {
  fs::path report_path;
  metrics::MetricsReport report;
};

inline EvalRun run_eval(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.eval_dir);
  rc.write_resolved(paths.root / "resolved_eval.ini");

  DatasetManifest manifest = load_manifest(paths.augment_dir / "manifest.tsv");
  metrics::RoiPolicy policy;
  policy.seed = derive_seed(rc.u64("global", "seed"), 0x401ULL);
  policy.rois_per_tissue = static_cast<int>(rc.integer("metrics", "rois_per_tissue"));
  std::string roi_file = rc.str("metrics", "roi_file");
  if (!roi_file.empty()) policy.roi_file = roi_file;
  metrics::CnrVariant variant = metrics::cnr_variant_from_string(rc.str("metrics", "cnr_variant"));

  std::vector<metrics::EvalInput> inputs;
  std::vector<LabelMap> labels;
  labels.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    if (e.split != Split::test) continue;
    metrics::EvalInput in;
    fs::path clean_path = manifest.resolve(e.clean_path);
    in.scan_id = clean_path.stem().string();
    in.clean = load_bscan(clean_path);
    in.noisy = load_bscan(manifest.resolve(e.noisy_path));
    in.denoised =
        load_bscan(paths.denoise_dir / (fs::path(e.noisy_path).filename().string() + ".den"));
    if (policy.roi_file.empty()) {
      labels.push_back(load_label_map(label_path_for(clean_path)));
      in.labels = &labels.back();
    }
    inputs.push_back(std::move(in));
  }
  if (inputs.empty()) throw DataError("eval: no test rows in manifest");

  EvalRun run;
  run.report = metrics::evaluate(inputs, policy, variant);
  run.report_path = paths.eval_dir / "report.csv";
  metrics::save_report(run.report, run.report_path);

  int montage_count = static_cast<int>(rc.integer("metrics", "montage_count"));
  for (size_t i = 0; i < inputs.size() && static_cast<int>(i) < montage_count; ++i) {
    detail::write_montage(inputs[i].clean, inputs[i].noisy, inputs[i].denoised,
                          paths.eval_dir / ("montage_" + inputs[i].scan_id + ".pgm"));
  }
  for (const char* metric : {"snr_db", "mssim", "cnr_all"}) {
    std::vector<std::pair<std::string, double>> bars;
    for (const char* kind : {"noisy", "denoised", "clean"})
      bars.emplace_back(kind, metrics::aggregate_value(run.report, kind, metric));
    std::string name = metric == std::string("snr_db") ? "snr"
                       : metric == std::string("mssim") ? "mssim"
                                                        : "cnr";
    detail::write_bar_svg(paths.eval_dir / (name + ".svg"), std::string("mean ") + metric,
                          bars);
  }
  return run;
}

inline train::GradCheckReport run_gradcheck(const cfg::RunConfig& rc) {
  OutPaths paths = out_paths(rc);
  fs::create_directories(paths.root);
  rc.write_resolved(paths.root / "resolved_gradcheck.ini");
  nn::NetworkConfig nc;
  nc.base_filters = static_cast<int>(rc.integer("network", "base_filters"));
  nc.width_scale = rc.number("gradcheck", "width_scale");
  nc.levels = static_cast<int>(rc.integer("gradcheck", "levels"));
  int size = static_cast<int>(rc.integer("gradcheck", "size"));
  return train::gradient_check(nc, rc.number("gradcheck", "tolerance"),
                               rc.u64("global", "seed"),
                               static_cast<size_t>(rc.integer("gradcheck", "sample")),
                               rc.boolean("gradcheck", "corrupt"),
                               static_cast<int>(rc.integer("gradcheck", "batch")), size, size);
}

}  // namespace octdn::pipe
