#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "octdn/manifest.hpp"
#include "octdn/nn/network.hpp"
#include "octdn/rng.hpp"

namespace octdn::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 4;
  int epochs = 0;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // steps between checkpoints; 0 = final only
  int patch_height = 0;      // 0 = train on full images
  int patch_width = 0;
};

inline void validate_config(const TrainConfig& c) {
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(c.epsilon > 0)) throw ConfigError("adam epsilon must be > 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if ((c.patch_height == 0) != (c.patch_width == 0))
    throw ConfigError("patch_height and patch_width must be set together");
}

// ---------------------------------------------------------------------------
// Mean absolute error.

template <typename T>
T mae_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& target) {
  if (!pred.same_shape(target)) throw NumericError("mae_loss: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]));
  return static_cast<T>(acc / static_cast<double>(pred.size()));
}

// dL/dpred = sign(pred - target) / N, with sign(0) = 0.
template <typename T>
nn::Tensor<T> mae_grad(const nn::Tensor<T>& pred, const nn::Tensor<T>& target) {
  if (!pred.same_shape(target)) throw NumericError("mae_grad: shape mismatch");
  nn::Tensor<T> g(pred.n, pred.c, pred.h, pred.w);
  T inv = static_cast<T>(1.0 / static_cast<double>(pred.size()));
  for (size_t i = 0; i < pred.size(); ++i) {
    T d = pred.v[i] - target.v[i];
    g.v[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam with bias-corrected moments.

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  long long t = 0;
};

template <typename T>
AdamState<T> make_adam(const nn::GraphDesc& g) {
  AdamState<T> s;
  s.m.reserve(g.params.size());
  s.v.reserve(g.params.size());
  for (const auto& p : g.params) {
    s.m.emplace_back(p.size(), T(0));
    s.v.emplace_back(p.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(const nn::GraphDesc& g, nn::WeightStore<T>& ws, const nn::GradStore<T>& grads,
               AdamState<T>& state, const TrainConfig& cfg) {
  ++state.t;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.t)));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.t)));
  for (size_t pi = 0; pi < g.params.size(); ++pi) {
    if (!g.params[pi].trainable) continue;
    const std::vector<T>& gr = grads.g[pi];
    std::vector<T>& w = ws.values[pi];
    std::vector<T>& m = state.m[pi];
    std::vector<T>& v = state.v[pi];
    for (size_t j = 0; j < w.size(); ++j) {
      T gj = gr[j];
      if (!std::isfinite(static_cast<double>(gj)))
        throw NumericError("non-finite gradient in " + g.params[pi].name);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      T mhat = m[j] / bc1;
      T vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainLogRow {
  long long step = 0;
  int epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainIo {
  std::filesystem::path log_path;  // empty -> in-memory only
  std::filesystem::path ckpt_dir;  // empty -> no checkpoints
  std::string ckpt_prefix = "ckpt";
  std::function<void(int, const std::vector<int>&)> on_epoch;  // (epoch, visit order)
};

struct TrainResult {
  nn::WeightStore<float> weights;
  std::vector<TrainLogRow> log;
  long long steps = 0;
  std::filesystem::path final_checkpoint;
};

namespace detail {

struct Pair {
  nn::Tensor<float> input;   // noisy, mapped to [-1,1]
  nn::Tensor<float> target;  // clean, mapped to [-1,1]
};

inline void write_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training log " + path.string());
  os << "step,epoch,loss,wall_ms\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g,%.3f\n", r.step, r.epoch, r.loss, r.wall_ms);
    os << buf;
  }
}

inline void write_sidecar(const std::filesystem::path& path, const TrainConfig& cfg,
                          long long step, const Rng& rng) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint sidecar " + path.string());
  os << "learning_rate = " << cfg.learning_rate << "\n";
  os << "beta1 = " << cfg.beta1 << "\n";
  os << "beta2 = " << cfg.beta2 << "\n";
  os << "epsilon = " << cfg.epsilon << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  os << "patch_height = " << cfg.patch_height << "\n";
  os << "patch_width = " << cfg.patch_width << "\n";
  os << "optimizer_step = " << step << "\n";
  os << "rng_state_hex = " << rng.state_hex() << "\n";
}

}  // namespace detail

// Iterates shuffled mini-batches of (noisy -> input, clean -> target) pairs.
// Aborts (keeping the last written checkpoint) on a non-finite loss.
inline TrainResult train(const DatasetManifest& manifest, const nn::NetworkConfig& netcfg,
                         const TrainConfig& tcfg, const TrainIo& io = {}) {
  validate_config(tcfg);
  std::vector<detail::Pair> pairs;
  for (const auto& e : manifest.entries) {
    if (e.split != Split::train) continue;
    if (e.noisy_path == kNoFile) throw DataError("train: entry without a noisy file");
    detail::Pair p;
    p.input = nn::bscan_to_tensor<float>(load_bscan(manifest.resolve(e.noisy_path)));
    p.target = nn::bscan_to_tensor<float>(load_bscan(manifest.resolve(e.clean_path)));
    if (!p.input.same_shape(p.target)) throw DataError("train: pair dimension mismatch");
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw DataError("train: no training pairs in manifest");

  const bool patches = tcfg.patch_height > 0;
  int bh = patches ? tcfg.patch_height : pairs[0].input.h;
  int bw = patches ? tcfg.patch_width : pairs[0].input.w;
  int div = nn::pow2(netcfg.levels);
  if (bh % div != 0 || bw % div != 0)
    throw ConfigError("training tile dims must be divisible by 2^levels");
  if (!patches) {
    for (const auto& p : pairs)
      if (p.input.h != bh || p.input.w != bw)
        throw DataError("train: mixed image sizes need patch training");
  }

  nn::GraphDesc graph = nn::build_network(netcfg);
  TrainResult result;
  result.weights = nn::init_weights<float>(graph, tcfg.seed);
  AdamState<float> adam = make_adam<float>(graph);
  nn::GradStore<float> grads = nn::make_grads<float>(graph);
  Rng rng(derive_seed(tcfg.seed, 0x7a11ULL));

  auto checkpoint = [&](const std::string& tag) -> std::filesystem::path {
    if (io.ckpt_dir.empty()) return {};
    std::filesystem::path p = io.ckpt_dir / (io.ckpt_prefix + "_" + tag + ".octw");
    nn::save_weights(graph, result.weights, p);
    detail::write_sidecar(p.string() + ".meta.txt", tcfg, adam.t, rng);
    return p;
  };

  long long step = 0;
  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (size_t i = 0; i + 1 < order.size(); ++i) {
      int j = rng.uniform_int(static_cast<int>(i), static_cast<int>(order.size()) - 1);
      std::swap(order[i], order[j]);
    }
    if (io.on_epoch) io.on_epoch(epoch, order);
    for (size_t pos = 0; pos < order.size(); pos += tcfg.batch_size) {
      auto t0 = std::chrono::steady_clock::now();
      int bs = static_cast<int>(std::min<size_t>(tcfg.batch_size, order.size() - pos));
      nn::Tensor<float> input(bs, 1, bh, bw), target(bs, 1, bh, bw);
      for (int bi = 0; bi < bs; ++bi) {
        const detail::Pair& p = pairs[order[pos + bi]];
        int r0 = 0, c0 = 0;
        if (patches) {
          r0 = rng.uniform_int(0, p.input.h - bh);
          c0 = rng.uniform_int(0, p.input.w - bw);
        }
        for (int r = 0; r < bh; ++r) {
          const float* si = p.input.v.data() + static_cast<size_t>(r0 + r) * p.input.w + c0;
          const float* st = p.target.v.data() + static_cast<size_t>(r0 + r) * p.target.w + c0;
          std::copy(si, si + bw, &input.at(bi, 0, r, 0));
          std::copy(st, st + bw, &target.at(bi, 0, r, 0));
        }
      }
      nn::Workspace<float> wsp;
      nn::Tensor<float> pred =
          nn::forward(graph, result.weights, input, nn::Mode::train, &wsp);
      double loss = mae_loss(pred, target);
      if (!std::isfinite(loss)) {
        detail::write_log(io.log_path, result.log);
        throw NumericError("training aborted: non-finite loss at step " +
                           std::to_string(step + 1));
      }
      grads.zero();
      nn::backward(graph, result.weights, wsp, mae_grad(pred, target), grads);
      adam_step(graph, result.weights, grads, adam, tcfg);
      ++step;
      double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
      result.log.push_back(TrainLogRow{step, epoch, loss, ms});
      if (tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0) {
        char tag[24];
        std::snprintf(tag, sizeof(tag), "step%06lld", step);
        checkpoint(tag);
      }
    }
  }
  result.steps = step;
  result.final_checkpoint = checkpoint("final");
  detail::write_log(io.log_path, result.log);
  return result;
}

// ---------------------------------------------------------------------------
// Gradient verification: analytic gradients of the MAE loss against central
// finite differences, in 64-bit, on a toy configuration.

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err_small = 0.0;  // where |grad| < 1e-3 (absolute floor regime)
  std::string worst_param;
  size_t checked = 0;
  size_t total = 0;
  double tolerance = 1e-4;
  bool pass = false;
};

inline GradCheckReport gradient_check(const nn::NetworkConfig& netcfg, double tolerance,
                                      uint64_t seed, size_t sample = 0, bool corrupt = false,
                                      int batch = 2, int height = 16, int width = 16) {
  nn::GraphDesc graph = nn::build_network(netcfg);
  nn::WeightStore<double> ws = nn::init_weights<double>(graph, seed);
  Rng rng(derive_seed(seed, 0xfdULL));
  nn::Tensor<double> input(batch, 1, height, width), target(batch, 1, height, width);
  for (auto& x : input.v) x = rng.uniform(-1.0, 1.0);
  for (auto& x : target.v) x = rng.uniform(-1.0, 1.0);

  nn::Workspace<double> wsp;
  nn::Tensor<double> pred =
      nn::forward(graph, ws, input, nn::Mode::train, &wsp, /*update_running=*/false);
  nn::GradStore<double> analytic = nn::make_grads<double>(graph);
  nn::backward(graph, ws, wsp, mae_grad(pred, target), analytic);

  // flattened trainable parameter coordinates
  std::vector<std::pair<int, int>> coords;
  for (size_t pi = 0; pi < graph.params.size(); ++pi) {
    if (!graph.params[pi].trainable) continue;
    for (size_t j = 0; j < graph.params[pi].size(); ++j)
      coords.emplace_back(static_cast<int>(pi), static_cast<int>(j));
  }
  GradCheckReport rep;
  rep.total = coords.size();
  rep.tolerance = tolerance;
  if (sample > 0 && sample < coords.size()) {
    Rng pick(derive_seed(seed, 0x5a3eULL));
    for (size_t i = 0; i < sample; ++i) {
      size_t j = static_cast<size_t>(pick.uniform_int(static_cast<int>(i),
                                                      static_cast<int>(coords.size()) - 1));
      std::swap(coords[i], coords[j]);
    }
    coords.resize(sample);
  }
  rep.checked = coords.size();
  if (corrupt) {
    // fault injection: double the largest checked analytic entry
    size_t best = 0;
    for (size_t i = 1; i < coords.size(); ++i) {
      auto [pi, j] = coords[i];
      auto [bp, bj] = coords[best];
      if (std::abs(analytic.g[pi][j]) > std::abs(analytic.g[bp][bj])) best = i;
    }
    analytic.g[coords[best].first][coords[best].second] *= 2.0;
  }

  const double h = 1e-5;
  double worst_rel = 0.0, worst_abs = 0.0;
  std::string worst_name;
#pragma omp parallel
  {
    double local_rel = 0.0, local_abs = 0.0;
    std::string local_name;
#pragma omp for schedule(dynamic, 16)
    for (long long i = 0; i < static_cast<long long>(coords.size()); ++i) {
      auto [pi, j] = coords[i];
      nn::WeightStore<double> probe = ws;
      double orig = probe.values[pi][j];
      auto* no_ws = static_cast<nn::Workspace<double>*>(nullptr);
      probe.values[pi][j] = orig + h;
      double lp =
          mae_loss(nn::forward(graph, probe, input, nn::Mode::train, no_ws, false), target);
      probe.values[pi][j] = orig - h;
      double lm =
          mae_loss(nn::forward(graph, probe, input, nn::Mode::train, no_ws, false), target);
      double fd = (lp - lm) / (2.0 * h);
      double a = analytic.g[pi][j];
      double mag = std::max(std::abs(a), std::abs(fd));
      if (mag < 1e-3) {
        double abs_err = std::abs(a - fd);
        if (abs_err > local_abs) {
          local_abs = abs_err;
          if (abs_err > 1e-6) local_name = graph.params[pi].name;
        }
      } else {
        double rel = std::abs(a - fd) / mag;
        if (rel > local_rel) {
          local_rel = rel;
          local_name = graph.params[pi].name;
        }
      }
    }
#pragma omp critical
    {
      if (local_rel > worst_rel) {
        worst_rel = local_rel;
        worst_name = local_name;
      }
      if (local_abs > worst_abs) worst_abs = local_abs;
    }
  }
  rep.max_rel_err = worst_rel;
  rep.max_abs_err_small = worst_abs;
  rep.worst_param = worst_name;
  rep.pass = worst_rel < tolerance && worst_abs <= 1e-6;
  return rep;
}

}  // namespace octdn::train
