#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "octdn/image.hpp"
#include "octdn/nn/layers.hpp"
#include "octdn/nn/tensor.hpp"
#include "octdn/rng.hpp"

namespace octdn::nn {

enum class SkipMode { add, concat };

inline SkipMode skip_mode_from_string(const std::string& s) {
  if (s == "add") return SkipMode::add;
  if (s == "concat") return SkipMode::concat;
  throw ConfigError("unknown skip_mode: '" + s + "'");
}

// Architecture hyperparameters. The defaults reproduce the full-size network:
// three downsampling stages of dilated standard/residual blocks, a latent
// standard block, the mirrored upsampling tower, per-level multi-scale
// restoration branches, and a tanh output head.
struct NetworkConfig {
  int base_filters = 64;
  int kernel = 3;
  int levels = 3;
  std::vector<int> down_dilations;  // empty -> {1, 2, 4, ...}
  std::vector<int> up_dilations;    // empty -> {2^(L-1), ..., 2^(L-1), 1}
  double width_scale = 1.0;
  SkipMode skip_mode = SkipMode::add;
  int input_height = 496;
  int input_width = 384;

  int width() const {
    int c = static_cast<int>(std::lround(base_filters * width_scale));
    return std::max(4, c);
  }

  std::vector<int> resolved_down_dilations() const {
    if (!down_dilations.empty()) return down_dilations;
    std::vector<int> d(levels);
    for (int i = 0; i < levels; ++i) d[i] = 1 << i;
    return d;
  }

  std::vector<int> resolved_up_dilations() const {
    if (!up_dilations.empty()) return up_dilations;
    std::vector<int> d(levels, levels > 1 ? (1 << (levels - 1)) : 1);
    d[levels - 1] = 1;
    return d;
  }
};

inline void validate_config(const NetworkConfig& c) {
  if (c.levels < 1) throw ConfigError("network levels must be >= 1");
  if (c.width() < 4) throw ConfigError("base_filters * width_scale must be >= 4");
  if (c.kernel != 3) throw ConfigError("only 3x3 kernels are supported");
  if (!c.down_dilations.empty() && static_cast<int>(c.down_dilations.size()) != c.levels)
    throw ConfigError("down_dilations must have one entry per level");
  if (!c.up_dilations.empty() && static_cast<int>(c.up_dilations.size()) != c.levels)
    throw ConfigError("up_dilations must have one entry per level");
}

// ---------------------------------------------------------------------------

enum class OpKind { input, conv, convt, batchnorm, elu, tanh_out, add, concat };

struct ParamDesc {
  enum class Init { he, glorot, zero, one };
  std::string name;
  std::vector<int> dims;
  bool trainable = true;
  Init init = Init::zero;
  int fan_in = 0, fan_out = 0;

  size_t size() const {
    size_t s = 1;
    for (int d : dims) s *= static_cast<size_t>(d);
    return s;
  }
};

struct NodeDesc {
  OpKind kind = OpKind::input;
  std::string name;
  std::vector<int> in;  // node indices
  ConvGeom conv;
  ConvTGeom convt;
  int channels = 0;
  // parameter indices (unused slots stay -1)
  int wi = -1, bi = -1, gi = -1, be = -1, rm = -1, rv = -1;
};

struct GraphDesc {
  NetworkConfig config;
  std::vector<NodeDesc> nodes;
  std::vector<ParamDesc> params;
  int output = -1;
};

struct ParamCount {
  size_t trainable = 0;      // convolution weights/biases + batch-norm scale/offset
  size_t bn_trainable = 0;   // the batch-norm share of `trainable`
  size_t running_stats = 0;  // batch-norm running statistics (not trainable)
};

inline ParamCount parameter_counts(const GraphDesc& g) {
  ParamCount c;
  for (const auto& p : g.params) {
    if (p.trainable) {
      c.trainable += p.size();
      if (p.name.ends_with(".gamma") || p.name.ends_with(".beta")) c.bn_trainable += p.size();
    } else {
      c.running_stats += p.size();
    }
  }
  return c;
}

// Trainable parameter count; batch-norm running statistics excluded.
inline size_t count_parameters(const GraphDesc& g) { return parameter_counts(g).trainable; }

namespace detail {

class GraphBuilder {
 public:
  explicit GraphBuilder(const NetworkConfig& cfg) {
    g_.config = cfg;
    NodeDesc input;
    input.kind = OpKind::input;
    input.name = "input";
    input.channels = 1;
    g_.nodes.push_back(input);
  }

  int input() const { return 0; }

  int conv(const std::string& name, int src, int out_ch, int kernel, int stride, int dilation,
           ParamDesc::Init init = ParamDesc::Init::he) {
    int in_ch = g_.nodes[src].channels;
    NodeDesc n;
    n.kind = OpKind::conv;
    n.name = name;
    n.in = {src};
    n.conv = ConvGeom{in_ch, out_ch, kernel, stride, dilation,
                      kernel == 1 ? 0 : dilation * (kernel - 1) / 2};
    n.channels = out_ch;
    n.wi = add_param(name + ".w", {out_ch, in_ch, kernel, kernel}, true, init,
                     in_ch * kernel * kernel, out_ch * kernel * kernel);
    n.bi = add_param(name + ".b", {out_ch}, true, ParamDesc::Init::zero, 0, 0);
    return push(n);
  }

  int convt(const std::string& name, int src, int out_ch, int kernel, int stride) {
    int in_ch = g_.nodes[src].channels;
    NodeDesc n;
    n.kind = OpKind::convt;
    n.name = name;
    n.in = {src};
    n.convt = ConvTGeom{in_ch, out_ch, kernel, stride, /*pad=*/1, /*out_pad=*/stride - 1};
    n.channels = out_ch;
    n.wi = add_param(name + ".w", {in_ch, out_ch, kernel, kernel}, true, ParamDesc::Init::he,
                     in_ch * kernel * kernel, out_ch * kernel * kernel);
    n.bi = add_param(name + ".b", {out_ch}, true, ParamDesc::Init::zero, 0, 0);
    return push(n);
  }

  int batchnorm(const std::string& name, int src) {
    int ch = g_.nodes[src].channels;
    NodeDesc n;
    n.kind = OpKind::batchnorm;
    n.name = name;
    n.in = {src};
    n.channels = ch;
    n.gi = add_param(name + ".gamma", {ch}, true, ParamDesc::Init::one, 0, 0);
    n.be = add_param(name + ".beta", {ch}, true, ParamDesc::Init::zero, 0, 0);
    n.rm = add_param(name + ".running_mean", {ch}, false, ParamDesc::Init::zero, 0, 0);
    n.rv = add_param(name + ".running_var", {ch}, false, ParamDesc::Init::one, 0, 0);
    return push(n);
  }

  int elu(const std::string& name, int src) {
    NodeDesc n;
    n.kind = OpKind::elu;
    n.name = name;
    n.in = {src};
    n.channels = g_.nodes[src].channels;
    return push(n);
  }

  int tanh_out(const std::string& name, int src) {
    NodeDesc n;
    n.kind = OpKind::tanh_out;
    n.name = name;
    n.in = {src};
    n.channels = g_.nodes[src].channels;
    return push(n);
  }

  int add(const std::string& name, int a, int b) {
    NodeDesc n;
    n.kind = OpKind::add;
    n.name = name;
    n.in = {a, b};
    n.channels = g_.nodes[a].channels;
    return push(n);
  }

  int concat(const std::string& name, const std::vector<int>& srcs) {
    NodeDesc n;
    n.kind = OpKind::concat;
    n.name = name;
    n.in = srcs;
    for (int s : srcs) n.channels += g_.nodes[s].channels;
    return push(n);
  }

  GraphDesc take(int output) {
    g_.output = output;
    return std::move(g_);
  }

 private:
  int push(NodeDesc n) {
    g_.nodes.push_back(std::move(n));
    return static_cast<int>(g_.nodes.size()) - 1;
  }

  int add_param(const std::string& name, std::vector<int> dims, bool trainable,
                ParamDesc::Init init, int fan_in, int fan_out) {
    ParamDesc p;
    p.name = name;
    p.dims = std::move(dims);
    p.trainable = trainable;
    p.init = init;
    p.fan_in = fan_in;
    p.fan_out = fan_out;
    g_.params.push_back(std::move(p));
    return static_cast<int>(g_.params.size()) - 1;
  }

  GraphDesc g_;
};

// Two dilated convolutions; residual blocks add a 3x3 projection skip with
// batch norm + ELU on both branches before the addition.
inline int block(GraphBuilder& b, const std::string& name, int src, int out_ch, int dilation,
                 bool residual, int kernel) {
  int main = b.conv(name + ".conv1", src, out_ch, kernel, 1, dilation);
  main = b.elu(name + ".elu1", main);
  main = b.conv(name + ".conv2", main, out_ch, kernel, 1, dilation);
  if (!residual) return b.elu(name + ".elu2", main);
  main = b.batchnorm(name + ".bn_main", main);
  main = b.elu(name + ".elu_main", main);
  int skip = b.conv(name + ".proj", src, out_ch, kernel, 1, 1);
  skip = b.batchnorm(name + ".bn_proj", skip);
  skip = b.elu(name + ".elu_proj", skip);
  return b.add(name + ".add", main, skip);
}

}  // namespace detail

inline GraphDesc build_network(const NetworkConfig& cfg) {
  validate_config(cfg);
  const int C = cfg.width();
  const int L = cfg.levels;
  const int k = cfg.kernel;
  std::vector<int> down_dil = cfg.resolved_down_dilations();
  std::vector<int> up_dil = cfg.resolved_up_dilations();

  detail::GraphBuilder b(cfg);
  std::vector<int> level_features(L);  // post-block, pre-stride taps
  int cur = b.input();
  for (int i = 0; i < L; ++i) {
    std::string name = "down" + std::to_string(i);
    cur = detail::block(b, name, cur, C, down_dil[i], /*residual=*/i > 0, k);
    level_features[i] = cur;
    cur = b.conv(name + ".reduce", cur, C, k, 2, 1);
    cur = b.elu(name + ".reduce_elu", cur);
  }
  cur = detail::block(b, "latent", cur, C, 1, /*residual=*/false, k);
  for (int i = 0; i < L; ++i) {
    std::string name = "up" + std::to_string(i);
    bool last = i == L - 1;
    cur = detail::block(b, name, cur, C, up_dil[i], /*residual=*/!last, k);
    cur = b.convt(name + ".expand", cur, C, k, 2);
    cur = b.elu(name + ".expand_elu", cur);
    int peer = level_features[L - 1 - i];  // matching resolution in the down tower
    if (cfg.skip_mode == SkipMode::add)
      cur = b.add(name + ".skip", cur, peer);
    else
      cur = b.concat(name + ".skip", {cur, peer});
  }
  std::vector<int> concat_in;
  for (int j = 0; j < L; ++j) {
    std::string name = "tap" + std::to_string(j);
    int t = b.conv(name + ".project", level_features[j], C, 1, 1, 1);
    t = b.elu(name + ".project_elu", t);
    t = b.convt(name + ".restore", t, C, k, 1 << j);
    t = b.elu(name + ".restore_elu", t);
    concat_in.push_back(t);
  }
  concat_in.push_back(cur);
  int merged = b.concat("merge", concat_in);
  int head = b.conv("output.project", merged, 1, 1, 1, 1, ParamDesc::Init::glorot);
  return b.take(b.tanh_out("output.tanh", head));
}

// ---------------------------------------------------------------------------
// Weights.

template <typename T>
struct WeightStore {
  std::vector<std::vector<T>> values;  // aligned with GraphDesc::params
};

template <typename T>
WeightStore<T> make_weights(const GraphDesc& g) {
  WeightStore<T> ws;
  ws.values.reserve(g.params.size());
  for (const auto& p : g.params) ws.values.emplace_back(p.size(), T(0));
  return ws;
}

template <typename T>
WeightStore<T> init_weights(const GraphDesc& g, uint64_t seed) {
  WeightStore<T> ws = make_weights<T>(g);
  for (size_t i = 0; i < g.params.size(); ++i) {
    const ParamDesc& p = g.params[i];
    std::vector<T>& v = ws.values[i];
    switch (p.init) {
      case ParamDesc::Init::zero:
        break;
      case ParamDesc::Init::one:
        std::fill(v.begin(), v.end(), T(1));
        break;
      case ParamDesc::Init::he: {
        Rng rng(derive_seed(seed, hash64(p.name)));
        double std = std::sqrt(2.0 / std::max(1, p.fan_in));
        for (auto& x : v) x = static_cast<T>(std * rng.normal());
        break;
      }
      case ParamDesc::Init::glorot: {
        Rng rng(derive_seed(seed, hash64(p.name)));
        double std = std::sqrt(2.0 / std::max(1, p.fan_in + p.fan_out));
        for (auto& x : v) x = static_cast<T>(std * rng.normal());
        break;
      }
    }
  }
  return ws;
}

template <typename T, typename U>
WeightStore<T> cast_weights(const GraphDesc& g, const WeightStore<U>& src) {
  WeightStore<T> out = make_weights<T>(g);
  for (size_t i = 0; i < src.values.size(); ++i)
    for (size_t j = 0; j < src.values[i].size(); ++j)
      out.values[i][j] = static_cast<T>(src.values[i][j]);
  return out;
}

// ---------------------------------------------------------------------------
// Execution.

enum class Mode { train, eval };

template <typename T>
struct Workspace {
  std::vector<Tensor<T>> acts;
  std::vector<BnCache<T>> bn;
};

inline int pow2(int e) { return 1 << e; }

// Runs the graph. `keep` retains every activation for a later backward pass;
// without it, activations are freed as soon as their consumers are done.
// Train mode normalizes with batch statistics and (optionally) updates the
// running estimates; eval mode uses the stored running statistics.
template <typename T>
Tensor<T> forward(const GraphDesc& g, WeightStore<T>& ws, const Tensor<T>& input, Mode mode,
                  Workspace<T>* keep = nullptr, bool update_running = true) {
  if (input.c != 1) throw DataError("network input must have one channel");
  int div = pow2(g.config.levels);
  if (input.h % div != 0 || input.w % div != 0)
    throw DataError("input dims must be divisible by 2^levels (pad first)");

  Workspace<T> local;
  Workspace<T>& wsp = keep ? *keep : local;
  wsp.acts.assign(g.nodes.size(), Tensor<T>());
  wsp.bn.assign(g.nodes.size(), BnCache<T>());

  std::vector<int> pending;  // remaining consumers, for eager release in eval
  if (!keep) {
    pending.assign(g.nodes.size(), 0);
    for (const auto& n : g.nodes)
      for (int s : n.in) ++pending[s];
    ++pending[g.output];
  }

  for (size_t ni = 0; ni < g.nodes.size(); ++ni) {
    const NodeDesc& n = g.nodes[ni];
    Tensor<T>& out = wsp.acts[ni];
    switch (n.kind) {
      case OpKind::input:
        out = input;
        break;
      case OpKind::conv: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        out = Tensor<T>(in.n, n.channels, n.conv.out_dim(in.h), n.conv.out_dim(in.w));
        conv2d_forward(in, ws.values[n.wi].data(), ws.values[n.bi].data(), n.conv, out);
        break;
      }
      case OpKind::convt: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        out = Tensor<T>(in.n, n.channels, n.convt.out_dim(in.h), n.convt.out_dim(in.w));
        convt2d_forward(in, ws.values[n.wi].data(), ws.values[n.bi].data(), n.convt, out);
        break;
      }
      case OpKind::batchnorm: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        out = Tensor<T>(in.n, in.c, in.h, in.w);
        bn_forward(in, ws.values[n.gi].data(), ws.values[n.be].data(), ws.values[n.rm].data(),
                   ws.values[n.rv].data(), static_cast<T>(1e-5), static_cast<T>(0.1),
                   mode == Mode::train, mode == Mode::train && update_running, out, wsp.bn[ni]);
        break;
      }
      case OpKind::elu: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        out = Tensor<T>(in.n, in.c, in.h, in.w);
        elu_forward(in, out);
        break;
      }
      case OpKind::tanh_out: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        out = Tensor<T>(in.n, in.c, in.h, in.w);
        tanh_forward(in, out);
        break;
      }
      case OpKind::add: {
        const Tensor<T>& a = wsp.acts[n.in[0]];
        const Tensor<T>& b = wsp.acts[n.in[1]];
        if (!a.same_shape(b)) throw NumericError("add: shape mismatch at " + n.name);
        out = Tensor<T>(a.n, a.c, a.h, a.w);
        for (size_t i = 0; i < a.size(); ++i) out.v[i] = a.v[i] + b.v[i];
        break;
      }
      case OpKind::concat: {
        const Tensor<T>& first = wsp.acts[n.in[0]];
        out = Tensor<T>(first.n, n.channels, first.h, first.w);
        for (int bi = 0; bi < out.n; ++bi) {
          int co = 0;
          for (int s : n.in) {
            const Tensor<T>& part = wsp.acts[s];
            if (part.h != first.h || part.w != first.w)
              throw NumericError("concat: spatial mismatch at " + n.name);
            std::memcpy(out.plane(bi, co), part.plane(bi, 0),
                        sizeof(T) * part.size() / part.n);
            co += part.c;
          }
        }
        break;
      }
    }
    if (!keep) {
      for (int s : n.in) {
        if (--pending[s] == 0) wsp.acts[s].release();
      }
    }
  }
  Tensor<T> result = wsp.acts[g.output];
  return result;
}

template <typename T>
Tensor<T> forward(const GraphDesc& g, WeightStore<T>& ws, const Tensor<T>& input, Mode mode,
                  std::nullptr_t, bool update_running) {
  return forward(g, ws, input, mode, static_cast<Workspace<T>*>(nullptr), update_running);
}

template <typename T>
struct GradStore {
  std::vector<std::vector<T>> g;  // aligned with GraphDesc::params

  void zero() {
    for (auto& v : g) std::fill(v.begin(), v.end(), T(0));
  }
};

template <typename T>
GradStore<T> make_grads(const GraphDesc& g) {
  GradStore<T> gs;
  gs.g.reserve(g.params.size());
  for (const auto& p : g.params) gs.g.emplace_back(p.size(), T(0));
  return gs;
}

// Reverse pass. `wsp` must come from a forward(..., keep) call on the same
// weights. Parameter gradients accumulate into `grads`.
template <typename T>
void backward(const GraphDesc& g, const WeightStore<T>& ws, const Workspace<T>& wsp,
              const Tensor<T>& grad_output, GradStore<T>& grads) {
  std::vector<Tensor<T>> node_grad(g.nodes.size());
  auto grad_of = [&](int ni) -> Tensor<T>& {
    Tensor<T>& t = node_grad[ni];
    if (t.empty()) {
      const Tensor<T>& a = wsp.acts[ni];
      t = Tensor<T>(a.n, a.c, a.h, a.w);
    }
    return t;
  };
  node_grad[g.output] = grad_output;

  for (size_t ri = g.nodes.size(); ri-- > 0;) {
    const NodeDesc& n = g.nodes[ri];
    if (n.kind == OpKind::input) continue;
    Tensor<T>& gy = node_grad[ri];
    if (gy.empty()) continue;  // node feeds nothing that was differentiated
    switch (n.kind) {
      case OpKind::conv: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        conv2d_backward_params_acc(in, gy, n.conv, grads.g[n.wi].data(), grads.g[n.bi].data());
        conv2d_backward_data_acc(gy, ws.values[n.wi].data(), n.conv, grad_of(n.in[0]));
        break;
      }
      case OpKind::convt: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        convt2d_backward_params_acc(in, gy, n.convt, grads.g[n.wi].data(), grads.g[n.bi].data());
        convt2d_backward_data_acc(gy, ws.values[n.wi].data(), n.convt, grad_of(n.in[0]));
        break;
      }
      case OpKind::batchnorm: {
        const Tensor<T>& in = wsp.acts[n.in[0]];
        bn_backward_acc(in, gy, ws.values[n.gi].data(), wsp.bn[ri], grad_of(n.in[0]),
                        grads.g[n.gi].data(), grads.g[n.be].data());
        break;
      }
      case OpKind::elu: {
        elu_backward_acc(wsp.acts[n.in[0]], wsp.acts[ri], gy, grad_of(n.in[0]));
        break;
      }
      case OpKind::tanh_out: {
        tanh_backward_acc(wsp.acts[ri], gy, grad_of(n.in[0]));
        break;
      }
      case OpKind::add: {
        for (int s : n.in) {
          Tensor<T>& gi = grad_of(s);
          for (size_t i = 0; i < gy.size(); ++i) gi.v[i] += gy.v[i];
        }
        break;
      }
      case OpKind::concat: {
        int co = 0;
        for (int s : n.in) {
          Tensor<T>& gi = grad_of(s);
          for (int bi = 0; bi < gy.n; ++bi) {
            const T* src = gy.plane(bi, co);
            T* dst = gi.plane(bi, 0);
            size_t cnt = gi.size() / gi.n;
            for (size_t i = 0; i < cnt; ++i) dst[i] += src[i];
          }
          co += gi.c;
        }
        break;
      }
      case OpKind::input:
        break;
    }
    node_grad[ri].release();
  }
}

// ---------------------------------------------------------------------------
// B-scan boundary: [0,1] intensities map to [-1,1]; tanh output maps back.

template <typename T>
Tensor<T> bscan_to_tensor(const BScan& scan) {
  Tensor<T> t(1, 1, scan.height, scan.width);
  for (size_t i = 0; i < scan.pixels.size(); ++i)
    t.v[i] = static_cast<T>(scan.pixels[i]) * T(2) - T(1);
  return t;
}

// Reflect-pads (edge-exclusive) on the bottom/right to the next multiple of m.
template <typename T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& t, int m) {
  int ph = (m - t.h % m) % m;
  int pw = (m - t.w % m) % m;
  if (ph == 0 && pw == 0) return t;
  Tensor<T> out(t.n, t.c, t.h + ph, t.w + pw);
  for (int n = 0; n < t.n; ++n)
    for (int c = 0; c < t.c; ++c) {
      const T* src = t.plane(n, c);
      T* dst = out.plane(n, c);
      for (int r = 0; r < out.h; ++r) {
        int sr = r < t.h ? r : 2 * t.h - 2 - r;
        for (int cc = 0; cc < out.w; ++cc) {
          int sc = cc < t.w ? cc : 2 * t.w - 2 - cc;
          dst[static_cast<size_t>(r) * out.w + cc] = src[static_cast<size_t>(sr) * t.w + sc];
        }
      }
    }
  return out;
}

template <typename T>
BScan denoise(const GraphDesc& g, WeightStore<T>& ws, const BScan& scan) {
  Tensor<T> in = bscan_to_tensor<T>(scan);
  in = reflect_pad_to_multiple(in, pow2(g.config.levels));
  Tensor<T> out =
      forward(g, ws, in, Mode::eval, static_cast<Workspace<T>*>(nullptr), /*update_running=*/false);
  BScan result = scan;
  result.meta.kind = ScanKind::denoised;
  for (int r = 0; r < scan.height; ++r)
    for (int c = 0; c < scan.width; ++c) {
      T y = out.v[static_cast<size_t>(r) * out.w + c];
      result.at(r, c) = static_cast<float>((static_cast<double>(y) + 1.0) * 0.5);
    }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "OCTW", u32le version, u32le entry count; per entry
// u16le name length + name, u8 rank, u32le dims, then f32le values. All
// arrays are stored, including batch-norm running statistics.

template <typename T>
void save_weights(const GraphDesc& g, const WeightStore<T>& ws,
                  const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write("OCTW", 4);
  auto put32 = [&](uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
  };
  put32(1u);
  put32(static_cast<uint32_t>(g.params.size()));
  for (size_t i = 0; i < g.params.size(); ++i) {
    const ParamDesc& p = g.params[i];
    uint16_t len = static_cast<uint16_t>(p.name.size());
    char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    os.write(lb, 2);
    os.write(p.name.data(), len);
    char rank = static_cast<char>(p.dims.size());
    os.write(&rank, 1);
    for (int d : p.dims) put32(static_cast<uint32_t>(d));
    for (T x : ws.values[i]) {
      float f = static_cast<float>(x);
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw DataError("short write to " + path.string());
}

template <typename T>
void load_weights(const GraphDesc& g, WeightStore<T>& ws, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "OCTW", 4) != 0)
    throw DataError("not a weight checkpoint: " + path.string());
  auto get32 = [&]() -> uint32_t {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16)
           | (static_cast<uint32_t>(b[3]) << 24);
  };
  uint32_t version = get32();
  if (version != 1) throw DataError("unsupported checkpoint version");
  uint32_t count = get32();
  if (count != g.params.size())
    throw DataError("checkpoint entry count does not match the network");
  for (uint32_t i = 0; i < count; ++i) {
    unsigned char lb[2];
    is.read(reinterpret_cast<char*>(lb), 2);
    uint16_t len = static_cast<uint16_t>(lb[0] | (lb[1] << 8));
    std::string name(len, '\0');
    is.read(name.data(), len);
    char rank = 0;
    is.read(&rank, 1);
    std::vector<int> dims(static_cast<size_t>(rank));
    for (auto& d : dims) d = static_cast<int>(get32());
    const ParamDesc& p = g.params[i];
    if (name != p.name || dims != p.dims)
      throw DataError("checkpoint entry '" + name + "' does not match network parameter '" +
                      p.name + "'");
    std::vector<float> raw(p.size());
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (!is) throw DataError("truncated checkpoint " + path.string());
    for (size_t j = 0; j < raw.size(); ++j) ws.values[i][j] = static_cast<T>(raw[j]);
  }
}

}  // namespace octdn::nn
