#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssimfuse/config.hpp"
#include "ssimfuse/graph.hpp"
#include "ssimfuse/image.hpp"
#include "ssimfuse/ops.hpp"

namespace ssimfuse {

enum class ParamKind { Weight, Bias, Scale, Shift, RunningMean, RunningVar };

inline bool learnable(ParamKind k) { return k != ParamKind::RunningMean && k != ParamKind::RunningVar; }

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
};

namespace detail {

struct ConvLayerSpec {
  std::string prefix;  // e.g. "hf_a.conv0"
  std::string norm;    // empty when the layer has no normalization
  std::size_t in, out, kernel;
};

inline std::vector<ConvLayerSpec> conv_layers(const FusionConfig& c) {
  std::vector<ConvLayerSpec> layers;
  auto hf = [&](const std::string& path, const std::vector<int>& kernels) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < c.hf_channels.size(); ++i) {
      const auto out = std::size_t(c.hf_channels[i]);
      layers.push_back({path + ".conv" + std::to_string(i), path + ".norm" + std::to_string(i), in, out,
                        std::size_t(kernels[i])});
      in = out;
    }
  };
  hf("hf_a", c.hf_kernels_anatomical);
  hf("hf_b", c.hf_kernels_functional);
  const auto lf = std::size_t(c.lf_channels);
  layers.push_back({"lf_a.conv0", "lf_a.norm0", 1, lf, std::size_t(c.lf_kernel_anatomical)});
  layers.push_back({"lf_b.conv0", "lf_b.norm0", 1, lf, std::size_t(c.lf_kernel_functional)});
  const auto rk = std::size_t(c.recon_kernel);
  const auto r0 = std::size_t(c.recon_channels[0]), r1 = std::size_t(c.recon_channels[1]);
  layers.push_back({"recon.conv0", "recon.norm0", std::size_t(c.hf_channels.back()), r0, rk});
  layers.push_back({"recon.conv1", "recon.norm1", r0, r1, rk});
  layers.push_back({"recon.conv2", "", r1, std::size_t(c.recon_channels[2]), rk});
  return layers;
}

}  // namespace detail

/// Every tensor a network with this configuration owns, in a fixed order.
inline std::vector<ParamSpec> param_layout(const FusionConfig& c) {
  std::vector<ParamSpec> specs;
  for (const auto& l : detail::conv_layers(c)) {
    specs.push_back({l.prefix + ".weight", Shape{l.out, l.in, l.kernel, l.kernel}, ParamKind::Weight});
    specs.push_back({l.prefix + ".bias", Shape{1, l.out, 1, 1}, ParamKind::Bias});
    if (l.norm.empty()) continue;
    specs.push_back({l.norm + ".scale", Shape{1, l.out, 1, 1}, ParamKind::Scale});
    specs.push_back({l.norm + ".shift", Shape{1, l.out, 1, 1}, ParamKind::Shift});
    specs.push_back({l.norm + ".running_mean", Shape{1, l.out, 1, 1}, ParamKind::RunningMean});
    specs.push_back({l.norm + ".running_var", Shape{1, l.out, 1, 1}, ParamKind::RunningVar});
  }
  return specs;
}

template <class T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  ParamKind kind;

  bool learnable() const { return ssimfuse::learnable(kind); }
};

/// Named, ordered tensors of one network, including normalization running
/// statistics. `steps` counts optimizer updates applied so far.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> value, ParamKind kind) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), kind});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) { return entries_[lookup(name)].value; }
  const Tensor<T>& get(const std::string& name) const { return entries_[lookup(name)].value; }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::uint64_t steps = 0;

  /// Throws ShapeError unless names, order and shapes match `config`.
  void check_against(const FusionConfig& config) const {
    const auto layout = param_layout(config);
    if (layout.size() != entries_.size())
      throw ShapeError("parameter set has " + std::to_string(entries_.size()) + " tensors, configuration needs " +
                       std::to_string(layout.size()));
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto& e = entries_[i];
      if (e.name != layout[i].name || !(e.value.shape() == layout[i].shape))
        throw ShapeError("parameter '" + e.name + "' " + e.value.shape().str() + " does not match expected '" +
                         layout[i].name + "' " + layout[i].shape.str());
    }
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.kind);
    out.steps = steps;
    return out;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.steps != b.steps || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto &x = a.entries_[i], &y = b.entries_[i];
      if (x.name != y.name || x.kind != y.kind || !(x.value.shape() == y.value.shape()) ||
          x.value.vec() != y.value.vec())
        return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("missing parameter '" + name + "'");
    return it->second;
  }

  std::vector<ParamEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Weights from a normal distribution truncated at two standard deviations
/// (resampled), zero biases, unit scales, zero shifts, fresh running stats.
template <class T = double>
ParamSet<T> init_params(const FusionConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_std);
  const double bound = 2.0 * config.init_std;
  ParamSet<T> params;
  for (const auto& spec : param_layout(config)) {
    Tensor<T> t(spec.shape);
    switch (spec.kind) {
      case ParamKind::Weight:
        for (T& v : t.vec()) {
          double s;
          do {
            s = normal(rng);
          } while (std::abs(s) > bound);
          v = static_cast<T>(s);
        }
        break;
      case ParamKind::Scale:
      case ParamKind::RunningVar:
        std::fill(t.vec().begin(), t.vec().end(), T(1));
        break;
      default:
        break;
    }
    params.add(spec.name, std::move(t), spec.kind);
  }
  return params;
}

/// High-frequency fusion rule: max(h1,h2) / (h1 + h2 + eps*sign(h1+h2)),
/// sign(0) = +1. The max routes its gradient to h1 on ties.
template <class T>
Var<T> fuse_hf(Var<T> h1, Var<T> h2, T eps) {
  require_same_shape(h1.shape(), h2.shape(), "fuse_hf");
  const auto& a = h1.tensor();
  const auto& b = h2.tensor();
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T s = a[i] + b[i];
    const T den = s + (s >= T(0) ? eps : -eps);
    out[i] = std::max(a[i], b[i]) / den;
  }
  const NodeId ai = h1.id, bi = h2.id;
  return h1.graph->record("fuse_hf", {ai, bi}, std::move(out), [ai, bi, eps](Graph<T>& G, NodeId self) {
    const auto& a = G.node(ai).value;
    const auto& b = G.node(bi).value;
    const auto dy = G.node(self).value.grad();
    auto da = G.grad_target(ai);
    auto db = G.grad_target(bi);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const T s = a[i] + b[i];
      const T den = s + (s >= T(0) ? eps : -eps);
      const bool first = a[i] >= b[i];
      const T m = first ? a[i] : b[i];
      const T common = -m / (den * den);
      if (!da.empty()) da[i] += dy[i] * (common + (first ? T(1) / den : T(0)));
      if (!db.empty()) db[i] += dy[i] * (common + (first ? T(0) : T(1) / den));
    }
  });
}

/// Low-frequency fusion rule: elementwise mean of the three maps.
template <class T>
Var<T> fuse_lf(Var<T> l1, Var<T> l2, Var<T> r) {
  require_same_shape(l1.shape(), l2.shape(), "fuse_lf");
  require_same_shape(l1.shape(), r.shape(), "fuse_lf");
  Tensor<T> out(l1.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (l1.tensor()[i] + l2.tensor()[i] + r.tensor()[i]) / T(3);
  const NodeId ids[3] = {l1.id, l2.id, r.id};
  return l1.graph->record("fuse_lf", {ids[0], ids[1], ids[2]}, std::move(out),
                          [a = ids[0], b = ids[1], c = ids[2]](Graph<T>& G, NodeId self) {
                            const auto dy = G.node(self).value.grad();
                            for (NodeId in : {a, b, c}) {
                              auto d = G.grad_target(in);
                              for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] / T(3);
                            }
                          });
}

/// Nodes produced by one forward pass through the fusion network.
template <class T>
struct FusionNodes {
  Var<T> fused;
  Var<T> hf_fused;  // H_o
  Var<T> lf_fused;  // R_o
  std::map<std::string, Var<T>> params;
  /// Running statistics after a train-mode pass, keyed by norm prefix.
  std::vector<std::pair<std::string, NormState<T>>> norm_updates;
};

/// Records the fusion network on `g`. `anatomical`/`functional` are (1,1,H,W)
/// images in [0,1]; the result is a (1,1,H,W) image in [0,1].
template <class T>
FusionNodes<T> build_fusion(Graph<T>& g, const ParamSet<T>& params, const FusionConfig& config, Var<T> anatomical,
                            Var<T> functional, NormMode mode, bool params_require_grad) {
  require_same_shape(anatomical.shape(), functional.shape(), "fusion inputs");
  params.check_against(config);
  const Padding pad = padding_from_string(config.padding);
  const T slope = T(config.leaky_slope);
  FusionNodes<T> out;
  for (const auto& e : params.entries())
    out.params.emplace(e.name, g.leaf(e.value, params_require_grad && e.learnable(), e.name));

  auto block = [&](Var<T> x, const std::string& conv, const std::string& norm) {
    Var<T> y = conv2d(x, out.params.at(conv + ".weight"), out.params.at(conv + ".bias"), pad);
    NormState<T> st{params.get(norm + ".running_mean"), params.get(norm + ".running_var")};
    y = norm_layer(y, out.params.at(norm + ".scale"), out.params.at(norm + ".shift"), st, mode);
    if (mode == NormMode::Train) out.norm_updates.emplace_back(norm, std::move(st));
    return leaky_relu(y, slope);
  };

  const Var<T> xa = affine(anatomical, T(2), T(-1));
  const Var<T> xb = affine(functional, T(2), T(-1));
  auto hf_path = [&](Var<T> x, const std::string& path) {
    for (std::size_t i = 0; i < config.hf_channels.size(); ++i)
      x = block(x, path + ".conv" + std::to_string(i), path + ".norm" + std::to_string(i));
    return x;
  };
  const Var<T> h1 = hf_path(xa, "hf_a");
  const Var<T> h2 = hf_path(xb, "hf_b");
  const Var<T> l1 = block(xa, "lf_a.conv0", "lf_a.norm0");
  const Var<T> l2 = block(xb, "lf_b.conv0", "lf_b.norm0");

  out.hf_fused = fuse_hf(h1, h2, T(config.eps_fuse));
  Var<T> r = block(out.hf_fused, "recon.conv0", "recon.norm0");
  r = block(r, "recon.conv1", "recon.norm1");
  out.lf_fused = fuse_lf(l1, l2, r);
  Var<T> y = conv2d(out.lf_fused, out.params.at("recon.conv2.weight"), out.params.at("recon.conv2.bias"), pad);
  y = tanh_act(y);
  out.fused = affine(y, T(0.5), T(0.5));
  return out;
}

/// Owns the graph of a forward pass together with its key nodes.
template <class T>
struct ForwardResult {
  std::unique_ptr<Graph<T>> graph;
  Var<T> anatomical;
  Var<T> functional;
  FusionNodes<T> nodes;

  Tensor<T>& fused() const { return nodes.fused.tensor(); }
};

template <class T>
ForwardResult<T> forward(const ParamSet<T>& params, const FusionConfig& config, const ImagePair& pair, NormMode mode,
                         bool track_gradients = false) {
  pair.validate();
  ForwardResult<T> r;
  r.graph = std::make_unique<Graph<T>>();
  r.anatomical = r.graph->leaf(pair.anatomical.to_tensor<T>(), track_gradients, "anatomical");
  r.functional = r.graph->leaf(pair.functional.to_tensor<T>(), track_gradients, "functional");
  r.nodes = build_fusion(*r.graph, params, config, r.anatomical, r.functional, mode, track_gradients);
  return r;
}

/// Inference-mode fusion of one pair.
template <class T = double>
Image fuse(const ParamSet<T>& params, const FusionConfig& config, const ImagePair& pair) {
  auto r = forward(params, config, pair, NormMode::Infer);
  return Image::from_tensor(r.fused());
}

/// Copies running statistics collected by a train-mode pass back into `params`.
template <class T>
void commit_norm_updates(ParamSet<T>& params, const FusionNodes<T>& nodes) {
  for (const auto& [prefix, st] : nodes.norm_updates) {
    params.get(prefix + ".running_mean") = st.running_mean;
    params.get(prefix + ".running_var") = st.running_var;
  }
}

}  // namespace ssimfuse
