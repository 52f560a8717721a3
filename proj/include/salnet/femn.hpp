#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "salnet/autodiff.hpp"
#include "salnet/core.hpp"
#include "salnet/image.hpp"

namespace salnet {

// channels x vectorized-locations activation grid
struct FeatureMap {
  int channels = 0;
  int locations = 0;  // Z*Z
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int c, int loc) : channels(c), locations(loc) {
    data.assign(static_cast<std::size_t>(c) * loc, 0.0);
  }
};

// symmetric K'xK' second-order descriptor after sigmoid power normalization
struct RelationDescriptor {
  int k = 0;
  std::vector<double> m;

  RelationDescriptor() = default;
  explicit RelationDescriptor(int kk) : k(kk) {
    m.assign(static_cast<std::size_t>(kk) * kk, 0.0);
  }
  double at(int i, int j) const { return m[static_cast<std::size_t>(i) * k + j]; }
};

struct ConvBlockConfig {
  int out_channels = 32;
  int kernel = 3;
  int stride = 1;
  bool pool = false;
};

struct EncoderConfig {
  std::vector<ConvBlockConfig> f_blocks;
  std::vector<ConvBlockConfig> g_blocks;
  double sigma_pn = 1.0;

  static EncoderConfig defaults() {
    EncoderConfig c;
    c.f_blocks = {{32, 3, 1, true}, {32, 3, 1, true}};
    c.g_blocks = {{64, 3, 1, false}, {64, 3, 1, true}};
    c.sigma_pn = 1.0;
    return c;
  }
};

namespace detail {

inline int block_out_size(int in, const ConvBlockConfig& b, const std::string& who) {
  int pad = (b.kernel - 1) / 2;
  int out = (in + 2 * pad - b.kernel) / b.stride + 1;
  if (out < 1) throw config_error(who + ": spatial size collapses to zero");
  if (b.pool) {
    if (out % 2) throw config_error(who + ": pooled size must be even, got " + std::to_string(out));
    out /= 2;
  }
  return out;
}

}  // namespace detail

// (K, Z) after the f encoder
inline std::pair<int, int> f_output_shape(const EncoderConfig& cfg, int image_size,
                                          int image_channels = 3) {
  int size = image_size;
  int ch = image_channels;
  for (const auto& b : cfg.f_blocks) {
    size = detail::block_out_size(size, b, "encoder f");
    ch = b.out_channels;
  }
  return {ch, size};
}

// (K', Z') after the g encoder applied to f output
inline std::pair<int, int> g_output_shape(const EncoderConfig& cfg, int image_size,
                                          int image_channels = 3) {
  auto [ch, size] = f_output_shape(cfg, image_size, image_channels);
  for (const auto& b : cfg.g_blocks) {
    size = detail::block_out_size(size, b, "encoder g");
    ch = b.out_channels;
  }
  if (size < 2)
    throw config_error("encoder g must keep at least 2x2 locations for second-order pooling");
  return {ch, size};
}

// He-uniform conv stack initialization under the given name prefix.
inline void init_conv_stack(ParamStore& store, const std::string& prefix,
                            const std::vector<ConvBlockConfig>& blocks, int in_channels,
                            Rng& rng) {
  int ch = in_channels;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    std::string base = prefix + ".conv" + std::to_string(i);
    ParamTensor& w = store.add(base + ".w", {b.out_channels, ch, b.kernel, b.kernel});
    double bound = std::sqrt(6.0 / (static_cast<double>(ch) * b.kernel * b.kernel));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    store.add(base + ".b", {b.out_channels});  // zero biases
    ch = b.out_channels;
  }
}

inline void init_femn_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng,
                             int image_channels = 3) {
  init_conv_stack(store, "f", cfg.f_blocks, image_channels, rng);
  int k = cfg.f_blocks.empty() ? image_channels : cfg.f_blocks.back().out_channels;
  init_conv_stack(store, "g", cfg.g_blocks, k, rng);
}

namespace detail {

inline ValueId build_conv_stack(Graph& g, ValueId x, const std::string& prefix,
                                const std::vector<ConvBlockConfig>& blocks) {
  ValueId cur = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    std::string base = prefix + ".conv" + std::to_string(i);
    cur = g.conv2d(cur, g.param(base + ".w"), g.param(base + ".b"), ConvSpec{b.stride, -1});
    cur = g.relu(cur);
    if (b.pool) cur = g.maxpool2x2(cur);
  }
  return cur;
}

}  // namespace detail

// f: R^{3xMxM} -> R^{KxZ^2}; graph node keeps the KxZxZ layout
inline ValueId build_encode_f(Graph& g, ValueId image, const EncoderConfig& cfg) {
  return detail::build_conv_stack(g, image, "f", cfg.f_blocks);
}

// g: R^{KxZ^2} -> R^{K'xZ'^2}
inline ValueId build_encode_g(Graph& g, ValueId mixed, const EncoderConfig& cfg) {
  return detail::build_conv_stack(g, mixed, "g", cfg.g_blocks);
}

// sigmoid power normalization (1-e^{-sigma x})/(1+e^{-sigma x}) = tanh(sigma x / 2)
inline double sigmoid_pn_scalar(double x, double sigma) {
  return std::tanh((0.5 * sigma) * x);
}

inline ValueId build_sigmoid_pn(Graph& g, ValueId x, double sigma) {
  if (!(sigma > 0.0)) throw config_error("sigma_pn must be positive");
  return g.tanh_fn(g.scale(x, 0.5 * sigma));
}

// R = psi(Phi Phi^T, sigma)
inline ValueId build_second_order(Graph& g, ValueId phi, double sigma) {
  return build_sigmoid_pn(g, g.outer_xxt(phi), sigma);
}

// ---- plain (graph-free) variants of the same operations ----

inline FeatureMap mix(const FeatureMap& a, const FeatureMap& b) {
  if (a.channels != b.channels || a.locations != b.locations)
    throw config_error("mix: feature map shapes differ");
  FeatureMap out(a.channels, a.locations);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
  return out;
}

inline std::vector<double> sigmoid_pn(const std::vector<double>& x, double sigma) {
  if (!(sigma > 0.0)) throw config_error("sigma_pn must be positive");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_pn_scalar(x[i], sigma);
  return out;
}

inline RelationDescriptor second_order(const FeatureMap& phi, double sigma) {
  if (!(sigma > 0.0)) throw config_error("sigma_pn must be positive");
  RelationDescriptor r(phi.channels);
  int k = phi.channels, c = phi.locations;
  for (int i = 0; i < k; ++i) {
    for (int j = i; j < k; ++j) {
      double acc = 0.0;
      const double* pi = phi.data.data() + static_cast<std::size_t>(i) * c;
      const double* pj = phi.data.data() + static_cast<std::size_t>(j) * c;
      for (int t = 0; t < c; ++t) acc += pi[t] * pj[t];
      double v = sigmoid_pn_scalar(acc, sigma);
      r.m[static_cast<std::size_t>(i) * k + j] = v;
      r.m[static_cast<std::size_t>(j) * k + i] = v;
    }
  }
  return r;
}

// Convenience single-image encoders running a throwaway graph forward.
inline FeatureMap encode_f(const Image& img, ParamStore& store, const EncoderConfig& cfg) {
  Graph g(&store);
  ValueId in = g.input({img.channels, img.height, img.width}, "image");
  g.set_input(in, img.data);
  ValueId out = build_encode_f(g, in, cfg);
  g.forward();
  auto [k, z] = f_output_shape(cfg, img.height, img.channels);
  FeatureMap fm(k, z * z);
  fm.data = g.data(out);
  return fm;
}

inline FeatureMap encode_g(const FeatureMap& in_map, int z, ParamStore& store,
                           const EncoderConfig& cfg) {
  Graph g(&store);
  ValueId in = g.input({in_map.channels, z, z}, "mixed");
  g.set_input(in, in_map.data);
  ValueId out = build_encode_g(g, in, cfg);
  g.forward();
  int kk = cfg.g_blocks.empty() ? in_map.channels : cfg.g_blocks.back().out_channels;
  FeatureMap fm(kk, static_cast<int>(g.data(out).size()) / kk);
  fm.data = g.data(out);
  return fm;
}

}  // namespace salnet
