#pragma once

// Convolutional encoder/decoder built from a declarative layer list.
// Layers carry no bias and no normalization; every conv/deconv may be
// followed by a ReLU. The encoder output is flattened into one column per
// sample (Z is d_z x N) and the decoder consumes the same layout.

#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "dsrc/autodiff.hpp"
#include "dsrc/conv.hpp"
#include "dsrc/error.hpp"
#include "dsrc/random.hpp"
#include "dsrc/tensor.hpp"

namespace dsrc {

enum class LayerKind { conv, deconv };

NLOHMANN_JSON_SERIALIZE_ENUM(LayerKind, {{LayerKind::conv, "conv"}, {LayerKind::deconv, "deconv"}})

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool relu_after = true;
  /// Output spatial size; only meaningful (and required) for deconv layers.
  std::size_t target_h = 0;
  std::size_t target_w = 0;

  /// Kernel tensor shape: [out, in, k, k] for conv, [in, out, k, k] for deconv.
  Shape kernel_shape() const {
    return kind == LayerKind::conv ? Shape{out_channels, in_channels, kernel, kernel}
                                   : Shape{in_channels, out_channels, kernel, kernel};
  }
  std::size_t parameter_count() const { return out_channels * in_channels * kernel * kernel; }
  std::size_t fan_in() const { return in_channels * kernel * kernel; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
  j = nlohmann::json{{"kind", l.kind},         {"in_channels", l.in_channels}, {"out_channels", l.out_channels},
                     {"kernel", l.kernel},     {"stride", l.stride},           {"pad", l.pad},
                     {"relu_after", l.relu_after}};
  if (l.kind == LayerKind::deconv) j["target_hw"] = {l.target_h, l.target_w};
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  j.at("kind").get_to(l.kind);
  j.at("in_channels").get_to(l.in_channels);
  j.at("out_channels").get_to(l.out_channels);
  j.at("kernel").get_to(l.kernel);
  j.at("stride").get_to(l.stride);
  j.at("pad").get_to(l.pad);
  j.at("relu_after").get_to(l.relu_after);
  if (l.kind == LayerKind::deconv) {
    const auto& hw = j.at("target_hw");
    l.target_h = hw.at(0).get<std::size_t>();
    l.target_w = hw.at(1).get<std::size_t>();
  }
}

struct NetworkSpec {
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;
  std::size_t input_channels = 1;
  std::size_t input_h = 32;
  std::size_t input_w = 32;

  /// Per-sample encoder output shape [C, h, w]. Throws on an inconsistent chain.
  Shape embedding_shape() const {
    std::size_t c = input_channels, h = input_h, w = input_w;
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      const auto& l = encoder[i];
      if (l.kind != LayerKind::conv) throw InvalidShape("encoder layer " + std::to_string(i) + " must be conv");
      if (l.in_channels != c)
        throw InvalidShape("encoder layer " + std::to_string(i) + " expects " + std::to_string(l.in_channels) +
                           " channels, chain provides " + std::to_string(c));
      h = conv::output_extent(h, l.kernel, l.stride, l.pad);
      w = conv::output_extent(w, l.kernel, l.stride, l.pad);
      c = l.out_channels;
    }
    return {c, h, w};
  }

  std::size_t embedding_dim() const { return shape_numel(embedding_shape()); }

  /// Checks layer invariants and that the decoder lands on the input shape.
  void validate() const {
    auto check_layer = [](const LayerSpec& l, const std::string& where) {
      if (l.kernel < 1 || l.stride < 1 || l.in_channels < 1 || l.out_channels < 1)
        throw InvalidShape(where + ": kernel, stride and channels must be >= 1");
    };
    if (encoder.empty() || decoder.empty()) throw InvalidShape("network needs at least one encoder and decoder layer");
    for (std::size_t i = 0; i < encoder.size(); ++i) check_layer(encoder[i], "encoder layer " + std::to_string(i));
    Shape e = embedding_shape();
    std::size_t c = e[0], h = e[1], w = e[2];
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      const auto& l = decoder[i];
      const std::string where = "decoder layer " + std::to_string(i);
      check_layer(l, where);
      if (l.kind != LayerKind::deconv) throw InvalidShape(where + " must be deconv");
      if (l.in_channels != c)
        throw InvalidShape(where + " expects " + std::to_string(l.in_channels) + " channels, chain provides " +
                           std::to_string(c));
      for (auto [in, target, axis] : {std::tuple{h, l.target_h, "height"}, std::tuple{w, l.target_w, "width"}}) {
        const auto r = conv::transposed_extent_range(in, l.kernel, l.stride, l.pad);
        if (r.hi < r.lo || target < r.lo || target > r.hi)
          throw InvalidShape(where + ": target " + axis + " " + std::to_string(target) + " unreachable from " +
                             std::to_string(in) + "; feasible range [" + std::to_string(r.lo) + ", " +
                             std::to_string(r.hi) + "]");
      }
      c = l.out_channels;
      h = l.target_h;
      w = l.target_w;
    }
    if (c != input_channels || h != input_h || w != input_w)
      throw InvalidShape("decoder output [" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
                         "] does not match input [" + std::to_string(input_channels) + "," +
                         std::to_string(input_h) + "," + std::to_string(input_w) + "]");
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : encoder) n += l.parameter_count();
    for (const auto& l : decoder) n += l.parameter_count();
    return n;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{{"encoder", s.encoder},
                     {"decoder", s.decoder},
                     {"input_hw", {s.input_h, s.input_w}},
                     {"input_channels", s.input_channels}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  j.at("encoder").get_to(s.encoder);
  j.at("decoder").get_to(s.decoder);
  s.input_h = j.at("input_hw").at(0).get<std::size_t>();
  s.input_w = j.at("input_hw").at(1).get<std::size_t>();
  j.at("input_channels").get_to(s.input_channels);
}

/// The 32x32 grayscale architecture: four strided convs down to a 30x4x4
/// embedding, three transposed convs back up (4 -> 8 -> 15 -> 32). The first
/// decoder layer upsamples with stride 2 so the remaining two mirror the
/// encoder's 8 -> 15 -> 32 geometry exactly.
inline NetworkSpec default_spec() {
  NetworkSpec s;
  s.input_channels = 1;
  s.input_h = s.input_w = 32;
  s.encoder = {
      {LayerKind::conv, 1, 10, 5, 2, 1, true},
      {LayerKind::conv, 10, 20, 3, 2, 1, true},
      {LayerKind::conv, 20, 30, 3, 1, 0, true},
      {LayerKind::conv, 30, 30, 3, 1, 0, true},
  };
  s.decoder = {
      {LayerKind::deconv, 30, 30, 3, 2, 1, true, 8, 8},
      {LayerKind::deconv, 30, 20, 3, 2, 1, true, 15, 15},
      {LayerKind::deconv, 20, 1, 5, 2, 1, false, 32, 32},
  };
  return s;
}

/// One conv + one deconv on small square images; used for gradient checks
/// and fast convergence tests.
inline NetworkSpec micro_spec(std::size_t hw = 6, std::size_t channels = 3) {
  NetworkSpec s;
  s.input_channels = 1;
  s.input_h = s.input_w = hw;
  s.encoder = {{LayerKind::conv, 1, channels, 3, 1, 0, true}};
  s.decoder = {{LayerKind::deconv, channels, 1, 3, 1, 0, false, hw, hw}};
  return s;
}

/// Encoder and decoder kernels of one network.
template <typename T = double>
struct Network {
  NetworkSpec spec;
  std::vector<Parameter<T>> encoder;
  std::vector<Parameter<T>> decoder;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : encoder) n += p.value.size();
    for (const auto& p : decoder) n += p.value.size();
    return n;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : encoder) out.push_back(&p);
    for (auto& p : decoder) out.push_back(&p);
    return out;
  }
};

/// Bound of the He-uniform draw: U(-b, b) with b = sqrt(6 / fan_in), which
/// has standard deviation sqrt(2 / fan_in).
inline double init_bound(const LayerSpec& l) { return std::sqrt(6.0 / static_cast<double>(l.fan_in())); }

/// Draws one kernel from U(-b, b), b = init_bound(l).
template <typename T = double>
Tensor<T> init_kernel(const LayerSpec& l, Rng& rng) {
  const double b = init_bound(l);
  Tensor<T> k(l.kernel_shape());
  for (auto& v : k.data()) v = static_cast<T>(rng.uniform(-b, b));
  return k;
}

/// Fan-in scaled uniform initialization; one RNG stream per layer.
template <typename T = double>
Network<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Network<T> net{spec, {}, {}};
  std::uint64_t stream = 0;
  auto draw = [&](const LayerSpec& l, const std::string& name) {
    Rng rng(derive_seed(seed, stream++));
    return Parameter<T>(name, init_kernel<T>(l, rng));
  };
  for (std::size_t i = 0; i < spec.encoder.size(); ++i)
    net.encoder.push_back(draw(spec.encoder[i], "encoder." + std::to_string(i)));
  for (std::size_t i = 0; i < spec.decoder.size(); ++i)
    net.decoder.push_back(draw(spec.decoder[i], "decoder." + std::to_string(i)));
  return net;
}

/// Records every parameter of `params` on the graph.
template <typename T>
std::vector<Var<T>> bind(Graph<T>& g, std::vector<Parameter<T>>& params) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(g.param(p));
  return out;
}

/// [N, C, H, W] images -> Z of shape [d_z, N], column order = sample order.
template <typename T>
Var<T> encode(const NetworkSpec& spec, const std::vector<Var<T>>& kernels, Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != spec.input_channels || xv.dim(2) != spec.input_h || xv.dim(3) != spec.input_w)
    throw InvalidShape("encode: expected [N," + std::to_string(spec.input_channels) + "," +
                       std::to_string(spec.input_h) + "," + std::to_string(spec.input_w) + "] input, got " +
                       shape_str(xv.shape()));
  if (kernels.size() != spec.encoder.size()) throw InvalidShape("encode: wrong number of encoder kernels");
  Var<T> h = x;
  for (std::size_t i = 0; i < spec.encoder.size(); ++i) {
    const auto& l = spec.encoder[i];
    h = ad::conv2d(h, kernels[i], l.stride, l.pad);
    if (l.relu_after) h = ad::relu(h);
  }
  return ad::to_columns(h);
}

/// Z-hat [d_z, N] -> reconstructed images [N, C, H, W].
template <typename T>
Var<T> decode(const NetworkSpec& spec, const std::vector<Var<T>>& kernels, Var<T> z) {
  const Shape emb = spec.embedding_shape();
  const auto& zv = z.value();
  if (zv.rank() != 2 || zv.dim(0) != shape_numel(emb))
    throw InvalidShape("decode: expected embedding dimension " + std::to_string(shape_numel(emb)) + ", got " +
                       shape_str(zv.shape()));
  if (kernels.size() != spec.decoder.size()) throw InvalidShape("decode: wrong number of decoder kernels");
  Var<T> h = ad::from_columns(z, emb);
  for (std::size_t i = 0; i < spec.decoder.size(); ++i) {
    const auto& l = spec.decoder[i];
    h = ad::transposed_conv2d(h, kernels[i], l.stride, l.pad, l.target_h, l.target_w);
    if (l.relu_after) h = ad::relu(h);
  }
  return h;
}

/// Forward-only encode on a throwaway graph.
template <typename T>
Tensor<T> encode(Network<T>& net, const Tensor<T>& x, int threads = 1) {
  Graph<T> g(threads);
  std::vector<Var<T>> ks;
  for (auto& p : net.encoder) ks.push_back(g.input(p.value));
  return encode(net.spec, ks, g.input(x)).value();
}

/// Forward-only decode on a throwaway graph.
template <typename T>
Tensor<T> decode(Network<T>& net, const Tensor<T>& z, int threads = 1) {
  Graph<T> g(threads);
  std::vector<Var<T>> ks;
  for (auto& p : net.decoder) ks.push_back(g.input(p.value));
  return decode(net.spec, ks, g.input(z)).value();
}

}  // namespace dsrc
