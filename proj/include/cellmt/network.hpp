#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cellmt/error.hpp"
#include "cellmt/layers.hpp"
#include "cellmt/tensor.hpp"

namespace cellmt {

enum class ParamGroup { SharedEncoder, LocalizationDecoder, CountingHead };

inline constexpr std::array<ParamGroup, 3> kAllGroups{
    ParamGroup::SharedEncoder, ParamGroup::LocalizationDecoder, ParamGroup::CountingHead};

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::SharedEncoder: return "shared_encoder";
    case ParamGroup::LocalizationDecoder: return "localization_decoder";
    case ParamGroup::CountingHead: return "counting_head";
  }
  return "?";
}

// Set of parameter groups, used as an update mask.
struct GroupMask {
  bool encoder = true;
  bool decoder = true;
  bool counting = true;

  [[nodiscard]] bool contains(ParamGroup g) const {
    switch (g) {
      case ParamGroup::SharedEncoder: return encoder;
      case ParamGroup::LocalizationDecoder: return decoder;
      case ParamGroup::CountingHead: return counting;
    }
    return false;
  }
  static GroupMask all() { return {true, true, true}; }
  static GroupMask encoder_and_counting() { return {true, false, true}; }
  static GroupMask encoder_and_decoder() { return {true, true, false}; }
};

struct NetworkConfig {
  std::array<int, 4> encoder_channels{32, 64, 128, 256};
  int bottleneck_channels = 512;
  double dropout_rate = 0.2;
  std::array<int, 2> dense_units{32, 16};
  int input_channels = 3;
  std::uint64_t init_seed = 0;
  double count_bias_init = 0.0;  // initial bias of the linear count output

  void validate() const {
    for (int c : encoder_channels) detail::require(c > 0, "encoder channel widths must be positive");
    detail::require(bottleneck_channels > 0, "bottleneck width must be positive");
    detail::require(dropout_rate >= 0 && dropout_rate < 1, "dropout rate must lie in [0, 1)");
    for (int u : dense_units) detail::require(u > 0, "dense units must be positive");
    detail::require(input_channels > 0, "input channels must be positive");
  }
};

template <typename T>
struct Param {
  std::string name;
  ParamGroup group{};
  std::vector<int> shape;
  std::vector<T> value;
};

// Per-parameter gradient buffers, index-aligned with Network::params().
template <typename T>
using ParamGrads = std::vector<std::vector<T>>;

template <typename T>
struct Prediction {
  Grid<T> mask_probs;  // sigmoid outputs, clamped to (0, 1)
  double count_estimate = 0;
};

// Everything the backward pass needs from one training-mode forward pass.
template <typename T>
struct ForwardCache {
  struct ConvPair {
    Tensor<T> input;    // input of the first conv
    Tensor<T> dropped;  // ReLU(conv1) after dropout; input of the second conv
    std::vector<T> dropout_mask;
    Tensor<T> output;   // ReLU(conv2)
    std::vector<std::uint32_t> argmax;  // encoder blocks only
  };
  std::array<ConvPair, 4> encoder;
  ConvPair bottleneck;
  struct DecoderStage {
    Tensor<T> concat;  // [upsampled; skip]
    Tensor<T> output;  // ReLU(conv)
  };
  std::array<DecoderStage, 4> decoder;  // index 0 = deepest stage
  std::vector<T> gap;
  std::vector<T> hidden1;
  std::vector<T> hidden2;
  Prediction<T> prediction;
};

struct LayerRow {
  std::string name;
  std::string kind;
  ParamGroup group{};
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  std::size_t parameters = 0;
};

// Shared encoder with a skip-connected localization decoder (1x1 conv +
// sigmoid) and a counting head (GAP over bottleneck features, two ReLU dense
// layers, linear output).
template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& config) : config_(config) {
    config_.validate();
    build();
    initialize();
  }

  // Zero-filled parameters; used when values are about to be overwritten.
  struct Uninitialized {};
  Network(const NetworkConfig& config, Uninitialized) : config_(config) {
    config_.validate();
    build();
  }

  [[nodiscard]] const NetworkConfig& config() const { return config_; }
  [[nodiscard]] std::vector<Param<T>>& params() { return params_; }
  [[nodiscard]] const std::vector<Param<T>>& params() const { return params_; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }
  [[nodiscard]] std::size_t parameter_count(ParamGroup g) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.group == g) n += p.value.size();
    }
    return n;
  }

  [[nodiscard]] ParamGrads<T> zero_grads() const {
    ParamGrads<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.size(), T(0));
    return g;
  }

  // Rejects inputs with the wrong channel count or sizes not divisible by 16.
  void check_input(int channels, int height, int width) const {
    if (channels != config_.input_channels) {
      throw InvalidArgument("network expects " + std::to_string(config_.input_channels) +
                            " input channels, got " + std::to_string(channels));
    }
    if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
      throw InvalidArgument("input " + shape_string(height, width) +
                            " is not divisible by 16 (four 2x2 poolings)");
    }
  }

  // Inference: dropout off, no caching, safe to call concurrently.
  [[nodiscard]] Prediction<T> forward(const Tensor<T>& image) const {
    ForwardCache<T> cache;
    run_forward(image, nullptr, cache, /*keep=*/false);
    return std::move(cache.prediction);
  }

  // Training-mode forward. Dropout is drawn from `rng` when it is non-null;
  // pass nullptr for a deterministic pass that still fills the cache.
  Prediction<T> forward_train(const Tensor<T>& image, std::mt19937_64* rng,
                              ForwardCache<T>& cache) const {
    run_forward(image, rng, cache, /*keep=*/true);
    return cache.prediction;
  }

  // Accumulates parameter gradients for dL/dlogits (absent: localization
  // branch not in the loss) and dL/dcount. Without a logit gradient the
  // decoder is never visited, so its gradient buffers are left untouched.
  void backward(const ForwardCache<T>& cache, const Grid<double>* grad_logits,
                double grad_count, ParamGrads<T>& grads) const;

  [[nodiscard]] std::vector<LayerRow> describe() const;

 private:
  struct ConvRef {
    int weight = -1;
    int bias = -1;
    int in = 0;
    int out = 0;
    int k = 3;
  };
  struct DenseRef {
    int weight = -1;
    int bias = -1;
    int in = 0;
    int out = 0;
  };

  ConvRef add_conv(const std::string& name, ParamGroup g, int in, int out, int k) {
    ConvRef r{static_cast<int>(params_.size()), static_cast<int>(params_.size()) + 1, in, out, k};
    params_.push_back({name + ".weight", g, {out, in, k, k},
                       std::vector<T>(static_cast<std::size_t>(out) * in * k * k, T(0))});
    params_.push_back({name + ".bias", g, {out}, std::vector<T>(out, T(0))});
    return r;
  }
  DenseRef add_dense(const std::string& name, ParamGroup g, int in, int out) {
    DenseRef r{static_cast<int>(params_.size()), static_cast<int>(params_.size()) + 1, in, out};
    params_.push_back({name + ".weight", g, {out, in},
                       std::vector<T>(static_cast<std::size_t>(out) * in, T(0))});
    params_.push_back({name + ".bias", g, {out}, std::vector<T>(out, T(0))});
    return r;
  }

  void build() {
    const auto& ch = config_.encoder_channels;
    int in = config_.input_channels;
    for (int b = 0; b < 4; ++b) {
      const std::string n = "encoder" + std::to_string(b + 1);
      enc_[b][0] = add_conv(n + ".conv1", ParamGroup::SharedEncoder, in, ch[b], 3);
      enc_[b][1] = add_conv(n + ".conv2", ParamGroup::SharedEncoder, ch[b], ch[b], 3);
      in = ch[b];
    }
    const int bc = config_.bottleneck_channels;
    bott_[0] = add_conv("bottleneck.conv1", ParamGroup::SharedEncoder, in, bc, 3);
    bott_[1] = add_conv("bottleneck.conv2", ParamGroup::SharedEncoder, bc, bc, 3);
    int prev = bc;
    for (int s = 0; s < 4; ++s) {
      const int level = 3 - s;
      dec_[s] = add_conv("decoder" + std::to_string(level + 1) + ".conv",
                         ParamGroup::LocalizationDecoder, prev + ch[level], ch[level], 3);
      prev = ch[level];
    }
    head_ = add_conv("localization_head", ParamGroup::LocalizationDecoder, ch[0], 1, 1);
    const auto& du = config_.dense_units;
    dense_[0] = add_dense("count.dense1", ParamGroup::CountingHead, bc, du[0]);
    dense_[1] = add_dense("count.dense2", ParamGroup::CountingHead, du[0], du[1]);
    dense_[2] = add_dense("count.output", ParamGroup::CountingHead, du[1], 1);
  }

  // He-normal weights, zero biases.
  void initialize() {
    std::mt19937_64 rng(config_.init_seed);
    for (auto& p : params_) {
      if (p.shape.size() == 1) continue;
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < p.shape.size(); ++i) fan_in *= p.shape[i];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : p.value) v = static_cast<T>(dist(rng));
    }
    params_[dense_[2].bias].value[0] = static_cast<T>(config_.count_bias_init);
  }

  std::span<const T> value(int idx) const { return params_[idx].value; }

  Tensor<T> conv(const ConvRef& r, const Tensor<T>& x) const {
    return layers::conv_forward<T>(x, value(r.weight), value(r.bias), r.out, r.k);
  }

  void conv_grad(const ConvRef& r, const Tensor<T>& x, const Tensor<T>& gout, ParamGrads<T>& g,
                 Tensor<T>* gin) const {
    layers::conv_backward<T>(x, value(r.weight), gout, r.k, g[r.weight], g[r.bias], gin);
  }

  void run_forward(const Tensor<T>& image, std::mt19937_64* rng, ForwardCache<T>& cache,
                   bool keep) const;

  NetworkConfig config_;
  std::vector<Param<T>> params_;
  std::array<std::array<ConvRef, 2>, 4> enc_{};
  std::array<ConvRef, 2> bott_{};
  std::array<ConvRef, 4> dec_{};
  ConvRef head_{};
  std::array<DenseRef, 3> dense_{};
};

template <typename T>
void Network<T>::run_forward(const Tensor<T>& image, std::mt19937_64* rng,
                             ForwardCache<T>& cache, bool keep) const {
  check_input(image.channels, image.height, image.width);
  const double rate = rng ? config_.dropout_rate : 0.0;
  std::mt19937_64 unused;
  auto& drng = rng ? *rng : unused;

  auto conv_pair = [&](const std::array<ConvRef, 2>& refs, Tensor<T> x,
                       typename ForwardCache<T>::ConvPair& slot) {
    Tensor<T> a = conv(refs[0], x);
    layers::relu_inplace(a.data);
    layers::dropout_forward(a.data, rate, drng, slot.dropout_mask);
    Tensor<T> out = conv(refs[1], a);
    layers::relu_inplace(out.data);
    if (keep) {
      slot.input = std::move(x);
      slot.dropped = std::move(a);
    }
    return out;
  };

  std::array<Tensor<T>, 4> skips;
  Tensor<T> x = image;
  for (int b = 0; b < 4; ++b) {
    auto& slot = cache.encoder[b];
    skips[b] = conv_pair(enc_[b], std::move(x), slot);
    x = layers::maxpool_forward(skips[b], keep ? &slot.argmax : nullptr);
  }
  Tensor<T> feat = conv_pair(bott_, std::move(x), cache.bottleneck);

  // counting head
  auto gap = layers::global_average_pool(feat);
  auto h1 = layers::dense_forward<T>(gap, value(dense_[0].weight), value(dense_[0].bias));
  layers::relu_inplace(h1);
  auto h2 = layers::dense_forward<T>(h1, value(dense_[1].weight), value(dense_[1].bias));
  layers::relu_inplace(h2);
  const auto out = layers::dense_forward<T>(h2, value(dense_[2].weight), value(dense_[2].bias));
  cache.prediction.count_estimate = static_cast<double>(out[0]);

  // localization decoder
  Tensor<T> d = feat;
  for (int s = 0; s < 4; ++s) {
    const int level = 3 - s;
    Tensor<T> cat = layers::concat(layers::upsample_forward(d), skips[level]);
    d = conv(dec_[s], cat);
    layers::relu_inplace(d.data);
    if (keep) {
      cache.decoder[s].concat = std::move(cat);
      cache.decoder[s].output = d;
    }
  }
  const Tensor<T> logits = conv(head_, d);
  auto& probs = cache.prediction.mask_probs;
  probs = Grid<T>(image.height, image.width);
  constexpr double lo = 1e-7;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = layers::sigmoid(static_cast<double>(logits.data[i]));
    probs.data[i] = static_cast<T>(std::clamp(p, lo, 1.0 - lo));
  }

  if (keep) {
    for (int b = 0; b < 4; ++b) cache.encoder[b].output = std::move(skips[b]);
    cache.bottleneck.output = std::move(feat);
    cache.gap = std::move(gap);
    cache.hidden1 = std::move(h1);
    cache.hidden2 = std::move(h2);
  } else {
    cache.gap = std::move(gap);
  }
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, const Grid<double>* grad_logits,
                          double grad_count, ParamGrads<T>& grads) const {
  detail::require(grads.size() == params_.size(), "gradient buffer does not match the network");
  const auto& feat = cache.bottleneck.output;
  Tensor<T> g_feat(feat.channels, feat.height, feat.width);

  // counting head
  {
    const std::array<T, 1> g_out{static_cast<T>(grad_count)};
    auto g_h2 = layers::dense_backward<T>(cache.hidden2, value(dense_[2].weight), g_out,
                                          grads[dense_[2].weight], grads[dense_[2].bias]);
    layers::relu_backward_inplace(cache.hidden2, g_h2);
    auto g_h1 = layers::dense_backward<T>(cache.hidden1, value(dense_[1].weight), g_h2,
                                          grads[dense_[1].weight], grads[dense_[1].bias]);
    layers::relu_backward_inplace(cache.hidden1, g_h1);
    auto g_gap = layers::dense_backward<T>(cache.gap, value(dense_[0].weight), g_h1,
                                           grads[dense_[0].weight], grads[dense_[0].bias]);
    g_feat = layers::global_average_pool_backward<T>(g_gap, feat.height, feat.width);
  }

  std::array<Tensor<T>, 4> g_skip;
  for (int b = 0; b < 4; ++b) {
    const auto& o = cache.encoder[b].output;
    g_skip[b] = Tensor<T>(o.channels, o.height, o.width);
  }

  // localization decoder, visited only when its output is in the loss
  if (grad_logits != nullptr) {
    const auto& last = cache.decoder[3].output;
    detail::require(grad_logits->height == last.height && grad_logits->width == last.width,
                    "logit gradient shape does not match the prediction");
    Tensor<T> g_logit(1, last.height, last.width);
    for (std::size_t i = 0; i < g_logit.size(); ++i) {
      g_logit.data[i] = static_cast<T>(grad_logits->data[i]);
    }
    Tensor<T> g_d;
    conv_grad(head_, last, g_logit, grads, &g_d);
    for (int s = 3; s >= 0; --s) {
      const int level = 3 - s;
      const auto& stage = cache.decoder[s];
      layers::relu_backward_inplace(stage.output.data, g_d.data);
      Tensor<T> g_cat;
      conv_grad(dec_[s], stage.concat, g_d, grads, &g_cat);
      const int up_channels = g_cat.channels - config_.encoder_channels[level];
      Tensor<T> g_up, g_sk;
      layers::split_channels(g_cat, up_channels, g_up, g_sk);
      for (std::size_t i = 0; i < g_sk.size(); ++i) g_skip[level].data[i] += g_sk.data[i];
      g_d = layers::upsample_backward(g_up);
    }
    for (std::size_t i = 0; i < g_feat.size(); ++i) g_feat.data[i] += g_d.data[i];
  }

  auto conv_pair_backward = [&](const std::array<ConvRef, 2>& refs,
                                const typename ForwardCache<T>::ConvPair& slot, Tensor<T> g_out,
                                bool need_input_grad) {
    layers::relu_backward_inplace(slot.output.data, g_out.data);
    Tensor<T> g_a;
    conv_grad(refs[1], slot.dropped, g_out, grads, &g_a);
    layers::dropout_backward(slot.dropout_mask, g_a.data);
    layers::relu_backward_inplace(slot.dropped.data, g_a.data);
    Tensor<T> g_in;
    conv_grad(refs[0], slot.input, g_a, grads, need_input_grad ? &g_in : nullptr);
    return g_in;
  };

  Tensor<T> g_x = conv_pair_backward(bott_, cache.bottleneck, std::move(g_feat), true);
  for (int b = 3; b >= 0; --b) {
    const auto& slot = cache.encoder[b];
    Tensor<T> g_out = layers::maxpool_backward(g_x, slot.argmax, slot.output.height,
                                               slot.output.width);
    for (std::size_t i = 0; i < g_out.size(); ++i) g_out.data[i] += g_skip[b].data[i];
    g_x = conv_pair_backward(enc_[b], slot, std::move(g_out), b > 0);
  }
}

template <typename T>
std::vector<LayerRow> Network<T>::describe() const {
  std::vector<LayerRow> rows;
  auto conv_row = [&](const ConvRef& r) {
    const auto& w = params_[r.weight];
    std::string name = w.name.substr(0, w.name.size() - std::string(".weight").size());
    rows.push_back({name, r.k == 1 ? "conv1x1+sigmoid" : "conv3x3+relu", w.group, r.in, r.out,
                    r.k, w.value.size() + params_[r.bias].value.size()});
  };
  for (const auto& b : enc_) {
    conv_row(b[0]);
    conv_row(b[1]);
  }
  conv_row(bott_[0]);
  conv_row(bott_[1]);
  for (const auto& d : dec_) conv_row(d);
  conv_row(head_);
  for (int i = 0; i < 3; ++i) {
    const auto& r = dense_[i];
    const auto& w = params_[r.weight];
    std::string name = w.name.substr(0, w.name.size() - std::string(".weight").size());
    rows.push_back({name, i < 2 ? "dense+relu" : "dense(linear)", w.group, r.in, r.out, 0,
                    w.value.size() + params_[r.bias].value.size()});
  }
  return rows;
}

using MultitaskNetwork = Network<float>;

}  // namespace cellmt
