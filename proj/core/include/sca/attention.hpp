#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sca/encoder.hpp"
#include "sca/parameters.hpp"
#include "sca/tape.hpp"

namespace sca {

enum class AttentionOrder {
  ChannelFirst,  // C-S: channel weights, then spatial weights on the
                 // channel-modulated map
  SpatialFirst,  // S-C: spatial weights, then channel weights on the
                 // spatially modulated map
  SpatialOnly,   // S
  ChannelOnly,   // C
};

std::string to_string(AttentionOrder order);  // "cs", "sc", "s", "c"
AttentionOrder parse_attention_order(const std::string& name);
bool uses_spatial(AttentionOrder order);
bool uses_channel(AttentionOrder order);

struct ModulationConfig {
  // Multiply by W*H per applied spatial vector and by C per applied channel
  // vector, so uniform weights leave the map unchanged.
  bool rescale = true;

  friend bool operator==(const ModulationConfig&,
                         const ModulationConfig&) = default;
};

// Spatial attention, one per attentive layer (k = common dimension).
//   a     = tanh((feature_proj * V + feature_bias) (+) hidden_proj * h)
//   alpha = softmax(score^T a + score_bias)
// feature_proj [k x C], feature_bias [k], hidden_proj [k x d], score [k],
// score_bias [1]. (+) adds a k-vector to every column.
struct SpatialAttentionParams {
  Tensor feature_proj, feature_bias, hidden_proj, score, score_bias;
};

// Channel-wise attention on the per-channel spatial means v.
//   b    = tanh((feature_proj (x) v + feature_bias) (+) hidden_proj * h)
//   beta = softmax(score^T b + score_bias)
// feature_proj [k], feature_bias [k], hidden_proj [k x d], score [k],
// score_bias [1]. (x) is the outer product.
struct ChannelAttentionParams {
  Tensor feature_proj, feature_bias, hidden_proj, score, score_bias;
};

struct AttentionParams {
  std::optional<SpatialAttentionParams> spatial;
  std::optional<ChannelAttentionParams> channel;

  // Zero-filled parameters for a layer with `channels` channels, hidden size
  // `hidden` and common dimension `common`, holding only what `order` uses.
  static AttentionParams zeros(std::size_t channels, std::size_t hidden,
                               std::size_t common, AttentionOrder order);

  // Names are "<prefix>spatial.feature_proj", "<prefix>channel.score", ...
  void export_to(ParameterSet& out, const std::string& prefix) const;
  static AttentionParams import_from(const ParameterSet& in,
                                     const std::string& prefix,
                                     AttentionOrder order);
};

struct SpatialAttentionVars {
  Var feature_proj, feature_bias, hidden_proj, score, score_bias;
};
struct ChannelAttentionVars {
  Var feature_proj, feature_bias, hidden_proj, score, score_bias;
};
struct AttentionVars {
  std::optional<SpatialAttentionVars> spatial;
  std::optional<ChannelAttentionVars> channel;
};

AttentionVars bind_attention(Tape& tape, const AttentionParams& params);
AttentionVars bind_attention(const BoundParameters& bound,
                             const std::string& prefix, AttentionOrder order);

// alpha over the W*H locations (location_index order) of `feature_map`.
Var spatial_attention(Var feature_map, Var hidden,
                      const SpatialAttentionVars& params);
// beta over the C channels of `feature_map`.
Var channel_attention(Var feature_map, Var hidden,
                      const ChannelAttentionVars& params);

// X[w,h,c] = V[w,h,c] * alpha[loc(w,h)] * beta[c]; an absent vector counts as
// ones. alpha is applied before beta.
Var modulate(Var feature_map, std::optional<Var> alpha, std::optional<Var> beta,
             const ModulationConfig& config);

struct AttendResult {
  Var alpha;      // uniform placeholder when the order has no spatial step
  Var beta;       // uniform placeholder when the order has no channel step
  Var modulated;  // X
};

AttendResult attend(Var feature_map, Var hidden, const AttentionVars& params,
                    AttentionOrder order, const ModulationConfig& config);

// Attention weights of one layer as plain values.
struct AttentionWeights {
  std::size_t layer = 0;
  std::size_t width = 0, height = 0;
  Tensor alpha;  // [W*H], location_index order
  Tensor beta;   // [C]
};

struct AttentiveLayer {
  std::size_t layer = 0;  // index into the encoder's map list
  AttentionVars params;
  AttentionOrder order = AttentionOrder::ChannelFirst;
};

struct LayerAttention {
  std::size_t layer = 0;
  Var alpha, beta;
};

struct MultiLayerResult {
  Var output;  // X^L
  std::vector<LayerAttention> weights;
};

// Checks that `layers` is a contiguous, increasing suffix of [0, depth].
void validate_attentive_layers(std::span<const std::size_t> layers,
                               std::size_t depth);

// V^l = CNN(X^{l-1}), X^l = f(V^l, attend(V^l)) for attentive l, X^l = V^l
// otherwise. `plain_maps` are the unattended encoder outputs (encode()); the
// layers before the first attentive one are reused from them, the rest are
// recomputed from the modulated maps. All layers see the same `hidden`.
MultiLayerResult multi_layer_pass(std::span<const Var> plain_maps,
                                  const EncoderConfig& encoder,
                                  std::span<const ConvWeights> conv_weights,
                                  Var hidden,
                                  std::span<const AttentiveLayer> attentive,
                                  const ModulationConfig& config);

// Convenience overload that runs the encoder first.
MultiLayerResult multi_layer_pass(Var input, const EncoderConfig& encoder,
                                  std::span<const ConvWeights> conv_weights,
                                  Var hidden,
                                  std::span<const AttentiveLayer> attentive,
                                  const ModulationConfig& config);

struct AttentionMemoryCost {
  std::uint64_t joint = 0;             // W*H*C*k
  std::uint64_t factored_spatial = 0;  // W*H*k
  std::uint64_t factored_channel = 0;  // C*k

  std::uint64_t factored() const { return factored_spatial + factored_channel; }
  double reduction() const {
    return static_cast<double>(joint) / static_cast<double>(factored());
  }
};

// Throws DomainError unless every argument is positive.
AttentionMemoryCost attention_memory_cost(std::int64_t width,
                                          std::int64_t height,
                                          std::int64_t channels,
                                          std::int64_t common);

}  // namespace sca
