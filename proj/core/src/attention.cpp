#include "sca/attention.hpp"

#include <algorithm>

#include "sca/errors.hpp"
#include "sca/ops.hpp"

namespace sca {

std::string to_string(AttentionOrder order) {
  switch (order) {
    case AttentionOrder::ChannelFirst: return "cs";
    case AttentionOrder::SpatialFirst: return "sc";
    case AttentionOrder::SpatialOnly: return "s";
    case AttentionOrder::ChannelOnly: return "c";
  }
  return "?";
}

AttentionOrder parse_attention_order(const std::string& name) {
  if (name == "cs") return AttentionOrder::ChannelFirst;
  if (name == "sc") return AttentionOrder::SpatialFirst;
  if (name == "s") return AttentionOrder::SpatialOnly;
  if (name == "c") return AttentionOrder::ChannelOnly;
  throw ConfigError("unknown attention order '" + name +
                    "', expected cs, sc, s or c");
}

bool uses_spatial(AttentionOrder order) {
  return order != AttentionOrder::ChannelOnly;
}

bool uses_channel(AttentionOrder order) {
  return order != AttentionOrder::SpatialOnly;
}

AttentionParams AttentionParams::zeros(std::size_t channels, std::size_t hidden,
                                       std::size_t common,
                                       AttentionOrder order) {
  AttentionParams p;
  if (uses_spatial(order)) {
    p.spatial = SpatialAttentionParams{
        Tensor::zeros({common, channels}), Tensor::zeros({common}),
        Tensor::zeros({common, hidden}), Tensor::zeros({common}),
        Tensor::zeros({1})};
  }
  if (uses_channel(order)) {
    p.channel = ChannelAttentionParams{
        Tensor::zeros({common}), Tensor::zeros({common}),
        Tensor::zeros({common, hidden}), Tensor::zeros({common}),
        Tensor::zeros({1})};
  }
  return p;
}

void AttentionParams::export_to(ParameterSet& out,
                                const std::string& prefix) const {
  if (spatial) {
    out.set(prefix + "spatial.feature_proj", spatial->feature_proj);
    out.set(prefix + "spatial.feature_bias", spatial->feature_bias);
    out.set(prefix + "spatial.hidden_proj", spatial->hidden_proj);
    out.set(prefix + "spatial.score", spatial->score);
    out.set(prefix + "spatial.score_bias", spatial->score_bias);
  }
  if (channel) {
    out.set(prefix + "channel.feature_proj", channel->feature_proj);
    out.set(prefix + "channel.feature_bias", channel->feature_bias);
    out.set(prefix + "channel.hidden_proj", channel->hidden_proj);
    out.set(prefix + "channel.score", channel->score);
    out.set(prefix + "channel.score_bias", channel->score_bias);
  }
}

AttentionParams AttentionParams::import_from(const ParameterSet& in,
                                             const std::string& prefix,
                                             AttentionOrder order) {
  AttentionParams p;
  if (uses_spatial(order)) {
    p.spatial = SpatialAttentionParams{
        in.get(prefix + "spatial.feature_proj"),
        in.get(prefix + "spatial.feature_bias"),
        in.get(prefix + "spatial.hidden_proj"), in.get(prefix + "spatial.score"),
        in.get(prefix + "spatial.score_bias")};
  }
  if (uses_channel(order)) {
    p.channel = ChannelAttentionParams{
        in.get(prefix + "channel.feature_proj"),
        in.get(prefix + "channel.feature_bias"),
        in.get(prefix + "channel.hidden_proj"), in.get(prefix + "channel.score"),
        in.get(prefix + "channel.score_bias")};
  }
  return p;
}

AttentionVars bind_attention(Tape& tape, const AttentionParams& params) {
  AttentionVars vars;
  if (params.spatial) {
    const auto& s = *params.spatial;
    vars.spatial = SpatialAttentionVars{
        tape.leaf(s.feature_proj), tape.leaf(s.feature_bias),
        tape.leaf(s.hidden_proj), tape.leaf(s.score), tape.leaf(s.score_bias)};
  }
  if (params.channel) {
    const auto& c = *params.channel;
    vars.channel = ChannelAttentionVars{
        tape.leaf(c.feature_proj), tape.leaf(c.feature_bias),
        tape.leaf(c.hidden_proj), tape.leaf(c.score), tape.leaf(c.score_bias)};
  }
  return vars;
}

AttentionVars bind_attention(const BoundParameters& bound,
                             const std::string& prefix, AttentionOrder order) {
  AttentionVars vars;
  if (uses_spatial(order)) {
    vars.spatial = SpatialAttentionVars{
        bound[prefix + "spatial.feature_proj"],
        bound[prefix + "spatial.feature_bias"],
        bound[prefix + "spatial.hidden_proj"], bound[prefix + "spatial.score"],
        bound[prefix + "spatial.score_bias"]};
  }
  if (uses_channel(order)) {
    vars.channel = ChannelAttentionVars{
        bound[prefix + "channel.feature_proj"],
        bound[prefix + "channel.feature_bias"],
        bound[prefix + "channel.hidden_proj"], bound[prefix + "channel.score"],
        bound[prefix + "channel.score_bias"]};
  }
  return vars;
}

namespace {

void require_map(const Var& v, const char* op) {
  if (v.value().rank() != 3) {
    throw DimensionError(std::string(op) + ": feature map must be W x H x C, got " +
                         shape_to_string(v.shape()));
  }
}

Var uniform(Tape& tape, std::size_t n) {
  return tape.constant(Tensor::full({n}, 1.0 / static_cast<double>(n)));
}

}  // namespace

Var spatial_attention(Var feature_map, Var hidden,
                      const SpatialAttentionVars& p) {
  require_map(feature_map, "spatial_attention");
  Var columns = flatten_spatial(feature_map);                  // C x m
  Var projected = matmul(p.feature_proj, columns);             // k x m
  projected = broadcast_add_col(projected, p.feature_bias);
  Var a = tanh_map(broadcast_add_col(projected, matvec(p.hidden_proj, hidden)));
  return softmax(add_scalar(vecmat(p.score, a), p.score_bias));  // m
}

Var channel_attention(Var feature_map, Var hidden,
                      const ChannelAttentionVars& p) {
  require_map(feature_map, "channel_attention");
  Var means = mean_pool_spatial(feature_map);                  // C
  Var projected = outer(p.feature_proj, means);                // k x C
  projected = broadcast_add_col(projected, p.feature_bias);
  Var b = tanh_map(broadcast_add_col(projected, matvec(p.hidden_proj, hidden)));
  return softmax(add_scalar(vecmat(p.score, b), p.score_bias));  // C
}

Var modulate(Var feature_map, std::optional<Var> alpha, std::optional<Var> beta,
             const ModulationConfig& config) {
  require_map(feature_map, "modulate");
  const Shape& shape = feature_map.shape();
  Var x = feature_map;
  if (alpha) {
    Var w = *alpha;
    if (config.rescale) w = scale(w, static_cast<double>(shape[0] * shape[1]));
    x = hadamard(x, w, BroadcastAxis::Spatial);
  }
  if (beta) {
    Var w = *beta;
    if (config.rescale) w = scale(w, static_cast<double>(shape[2]));
    x = hadamard(x, w, BroadcastAxis::Channel);
  }
  return x;
}

AttendResult attend(Var feature_map, Var hidden, const AttentionVars& params,
                    AttentionOrder order, const ModulationConfig& config) {
  require_map(feature_map, "attend");
  if (uses_spatial(order) && !params.spatial) {
    throw ConfigError("attend: order " + to_string(order) +
                      " needs spatial attention parameters");
  }
  if (uses_channel(order) && !params.channel) {
    throw ConfigError("attend: order " + to_string(order) +
                      " needs channel attention parameters");
  }
  Tape& tape = *feature_map.tape;
  const Shape& shape = feature_map.shape();
  const std::size_t locations = shape[0] * shape[1], channels = shape[2];

  AttendResult r;
  switch (order) {
    case AttentionOrder::ChannelFirst: {
      r.beta = channel_attention(feature_map, hidden, *params.channel);
      Var weighted = modulate(feature_map, std::nullopt, r.beta, config);
      r.alpha = spatial_attention(weighted, hidden, *params.spatial);
      r.modulated = modulate(feature_map, r.alpha, r.beta, config);
      break;
    }
    case AttentionOrder::SpatialFirst: {
      r.alpha = spatial_attention(feature_map, hidden, *params.spatial);
      Var weighted = modulate(feature_map, r.alpha, std::nullopt, config);
      r.beta = channel_attention(weighted, hidden, *params.channel);
      r.modulated = modulate(feature_map, r.alpha, r.beta, config);
      break;
    }
    case AttentionOrder::SpatialOnly:
      r.alpha = spatial_attention(feature_map, hidden, *params.spatial);
      r.beta = uniform(tape, channels);
      r.modulated = modulate(feature_map, r.alpha, std::nullopt, config);
      break;
    case AttentionOrder::ChannelOnly:
      r.beta = channel_attention(feature_map, hidden, *params.channel);
      r.alpha = uniform(tape, locations);
      r.modulated = modulate(feature_map, std::nullopt, r.beta, config);
      break;
  }
  return r;
}

void validate_attentive_layers(std::span<const std::size_t> layers,
                               std::size_t depth) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] > depth) {
      throw ConfigError("attentive layer " + std::to_string(layers[i]) +
                        " out of range, encoder has maps 0.." +
                        std::to_string(depth));
    }
    const std::size_t expected = depth + 1 - layers.size() + i;
    if (layers[i] != expected) {
      throw ConfigError(
          "attentive layers must be a contiguous suffix of the encoder, "
          "expected layer " +
          std::to_string(expected) + " at position " + std::to_string(i));
    }
  }
}

MultiLayerResult multi_layer_pass(std::span<const Var> plain_maps,
                                  const EncoderConfig& encoder,
                                  std::span<const ConvWeights> conv_weights,
                                  Var hidden,
                                  std::span<const AttentiveLayer> attentive,
                                  const ModulationConfig& config) {
  const std::size_t depth = encoder.depth();
  if (plain_maps.size() != depth + 1) {
    throw ConfigError("multi_layer_pass: expected " +
                      std::to_string(depth + 1) + " encoder maps, got " +
                      std::to_string(plain_maps.size()));
  }
  std::vector<std::size_t> indices;
  for (const auto& a : attentive) indices.push_back(a.layer);
  validate_attentive_layers(indices, depth);

  MultiLayerResult result;
  if (attentive.empty()) {
    result.output = plain_maps.back();
    return result;
  }
  const std::size_t first = attentive.front().layer;
  Var x = plain_maps[first];
  for (std::size_t l = first; l <= depth; ++l) {
    if (l > first) {
      Var in = x;
      if (l == 1 && encoder.coordinate_planes) in = append_coordinate_planes(in);
      x = conv_forward(in, encoder.layers[l - 1], conv_weights[l - 1]);
    }
    const AttentiveLayer& layer = attentive[l - first];
    AttendResult r = attend(x, hidden, layer.params, layer.order, config);
    result.weights.push_back(LayerAttention{l, r.alpha, r.beta});
    x = r.modulated;
  }
  result.output = x;
  return result;
}

MultiLayerResult multi_layer_pass(Var input, const EncoderConfig& encoder,
                                  std::span<const ConvWeights> conv_weights,
                                  Var hidden,
                                  std::span<const AttentiveLayer> attentive,
                                  const ModulationConfig& config) {
  std::vector<Var> maps = encode(input, encoder, conv_weights);
  return multi_layer_pass(maps, encoder, conv_weights, hidden, attentive,
                          config);
}

AttentionMemoryCost attention_memory_cost(std::int64_t width,
                                          std::int64_t height,
                                          std::int64_t channels,
                                          std::int64_t common) {
  if (width <= 0 || height <= 0 || channels <= 0 || common <= 0) {
    throw DomainError("attention_memory_cost: all extents must be positive");
  }
  const auto w = static_cast<std::uint64_t>(width);
  const auto h = static_cast<std::uint64_t>(height);
  const auto c = static_cast<std::uint64_t>(channels);
  const auto k = static_cast<std::uint64_t>(common);
  return AttentionMemoryCost{w * h * c * k, w * h * k, c * k};
}

}  // namespace sca
