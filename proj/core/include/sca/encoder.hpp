#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sca/serialize.hpp"
#include "sca/tape.hpp"
#include "sca/tensor.hpp"

namespace sca {

// Identity is a linear pass-through, used to test the convolution itself.
enum class Nonlinearity { Tanh, Relu, Identity };

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& name);

struct ConvLayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;  // odd; same padding
  Nonlinearity nonlinearity = Nonlinearity::Tanh;
  bool pool = false;  // 2x2 mean pool after the nonlinearity

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

enum class EncoderMode {
  TinyCNN,           // trainable convolution stack
  FeatureInjection,  // input is a precomputed W x H x C map, no convolution
};

struct EncoderConfig {
  EncoderMode mode = EncoderMode::TinyCNN;
  Shape input_shape;  // W x H x C of maps[0]
  std::vector<ConvLayerSpec> layers;
  // Append two fixed planes (x and y ramps in [-1, 1]) to the input of the
  // first convolution, so later layers can tell locations apart.
  bool coordinate_planes = false;

  // 16x16x3 input; 3(+2)->8 3x3 tanh + pool; 8->16 3x3 tanh.
  static EncoderConfig tiny_default();
  static EncoderConfig feature_injection(std::size_t width, std::size_t height,
                                         std::size_t channels);

  std::size_t depth() const { return layers.size(); }
  // Shape of maps[index] for index in [0, depth()].
  Shape map_shape(std::size_t index) const;
  // Throws ConfigError when channel counts do not chain, kernels are even,
  // or pooling would need an odd extent.
  void validate() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ConvWeights {
  Var weight;  // [out x in x K x K]
  Var bias;    // [out]
};

// Convolution, nonlinearity, then optional pooling.
Var conv_forward(Var input, const ConvLayerSpec& spec, const ConvWeights& w);

// Appends the coordinate planes to a W x H x C map.
Var append_coordinate_planes(Var input);

// Every layer's output, input included at index 0 (size depth() + 1).
std::vector<Var> encode(Var input, const EncoderConfig& config,
                        std::span<const ConvWeights> weights);

// Rank-3 SCAT file, axes (W, H, C). Throws FormatError on a bad file.
Tensor load_feature_map(const std::filesystem::path& path);
void save_feature_map(const std::filesystem::path& path, const Tensor& map,
                      DType dtype = DType::F64);

}  // namespace sca
