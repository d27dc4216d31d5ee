#include "sca/encoder.hpp"

#include "sca/errors.hpp"
#include "sca/ops.hpp"

namespace sca {

std::string to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::Tanh: return "tanh";
    case Nonlinearity::Relu: return "relu";
    case Nonlinearity::Identity: return "identity";
  }
  return "?";
}

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "tanh") return Nonlinearity::Tanh;
  if (name == "relu") return Nonlinearity::Relu;
  if (name == "identity") return Nonlinearity::Identity;
  throw ConfigError("unknown nonlinearity " + name);
}

EncoderConfig EncoderConfig::tiny_default() {
  EncoderConfig config;
  config.mode = EncoderMode::TinyCNN;
  config.input_shape = {16, 16, 3};
  config.coordinate_planes = true;
  config.layers = {
      ConvLayerSpec{5, 8, 3, Nonlinearity::Tanh, true},
      ConvLayerSpec{8, 16, 3, Nonlinearity::Tanh, false},
  };
  return config;
}

EncoderConfig EncoderConfig::feature_injection(std::size_t width,
                                               std::size_t height,
                                               std::size_t channels) {
  EncoderConfig config;
  config.mode = EncoderMode::FeatureInjection;
  config.input_shape = {width, height, channels};
  return config;
}

Shape EncoderConfig::map_shape(std::size_t index) const {
  if (index > depth()) {
    throw ConfigError("map index " + std::to_string(index) +
                      " beyond encoder depth " + std::to_string(depth()));
  }
  Shape shape = input_shape;
  for (std::size_t l = 0; l < index; ++l) {
    shape[2] = layers[l].out_channels;
    if (layers[l].pool) {
      shape[0] /= 2;
      shape[1] /= 2;
    }
  }
  return shape;
}

void EncoderConfig::validate() const {
  if (input_shape.size() != 3 || shape_size(input_shape) == 0) {
    throw ConfigError("encoder input must be a W x H x C shape, got " +
                      shape_to_string(input_shape));
  }
  if (mode == EncoderMode::FeatureInjection) {
    if (!layers.empty() || coordinate_planes) {
      throw ConfigError("feature injection mode has no convolution layers");
    }
    return;
  }
  std::size_t channels = input_shape[2] + (coordinate_planes ? 2 : 0);
  std::size_t width = input_shape[0], height = input_shape[1];
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l];
    const std::string where = "layer " + std::to_string(l + 1);
    if (spec.in_channels != channels) {
      throw ConfigError(where + " expects " + std::to_string(spec.in_channels) +
                        " input channels, previous layer gives " +
                        std::to_string(channels));
    }
    if (spec.out_channels == 0) throw ConfigError(where + " has no outputs");
    if (spec.kernel % 2 == 0) {
      throw ConfigError(where + " kernel must be odd");
    }
    if (spec.pool) {
      if (width % 2 || height % 2) {
        throw ConfigError(where + " pools an odd spatial extent");
      }
      width /= 2;
      height /= 2;
    }
    channels = spec.out_channels;
  }
}

Var conv_forward(Var input, const ConvLayerSpec& spec, const ConvWeights& w) {
  const Shape& in = input.shape();
  if (in.size() != 3 || in[2] != spec.in_channels) {
    throw DimensionError("conv_forward: input " + shape_to_string(in) +
                         " does not have " +
                         std::to_string(spec.in_channels) + " channels");
  }
  const Shape expected{spec.out_channels, spec.in_channels, spec.kernel,
                       spec.kernel};
  if (w.weight.shape() != expected) {
    throw DimensionError("conv_forward: weight " +
                         shape_to_string(w.weight.shape()) + ", expected " +
                         shape_to_string(expected));
  }
  Var out = conv2d_same(input, w.weight, w.bias);
  switch (spec.nonlinearity) {
    case Nonlinearity::Tanh: out = tanh_map(out); break;
    case Nonlinearity::Relu: out = relu(out); break;
    case Nonlinearity::Identity: break;
  }
  if (spec.pool) out = mean_pool2x2(out);
  return out;
}

Var append_coordinate_planes(Var input) {
  const Tensor& in = input.value();
  if (in.rank() != 3) {
    throw RankError("append_coordinate_planes: expected W x H x C, got " +
                    shape_to_string(in.shape()));
  }
  const std::size_t width = in.dim(0), height = in.dim(1), channels = in.dim(2);
  auto ramp = [](std::size_t i, std::size_t n) {
    return n == 1 ? 0.0 : 2.0 * static_cast<double>(i) / (n - 1) - 1.0;
  };
  Tensor out({width, height, channels + 2});
  for (std::size_t w = 0; w < width; ++w)
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t c = 0; c < channels; ++c) out.at(w, h, c) = in.at(w, h, c);
      out.at(w, h, channels) = ramp(w, width);
      out.at(w, h, channels + 1) = ramp(h, height);
    }
  return input.tape->record(
      std::move(out), {input},
      [ii = input.id, width, height, channels](Tape& t, std::size_t self) {
        Tensor* gi = t.grad_target(ii);
        if (!gi) return;
        const Tensor& g = t.grad(self);
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t h = 0; h < height; ++h)
            for (std::size_t c = 0; c < channels; ++c)
              gi->at(w, h, c) += g.at(w, h, c);
      });
}

std::vector<Var> encode(Var input, const EncoderConfig& config,
                        std::span<const ConvWeights> weights) {
  if (input.shape() != config.input_shape) {
    throw DimensionError("encode: input " + shape_to_string(input.shape()) +
                         " does not match configured " +
                         shape_to_string(config.input_shape));
  }
  if (weights.size() != config.depth()) {
    throw ConfigError("encode: " + std::to_string(weights.size()) +
                      " weight sets for " + std::to_string(config.depth()) +
                      " layers");
  }
  std::vector<Var> maps{input};
  Var x = input;
  for (std::size_t l = 0; l < config.depth(); ++l) {
    if (l == 0 && config.coordinate_planes) x = append_coordinate_planes(x);
    x = conv_forward(x, config.layers[l], weights[l]);
    maps.push_back(x);
  }
  return maps;
}

Tensor load_feature_map(const std::filesystem::path& path) {
  Tensor t = load_tensor(path);
  if (t.rank() != 3) {
    // Rank byte follows magic, version and dtype.
    throw FormatError("feature map must be rank 3, file has rank " +
                          std::to_string(t.rank()),
                      6);
  }
  return t;
}

void save_feature_map(const std::filesystem::path& path, const Tensor& map,
                      DType dtype) {
  if (map.rank() != 3) {
    throw RankError("feature map must be rank 3, got " +
                    shape_to_string(map.shape()));
  }
  save_tensor(path, map, dtype);
}

}  // namespace sca
