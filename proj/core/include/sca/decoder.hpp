#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sca/attention.hpp"
#include "sca/beam_search.hpp"
#include "sca/encoder.hpp"
#include "sca/parameters.hpp"
#include "sca/serialize.hpp"
#include "sca/vocabulary.hpp"

namespace sca {

struct DecoderDims {
  std::size_t embed = 16;      // e, word embedding
  std::size_t hidden = 48;     // d, LSTM state
  std::size_t visual = 32;     // d_v, vectorized attended map
  std::size_t attention = 24;  // k, common attention space

  friend bool operator==(const DecoderDims&, const DecoderDims&) = default;
};

struct ModelConfig {
  EncoderConfig encoder = EncoderConfig::tiny_default();
  AttentionOrder order = AttentionOrder::ChannelFirst;
  ModulationConfig modulation;
  std::size_t attentive_layers = 1;  // how many trailing encoder maps attend
  DecoderDims dims;
  std::size_t vocab_size = 0;

  // Map indices that carry attention, e.g. {2} or {1, 2} for a 2-layer CNN.
  std::vector<std::size_t> attentive_layer_indices() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Configuration plus named parameters.
//
// Parameter names:
//   encoder.<l>.weight / .bias
//   attention.<l>.spatial.* / attention.<l>.channel.*
//   decoder.embedding                      [|D| x e], PAD row zero at init
//   decoder.visual_proj / .visual_bias     [d_v x C_L] / [d_v]
//   decoder.lstm.<gate>.weight / .bias     [d x (d_v + e + d)] / [d],
//                                          gate in {input, forget, output, cell}
//   decoder.output.hidden_proj             [|D| x d]
//   decoder.output.word_proj               [|D| x e]
//   decoder.output.bias                    [|D|]
class CaptionModel {
 public:
  CaptionModel(ModelConfig config, ParameterSet params);

  // uniform(-range, range) everywhere, forget-gate bias 1, PAD embedding 0.
  // Each tensor draws from its own stream keyed by (seed, name).
  static CaptionModel initialize(const ModelConfig& config, std::uint64_t seed,
                                 double range = 0.08);
  // Every parameter name with its shape (zero-filled).
  static ParameterSet parameter_layout(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  // Checkpoint form: "meta.*" configuration entries, then parameters.
  NamedTensors to_archive() const;
  static CaptionModel from_archive(const NamedTensors& entries);
  void save(const std::filesystem::path& path) const;
  static CaptionModel load(const std::filesystem::path& path);

 private:
  ModelConfig config_;
  ParameterSet params_;
};

struct DecoderState {
  Var h;
  Var c;
  std::size_t t = 0;
};

struct LstmVars {
  Var input_weight, input_bias;
  Var forget_weight, forget_bias;
  Var output_weight, output_bias;
  Var cell_weight, cell_bias;
};

struct OutputVars {
  Var hidden_proj, word_proj, bias;
};

// Row `token` of the embedding table. Throws VocabularyError when out of range.
Var embed(Var table, TokenId token);

// Standard LSTM cell over z = [x; h_prev]:
//   i, f, o = sigmoid(W z + b), g = tanh(W_g z + b_g)
//   c = f * c_prev + i * g, h = o * tanh(c)
DecoderState lstm_step(const DecoderState& state, Var x, const LstmVars& p);

// softmax(hidden_proj * h + word_proj * embed(y_prev) + bias)
Var output_distribution(Var h, Var previous_embedding, const OutputVars& p);

// A CaptionModel bound to one tape and one image.
class CaptionGraph {
 public:
  CaptionGraph(Tape& tape, const CaptionModel& model);

  // Records the image and its unattended encoder maps.
  void set_image(const Tensor& image);

  DecoderState initial_state() const;

  struct Step {
    DecoderState state;
    Var probs;
    std::vector<LayerAttention> attention;
  };
  // One word: attends with state.h, feeds [visual; embed(previous)] to the
  // LSTM, and predicts the next token. `dropout_mask` scales h before the
  // output layer.
  Step step(const DecoderState& state, TokenId previous,
            const Tensor* dropout_mask = nullptr);

  const BoundParameters& params() const { return bound_; }
  Tape& tape() { return *tape_; }
  const CaptionModel& model() const { return *model_; }
  const std::vector<Var>& plain_maps() const { return plain_maps_; }

 private:
  Tape* tape_;
  const CaptionModel* model_;
  BoundParameters bound_;
  std::vector<ConvWeights> conv_;
  std::vector<AttentiveLayer> attentive_;
  LstmVars lstm_;
  OutputVars output_;
  Var embedding_, visual_proj_, visual_bias_;
  std::vector<Var> plain_maps_;
};

struct TeacherForcedRun {
  std::vector<Var> probs;     // one per target (caption tokens, then END)
  std::vector<TokenId> targets;
  std::vector<std::vector<LayerAttention>> attention;
};

// Feeds START + caption, predicts caption + END. `dropout_masks` is empty or
// holds one mask per step.
TeacherForcedRun run_teacher_forced(CaptionGraph& graph,
                                    const std::vector<TokenId>& caption,
                                    std::span<const Tensor> dropout_masks = {});

enum class DecodeMode { Greedy, Beam };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::Beam;
  std::size_t beam_width = 5;
  std::size_t max_len = 16;
};

struct DecodedCaption {
  std::vector<TokenId> tokens;   // without START / END
  std::vector<TokenId> emitted;  // per step, END included
  bool ended = false;
  double log_prob = 0.0;
  std::vector<double> step_log_probs;
  // attention[t] holds one entry per attentive layer for emitted[t].
  std::vector<std::vector<AttentionWeights>> attention;
};

DecodedCaption decode_caption(const CaptionModel& model, const Tensor& image,
                              const DecodeOptions& options);

}  // namespace sca
