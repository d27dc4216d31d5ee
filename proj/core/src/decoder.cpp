#include "sca/decoder.hpp"

#include <cmath>

#include "sca/errors.hpp"
#include "sca/ops.hpp"
#include "sca/random.hpp"

namespace sca {

namespace {

const char* const kGates[] = {"input", "forget", "output", "cell"};

std::string layer_prefix(const char* group, std::size_t layer) {
  return std::string(group) + "." + std::to_string(layer) + ".";
}

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor meta(std::vector<double> values) {
  return Tensor::vector(std::move(values));
}

std::size_t meta_size(const Tensor& t, std::size_t i) {
  if (i >= t.size() || t[i] < 0 || t[i] != std::floor(t[i])) {
    throw FormatError("malformed checkpoint metadata", 0);
  }
  return static_cast<std::size_t>(t[i]);
}

}  // namespace

std::vector<std::size_t> ModelConfig::attentive_layer_indices() const {
  std::vector<std::size_t> out;
  const std::size_t depth = encoder.depth();
  for (std::size_t i = 0; i < attentive_layers; ++i) {
    out.push_back(depth + 1 - attentive_layers + i);
  }
  return out;
}

void ModelConfig::validate() const {
  encoder.validate();
  if (attentive_layers > encoder.depth() + 1) {
    throw ConfigError("cannot attend " + std::to_string(attentive_layers) +
                      " layers of a " + std::to_string(encoder.depth()) +
                      "-layer encoder");
  }
  if (dims.embed == 0 || dims.hidden == 0 || dims.visual == 0 ||
      dims.attention == 0) {
    throw ConfigError("decoder dimensions must be positive");
  }
  if (vocab_size < 5) {
    throw ConfigError("vocabulary must hold at least 5 tokens, got " +
                      std::to_string(vocab_size));
  }
}

ParameterSet CaptionModel::parameter_layout(const ModelConfig& config) {
  config.validate();
  ParameterSet p;
  const auto& enc = config.encoder;
  for (std::size_t l = 1; l <= enc.depth(); ++l) {
    const auto& spec = enc.layers[l - 1];
    p.set(layer_prefix("encoder", l) + "weight",
          Tensor::zeros({spec.out_channels, spec.in_channels, spec.kernel,
                         spec.kernel}));
    p.set(layer_prefix("encoder", l) + "bias", Tensor::zeros({spec.out_channels}));
  }
  const auto& d = config.dims;
  for (std::size_t l : config.attentive_layer_indices()) {
    AttentionParams::zeros(enc.map_shape(l)[2], d.hidden, d.attention,
                           config.order)
        .export_to(p, layer_prefix("attention", l));
  }
  const std::size_t vocab = config.vocab_size;
  const std::size_t top_channels = enc.map_shape(enc.depth())[2];
  const std::size_t lstm_in = d.visual + d.embed + d.hidden;
  p.set("decoder.embedding", Tensor::zeros({vocab, d.embed}));
  p.set("decoder.visual_proj", Tensor::zeros({d.visual, top_channels}));
  p.set("decoder.visual_bias", Tensor::zeros({d.visual}));
  for (const char* gate : kGates) {
    p.set(std::string("decoder.lstm.") + gate + ".weight",
          Tensor::zeros({d.hidden, lstm_in}));
    p.set(std::string("decoder.lstm.") + gate + ".bias",
          Tensor::zeros({d.hidden}));
  }
  p.set("decoder.output.hidden_proj", Tensor::zeros({vocab, d.hidden}));
  p.set("decoder.output.word_proj", Tensor::zeros({vocab, d.embed}));
  p.set("decoder.output.bias", Tensor::zeros({vocab}));
  return p;
}

CaptionModel::CaptionModel(ModelConfig config, ParameterSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  const ParameterSet layout = parameter_layout(config_);
  for (const auto& [name, t] : layout.entries()) {
    if (!params_.contains(name)) {
      throw ConfigError("missing parameter " + name);
    }
    if (params_.get(name).shape() != t.shape()) {
      throw DimensionError("parameter " + name + " has shape " +
                           shape_to_string(params_.get(name).shape()) +
                           ", expected " + shape_to_string(t.shape()));
    }
  }
  if (params_.size() != layout.size()) {
    for (const auto& [name, t] : params_.entries()) {
      if (!layout.contains(name)) throw ConfigError("unexpected parameter " + name);
    }
  }
}

CaptionModel CaptionModel::initialize(const ModelConfig& config,
                                      std::uint64_t seed, double range) {
  ParameterSet p = parameter_layout(config);
  for (auto& [name, t] : p.entries()) {
    Rng rng(mix_seed(seed, {name_hash(name)}));
    for (auto& x : t.data()) x = rng.uniform(-range, range);
  }
  for (auto& x : p.get("decoder.lstm.forget.bias").data()) x = 1.0;
  Tensor& embedding = p.get("decoder.embedding");
  for (std::size_t j = 0; j < embedding.dim(1); ++j) {
    embedding.at(Vocabulary::kPad, j) = 0.0;
  }
  return CaptionModel(config, std::move(p));
}

NamedTensors CaptionModel::to_archive() const {
  const auto& c = config_;
  NamedTensors out;
  out.emplace_back("meta.format", meta({1}));
  out.emplace_back("meta.order", meta({static_cast<double>(c.order)}));
  out.emplace_back("meta.rescale", meta({c.modulation.rescale ? 1.0 : 0.0}));
  out.emplace_back("meta.attentive_layers",
                   meta({static_cast<double>(c.attentive_layers)}));
  out.emplace_back(
      "meta.dims",
      meta({static_cast<double>(c.dims.embed), static_cast<double>(c.dims.hidden),
            static_cast<double>(c.dims.visual),
            static_cast<double>(c.dims.attention),
            static_cast<double>(c.vocab_size)}));
  out.emplace_back(
      "meta.encoder",
      meta({static_cast<double>(c.encoder.mode),
            static_cast<double>(c.encoder.input_shape[0]),
            static_cast<double>(c.encoder.input_shape[1]),
            static_cast<double>(c.encoder.input_shape[2]),
            c.encoder.coordinate_planes ? 1.0 : 0.0}));
  if (!c.encoder.layers.empty()) {
    Tensor layers({c.encoder.depth(), 5});
    for (std::size_t l = 0; l < c.encoder.depth(); ++l) {
      const auto& s = c.encoder.layers[l];
      layers.at(l, 0) = static_cast<double>(s.in_channels);
      layers.at(l, 1) = static_cast<double>(s.out_channels);
      layers.at(l, 2) = static_cast<double>(s.kernel);
      layers.at(l, 3) = static_cast<double>(s.nonlinearity);
      layers.at(l, 4) = s.pool ? 1.0 : 0.0;
    }
    out.emplace_back("meta.encoder.layers", std::move(layers));
  }
  for (auto& entry : params_.to_named()) out.push_back(std::move(entry));
  return out;
}

CaptionModel CaptionModel::from_archive(const NamedTensors& entries) {
  ParameterSet meta_entries, params;
  for (const auto& [name, t] : entries) {
    (name.rfind("meta.", 0) == 0 ? meta_entries : params).set(name, t);
  }
  for (const char* required : {"meta.format", "meta.order", "meta.rescale",
                               "meta.attentive_layers", "meta.dims",
                               "meta.encoder"}) {
    if (!meta_entries.contains(required)) {
      throw FormatError(std::string("checkpoint lacks ") + required, 0);
    }
  }
  if (meta_size(meta_entries.get("meta.format"), 0) != 1) {
    throw FormatError("unsupported checkpoint format", 0);
  }
  ModelConfig c;
  const std::size_t order = meta_size(meta_entries.get("meta.order"), 0);
  if (order > 3) throw FormatError("bad attention order in checkpoint", 0);
  c.order = static_cast<AttentionOrder>(order);
  c.modulation.rescale = meta_size(meta_entries.get("meta.rescale"), 0) != 0;
  c.attentive_layers = meta_size(meta_entries.get("meta.attentive_layers"), 0);
  const Tensor& dims = meta_entries.get("meta.dims");
  c.dims = DecoderDims{meta_size(dims, 0), meta_size(dims, 1),
                       meta_size(dims, 2), meta_size(dims, 3)};
  c.vocab_size = meta_size(dims, 4);
  const Tensor& enc = meta_entries.get("meta.encoder");
  c.encoder.mode = meta_size(enc, 0) == 0 ? EncoderMode::TinyCNN
                                          : EncoderMode::FeatureInjection;
  c.encoder.input_shape = {meta_size(enc, 1), meta_size(enc, 2),
                           meta_size(enc, 3)};
  c.encoder.coordinate_planes = meta_size(enc, 4) != 0;
  c.encoder.layers.clear();
  if (meta_entries.contains("meta.encoder.layers")) {
    const Tensor& layers = meta_entries.get("meta.encoder.layers");
    if (layers.rank() != 2 || layers.dim(1) != 5) {
      throw FormatError("malformed encoder layer table", 0);
    }
    for (std::size_t l = 0; l < layers.dim(0); ++l) {
      Tensor row = Tensor::vector({layers.at(l, 0), layers.at(l, 1),
                                   layers.at(l, 2), layers.at(l, 3),
                                   layers.at(l, 4)});
      const std::size_t nl = meta_size(row, 3);
      if (nl > 2) throw FormatError("bad nonlinearity code", 0);
      c.encoder.layers.push_back(ConvLayerSpec{
          meta_size(row, 0), meta_size(row, 1), meta_size(row, 2),
          static_cast<Nonlinearity>(nl), meta_size(row, 4) != 0});
    }
  }
  return CaptionModel(std::move(c), std::move(params));
}

void CaptionModel::save(const std::filesystem::path& path) const {
  save_archive(path, to_archive());
}

CaptionModel CaptionModel::load(const std::filesystem::path& path) {
  return from_archive(load_archive(path));
}

Var embed(Var table, TokenId token) {
  if (table.value().rank() != 2 || token >= table.value().dim(0)) {
    throw VocabularyError("token id " + std::to_string(token) +
                          " outside embedding table " +
                          shape_to_string(table.shape()));
  }
  return row(table, token);
}

DecoderState lstm_step(const DecoderState& state, Var x, const LstmVars& p) {
  Var z = concat(x, state.h);
  Var i = sigmoid(add(matvec(p.input_weight, z), p.input_bias));
  Var f = sigmoid(add(matvec(p.forget_weight, z), p.forget_bias));
  Var o = sigmoid(add(matvec(p.output_weight, z), p.output_bias));
  Var g = tanh_map(add(matvec(p.cell_weight, z), p.cell_bias));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh_map(c));
  return DecoderState{h, c, state.t + 1};
}

Var output_distribution(Var h, Var previous_embedding, const OutputVars& p) {
  Var logits = add(matvec(p.hidden_proj, h), matvec(p.word_proj, previous_embedding));
  return softmax(add(logits, p.bias));
}

CaptionGraph::CaptionGraph(Tape& tape, const CaptionModel& model)
    : tape_(&tape), model_(&model), bound_(tape, model.params()) {
  const ModelConfig& c = model.config();
  for (std::size_t l = 1; l <= c.encoder.depth(); ++l) {
    conv_.push_back(ConvWeights{bound_[layer_prefix("encoder", l) + "weight"],
                                bound_[layer_prefix("encoder", l) + "bias"]});
  }
  for (std::size_t l : c.attentive_layer_indices()) {
    attentive_.push_back(AttentiveLayer{
        l, bind_attention(bound_, layer_prefix("attention", l), c.order),
        c.order});
  }
  auto gate = [&](const char* g, const char* what) {
    return bound_[std::string("decoder.lstm.") + g + "." + what];
  };
  lstm_ = LstmVars{gate("input", "weight"),  gate("input", "bias"),
                   gate("forget", "weight"), gate("forget", "bias"),
                   gate("output", "weight"), gate("output", "bias"),
                   gate("cell", "weight"),   gate("cell", "bias")};
  output_ = OutputVars{bound_["decoder.output.hidden_proj"],
                       bound_["decoder.output.word_proj"],
                       bound_["decoder.output.bias"]};
  embedding_ = bound_["decoder.embedding"];
  visual_proj_ = bound_["decoder.visual_proj"];
  visual_bias_ = bound_["decoder.visual_bias"];
}

void CaptionGraph::set_image(const Tensor& image) {
  const ModelConfig& c = model_->config();
  Var input = tape_->constant(image);
  plain_maps_ = encode(input, c.encoder, conv_);
}

DecoderState CaptionGraph::initial_state() const {
  const std::size_t d = model_->config().dims.hidden;
  return DecoderState{tape_->constant(Tensor::zeros({d})),
                      tape_->constant(Tensor::zeros({d})), 0};
}

CaptionGraph::Step CaptionGraph::step(const DecoderState& state,
                                      TokenId previous,
                                      const Tensor* dropout_mask) {
  if (plain_maps_.empty()) throw UsageError("CaptionGraph: no image set");
  const ModelConfig& c = model_->config();
  MultiLayerResult attended = multi_layer_pass(
      plain_maps_, c.encoder, conv_, state.h, attentive_, c.modulation);
  Var pooled = mean_pool_spatial(attended.output);
  Var visual = add(matvec(visual_proj_, pooled), visual_bias_);
  Var word = embed(embedding_, previous);
  DecoderState next = lstm_step(state, concat(visual, word), lstm_);
  Var h = next.h;
  if (dropout_mask) h = mul(h, tape_->constant(*dropout_mask));
  return Step{next, output_distribution(h, word, output_),
              std::move(attended.weights)};
}

TeacherForcedRun run_teacher_forced(CaptionGraph& graph,
                                    const std::vector<TokenId>& caption,
                                    std::span<const Tensor> dropout_masks) {
  TeacherForcedRun run;
  run.targets = caption;
  run.targets.push_back(Vocabulary::kEnd);
  if (!dropout_masks.empty() && dropout_masks.size() != run.targets.size()) {
    throw DimensionError("run_teacher_forced: " +
                         std::to_string(dropout_masks.size()) +
                         " dropout masks for " +
                         std::to_string(run.targets.size()) + " steps");
  }
  DecoderState state = graph.initial_state();
  TokenId previous = Vocabulary::kStart;
  for (std::size_t t = 0; t < run.targets.size(); ++t) {
    const Tensor* mask = dropout_masks.empty() ? nullptr : &dropout_masks[t];
    CaptionGraph::Step s = graph.step(state, previous, mask);
    run.probs.push_back(s.probs);
    run.attention.push_back(std::move(s.attention));
    state = s.state;
    previous = run.targets[t];
  }
  return run;
}

namespace {

// Adapts a CaptionGraph to the search interface.
struct GraphSearchModel {
  using State = DecoderState;
  using Trace = std::vector<AttentionWeights>;

  CaptionGraph& graph;

  State initial_state() { return graph.initial_state(); }

  SearchStep<State, Trace> step(const State& state, TokenId previous) {
    CaptionGraph::Step s = graph.step(state, previous);
    Trace trace;
    const EncoderConfig& enc = graph.model().config().encoder;
    for (const auto& la : s.attention) {
      const Shape shape = enc.map_shape(la.layer);
      trace.push_back(AttentionWeights{la.layer, shape[0], shape[1],
                                       la.alpha.value(), la.beta.value()});
    }
    return {s.probs.value().values(), s.state, std::move(trace)};
  }
};

}  // namespace

DecodedCaption decode_caption(const CaptionModel& model, const Tensor& image,
                              const DecodeOptions& options) {
  Tape tape(false);
  CaptionGraph graph(tape, model);
  graph.set_image(image);
  GraphSearchModel search{graph};
  SearchOptions so;
  so.beam_width = options.mode == DecodeMode::Greedy ? 1 : options.beam_width;
  so.max_len = options.max_len;
  so.start = Vocabulary::kStart;
  so.end = Vocabulary::kEnd;
  auto result = options.mode == DecodeMode::Greedy ? greedy_search(search, so)
                                                   : beam_search(search, so);
  DecodedCaption out;
  out.tokens = std::move(result.tokens);
  out.emitted = std::move(result.emitted);
  out.ended = result.ended;
  out.log_prob = result.log_prob;
  out.step_log_probs = std::move(result.step_log_probs);
  out.attention = std::move(result.traces);
  return out;
}

}  // namespace sca
