#include "sca/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sca/encoder.hpp"
#include "sca/errors.hpp"
#include "sca/ops.hpp"

namespace sca {

namespace {

const char* const kShapeWords[] = {"square", "cross", "disk"};
const char* const kColorWords[] = {"red", "green", "blue"};

template <class Enum, std::size_t N>
Enum parse_word(const std::string& word, const char* const (&words)[N],
                const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (word == words[i]) return static_cast<Enum>(i);
  }
  throw SpecError(std::string("expected a ") + what + " word, got '" + word + "'");
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

std::string to_string(ShapeKind shape) {
  return kShapeWords[static_cast<std::size_t>(shape)];
}

std::string to_string(Color color) {
  return kColorWords[static_cast<std::size_t>(color)];
}

void SceneSpec::validate() const {
  if (grid == 0 || cell_size != 4) {
    throw SpecError("scenes need a nonempty grid of 4-pixel cells");
  }
  if (objects.empty()) throw SpecError("a scene needs at least one object");
  if (objects.size() > 2) throw SpecError("a scene holds at most two objects");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].cell >= grid * grid) {
      throw SpecError("cell " + std::to_string(objects[i].cell) +
                      " outside a " + std::to_string(grid) + "x" +
                      std::to_string(grid) + " grid");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (objects[i].cell == objects[j].cell) {
        throw SpecError("two objects share cell " + std::to_string(objects[i].cell));
      }
    }
  }
}

const std::vector<std::string>& shape_mask(ShapeKind shape) {
  static const std::vector<std::string> masks[] = {
      {"1111", "1001", "1001", "1111"},
      {"1001", "0110", "0110", "1001"},
      {"0110", "1111", "1111", "0110"},
  };
  return masks[static_cast<std::size_t>(shape)];
}

RenderedScene render_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t side = spec.grid * spec.cell_size;
  RenderedScene out{Tensor::zeros({side, side, kColors}), {}};
  std::vector<SceneObject> ordered = spec.objects;
  std::sort(ordered.begin(), ordered.end(),
            [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
  for (const auto& obj : ordered) {
    const std::size_t row = obj.cell / spec.grid, col = obj.cell % spec.grid;
    const auto& mask = shape_mask(obj.shape);
    for (std::size_t dy = 0; dy < spec.cell_size; ++dy) {
      for (std::size_t dx = 0; dx < spec.cell_size; ++dx) {
        if (mask[dy][dx] != '1') continue;
        out.image.at(col * spec.cell_size + dx, row * spec.cell_size + dy,
                     static_cast<std::size_t>(obj.color)) = 1.0;
      }
    }
    if (!out.caption.empty()) out.caption.push_back("and");
    out.caption.push_back("a");
    out.caption.push_back(to_string(obj.color));
    out.caption.push_back(to_string(obj.shape));
  }
  return out;
}

std::vector<SceneObject> parse_caption(const std::vector<std::string>& caption) {
  std::vector<SceneObject> objects;
  std::size_t i = 0;
  while (true) {
    if (i + 3 > caption.size() || caption[i] != "a") {
      throw SpecError("caption does not follow 'a <color> <shape>'");
    }
    SceneObject obj;
    obj.color = parse_word<Color>(caption[i + 1], kColorWords, "color");
    obj.shape = parse_word<ShapeKind>(caption[i + 2], kShapeWords, "shape");
    objects.push_back(obj);
    i += 3;
    if (i == caption.size()) break;
    if (caption[i] != "and" || objects.size() == 2) {
      throw SpecError("unexpected '" + caption[i] + "' in caption");
    }
    ++i;
  }
  return objects;
}

SceneSpec random_scene(Rng& rng) {
  SceneSpec spec;
  const std::size_t count = 1 + rng.below(2);
  const std::size_t cells = spec.grid * spec.grid;
  while (spec.objects.size() < count) {
    SceneObject obj;
    obj.shape = static_cast<ShapeKind>(rng.below(kShapeKinds));
    obj.color = static_cast<Color>(rng.below(kColors));
    obj.cell = rng.below(cells);
    const bool taken = std::any_of(
        spec.objects.begin(), spec.objects.end(),
        [&](const SceneObject& o) { return o.cell == obj.cell; });
    if (!taken) spec.objects.push_back(obj);
  }
  return spec;
}

Vocabulary synthetic_vocabulary() {
  return Vocabulary({"a", "and", "red", "green", "blue", "square", "cross", "disk"});
}

std::vector<DatasetRecord> generate_dataset(std::size_t n, std::uint64_t seed,
                                            const std::filesystem::path& out_dir) {
  if (n == 0) throw DomainError("generate_dataset: n must be at least 1");
  const std::size_t held_out = n / 10;
  const std::size_t n_train = n - 2 * held_out;
  std::filesystem::create_directories(out_dir / "images");
  std::vector<DatasetRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, {i}));
    const RenderedScene scene = render_scene(random_scene(rng));
    char name[48];
    std::snprintf(name, sizeof name, "images/%06zu.scat", i);
    save_feature_map(out_dir / name, scene.image, DType::F32);
    DatasetRecord r;
    r.id = i;
    r.split = i < n_train ? "train" : i < n_train + held_out ? "val" : "test";
    r.image = name;
    r.caption = scene.caption;
    records.push_back(std::move(r));
  }
  write_records(out_dir / kDatasetFile, records);
  synthetic_vocabulary().save(out_dir / kVocabularyFile);
  return records;
}

AlignmentScore channel_alignment_score(const CaptionModel& model,
                                       const std::vector<TrainExample>& scenes,
                                       const Vocabulary& vocabulary,
                                       ChannelWeightSource source,
                                       std::uint64_t seed) {
  const ModelConfig& config = model.config();
  if (!uses_channel(config.order)) {
    throw ConfigError("channel alignment needs a model with channel attention, got order " +
                      to_string(config.order));
  }
  if (scenes.empty()) throw DomainError("channel_alignment_score: no scenes");
  const std::size_t layer = config.attentive_layer_indices().back();
  const std::size_t channels = config.encoder.map_shape(layer)[2];

  TokenId shape_ids[kShapeKinds];
  for (std::size_t s = 0; s < kShapeKinds; ++s) {
    shape_ids[s] = vocabulary.id(kShapeWords[s]);
    if (shape_ids[s] == Vocabulary::kUnk) {
      throw VocabularyError(std::string("vocabulary lacks '") + kShapeWords[s] + "'");
    }
  }

  // activation[c][scene], presence[s][scene]
  std::vector<std::vector<double>> activation(channels,
                                              std::vector<double>(scenes.size()));
  std::vector<std::vector<double>> presence(kShapeKinds,
                                            std::vector<double>(scenes.size()));
  struct Instance {
    std::size_t shape;
    Tensor beta;
  };
  std::vector<Instance> instances;

  for (std::size_t i = 0; i < scenes.size(); ++i) {
    Tape tape(false);
    CaptionGraph graph(tape, model);
    graph.set_image(scenes[i].image);
    const Tensor pooled = mean_pool_spatial(graph.plain_maps()[layer]).value();
    for (std::size_t c = 0; c < channels; ++c) activation[c][i] = pooled[c];
    for (TokenId t : scenes[i].caption) {
      for (std::size_t s = 0; s < kShapeKinds; ++s) {
        if (t == shape_ids[s]) presence[s][i] = 1.0;
      }
    }
    const bool need_model = source == ChannelWeightSource::Model;
    const TeacherForcedRun run =
        need_model ? run_teacher_forced(graph, scenes[i].caption) : TeacherForcedRun{};
    for (std::size_t t = 0; t < scenes[i].caption.size(); ++t) {
      for (std::size_t s = 0; s < kShapeKinds; ++s) {
        if (scenes[i].caption[t] != shape_ids[s]) continue;
        Tensor beta = need_model ? run.attention[t].back().beta.value()
                                 : Tensor::full({channels}, 1.0 / channels);
        instances.push_back(Instance{s, std::move(beta)});
      }
    }
  }

  std::vector<std::vector<double>> corr(kShapeKinds, std::vector<double>(channels));
  std::vector<double> mean_corr(kShapeKinds, 0.0);
  for (std::size_t s = 0; s < kShapeKinds; ++s) {
    for (std::size_t c = 0; c < channels; ++c) {
      corr[s][c] = pearson(activation[c], presence[s]);
      mean_corr[s] += corr[s][c];
    }
    mean_corr[s] /= static_cast<double>(channels);
  }

  Rng rng(seed);
  AlignmentScore result;
  std::size_t hits = 0;
  for (auto& inst : instances) {
    if (source == ChannelWeightSource::Oracle) {
      const auto& row = corr[inst.shape];
      const auto best = static_cast<std::size_t>(
          std::max_element(row.begin(), row.end()) - row.begin());
      inst.beta = Tensor::zeros({channels});
      inst.beta[best] = 1.0;
    }
    std::vector<std::size_t> ranked(channels);
    std::iota(ranked.begin(), ranked.end(), 0);
    rng.shuffle(ranked);
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
      return inst.beta[a] > inst.beta[b];
    });
    double sum = 0.0;
    std::size_t taken = 0;
    for (std::size_t c : ranked) {
      if (taken == kAlignmentTopChannels || !(inst.beta[c] > 0.0)) break;
      sum += corr[inst.shape][c];
      ++taken;
    }
    if (taken > 0 && sum / static_cast<double>(taken) > mean_corr[inst.shape]) ++hits;
  }
  result.predictions = instances.size();
  result.score = instances.empty()
                     ? 0.0
                     : static_cast<double>(hits) / static_cast<double>(instances.size());
  return result;
}

}  // namespace sca
