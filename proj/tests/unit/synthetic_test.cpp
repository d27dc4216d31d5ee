#include <gtest/gtest.h>

#include <cmath>
#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "sca/encoder.hpp"
#include "sca/errors.hpp"
#include "sca/synthetic.hpp"
#include "support.hpp"

using namespace sca;

namespace {

std::string file_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<TrainExample> scenes(std::size_t n, std::uint64_t seed, const Vocabulary& vocab) {
  std::vector<TrainExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, {i}));
    const auto scene = render_scene(random_scene(rng));
    out.push_back({scene.image, vocab.encode(scene.caption)});
  }
  return out;
}

}  // namespace

TEST(RenderScene, InvalidSpecsAreRejected) {
  EXPECT_THROW(render_scene(SceneSpec{}), SpecError);
  SceneSpec overlap;
  overlap.objects = {{ShapeKind::Square, Color::Red, 3}, {ShapeKind::Disk, Color::Blue, 3}};
  EXPECT_THROW(render_scene(overlap), SpecError);
  SceneSpec outside;
  outside.objects = {{ShapeKind::Cross, Color::Green, 16}};
  EXPECT_THROW(render_scene(outside), SpecError);
  SceneSpec three;
  three.objects = {{ShapeKind::Cross, Color::Green, 0},
                   {ShapeKind::Cross, Color::Green, 1},
                   {ShapeKind::Cross, Color::Green, 2}};
  EXPECT_THROW(render_scene(three), SpecError);
}

TEST(RenderScene, SingleRedSquareInTopLeftCell) {
  SceneSpec spec;
  spec.objects = {{ShapeKind::Square, Color::Red, 0}};
  const auto scene = render_scene(spec);
  EXPECT_EQ(scene.caption, (std::vector<std::string>{"a", "red", "square"}));
  ASSERT_EQ(scene.image.shape(), (Shape{16, 16, 3}));
  const auto& mask = shape_mask(ShapeKind::Square);
  for (std::size_t w = 0; w < 16; ++w)
    for (std::size_t h = 0; h < 16; ++h)
      for (std::size_t c = 0; c < 3; ++c) {
        const bool lit = c == 0 && w < 4 && h < 4 && mask[h][w] == '1';
        EXPECT_EQ(scene.image.at(w, h, c), lit ? 1.0 : 0.0);
      }
}

TEST(RenderScene, TwoObjectsCaptionedInCellOrder) {
  SceneSpec spec;
  // Row 2 col 1 (cell 9) listed before row 0 col 3 (cell 3).
  spec.objects = {{ShapeKind::Disk, Color::Blue, 9}, {ShapeKind::Cross, Color::Green, 3}};
  const auto scene = render_scene(spec);
  EXPECT_EQ(scene.caption, (std::vector<std::string>{"a", "green", "cross", "and", "a", "blue",
                                                     "disk"}));
  // Disk's left column is off, its second column on, in cell col 1 row 2.
  EXPECT_EQ(scene.image.at(4, 8, 2), 0.0);
  EXPECT_EQ(scene.image.at(5, 8, 2), 1.0);
  EXPECT_EQ(scene.image.at(12, 0, 1), 1.0);
  EXPECT_EQ(render_scene(spec).image, scene.image);
}

TEST(RenderScene, InjectiveOverAllSingleAndSampledPairScenes) {
  std::set<std::pair<std::vector<double>, std::vector<std::string>>> seen;
  std::size_t count = 0;
  for (std::size_t s = 0; s < kShapeKinds; ++s)
    for (std::size_t c = 0; c < kColors; ++c)
      for (std::size_t cell = 0; cell < 16; ++cell) {
        SceneSpec spec;
        spec.objects = {{static_cast<ShapeKind>(s), static_cast<Color>(c), cell}};
        const auto r = render_scene(spec);
        seen.emplace(std::vector<double>(r.image.data().begin(), r.image.data().end()), r.caption);
        ++count;
        SceneSpec pair = spec;
        pair.objects.push_back({static_cast<ShapeKind>((s + 1) % 3),
                                static_cast<Color>((c + cell) % 3), (cell + 5) % 16});
        const auto r2 = render_scene(pair);
        seen.emplace(std::vector<double>(r2.image.data().begin(), r2.image.data().end()), r2.caption);
        ++count;
      }
  EXPECT_EQ(seen.size(), count);
}

TEST(ParseCaption, RoundTripAndErrors) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    SceneSpec spec = random_scene(rng);
    const auto parsed = parse_caption(render_scene(spec).caption);
    std::sort(spec.objects.begin(), spec.objects.end(),
              [](const SceneObject& a, const SceneObject& b) { return a.cell < b.cell; });
    ASSERT_EQ(parsed.size(), spec.objects.size());
    for (std::size_t k = 0; k < parsed.size(); ++k) {
      EXPECT_EQ(parsed[k].shape, spec.objects[k].shape);
      EXPECT_EQ(parsed[k].color, spec.objects[k].color);
    }
  }
  EXPECT_THROW(parse_caption({"a"}), SpecError);
  EXPECT_THROW(parse_caption({"a", "square", "red"}), SpecError);
  EXPECT_THROW(parse_caption({"a", "red", "square", "and"}), SpecError);
  EXPECT_THROW(parse_caption({"a", "red", "square", "and", "a", "red", "disk", "and", "a",
                              "red", "disk"}),
               SpecError);
}

TEST(GenerateDataset, SingleRecordIsTrain) {
  const auto dir = sca::testing::scratch_dir("gen1");
  const auto records = generate_dataset(1, 4, dir);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].split, "train");
  const auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded.records.size(), 1u);
  EXPECT_EQ(loaded.vocabulary, synthetic_vocabulary());
  EXPECT_THROW(generate_dataset(0, 4, dir), DomainError);
}

TEST(GenerateDataset, SplitsAndByteIdenticalRegeneration) {
  const auto a = sca::testing::scratch_dir("gen_a"), b = sca::testing::scratch_dir("gen_b");
  const auto records = generate_dataset(25, 9, a);
  generate_dataset(25, 9, b);
  std::size_t train = 0, val = 0, test = 0;
  for (const auto& r : records) {
    train += r.split == "train";
    val += r.split == "val";
    test += r.split == "test";
    EXPECT_EQ(file_text(a / r.image), file_text(b / r.image));
    const Tensor img = load_feature_map(a / r.image);
    EXPECT_EQ(img.shape(), (Shape{16, 16, 3}));
  }
  EXPECT_EQ(train, 21u);
  EXPECT_EQ(val, 2u);
  EXPECT_EQ(test, 2u);
  EXPECT_EQ(file_text(a / kDatasetFile), file_text(b / kDatasetFile));
  EXPECT_EQ(file_text(a / kVocabularyFile), file_text(b / kVocabularyFile));
}

TEST(GenerateDataset, ShapeAndColorMarginalsNearUniform) {
  const auto dir = sca::testing::scratch_dir("gen1000");
  const auto records = generate_dataset(1000, 2024, dir);
  std::map<std::string, double> counts;
  double objects = 0;
  for (const auto& r : records) {
    for (const auto& obj : parse_caption(r.caption)) {
      ++counts[to_string(obj.shape)];
      ++counts[to_string(obj.color)];
      ++objects;
    }
  }
  const double sigma = std::sqrt(objects * (1.0 / 3.0) * (2.0 / 3.0));
  for (const char* w : {"square", "cross", "disk", "red", "green", "blue"}) {
    EXPECT_NEAR(counts[w], objects / 3.0, 3.0 * sigma) << w;
  }
}

TEST(ChannelAlignment, UniformAndOracleControls) {
  const Vocabulary vocab = synthetic_vocabulary();
  ModelConfig config;
  config.vocab_size = vocab.size();
  const auto model = CaptionModel::initialize(config, 5);
  const auto data = scenes(60, 1, vocab);

  const auto oracle =
      channel_alignment_score(model, data, vocab, ChannelWeightSource::Oracle, 1);
  EXPECT_EQ(oracle.score, 1.0);
  EXPECT_GE(oracle.predictions, 60u);

  const auto uniform =
      channel_alignment_score(model, data, vocab, ChannelWeightSource::Uniform, 1);
  EXPECT_EQ(uniform.predictions, oracle.predictions);
  EXPECT_GT(uniform.score, 0.2);
  EXPECT_LT(uniform.score, 0.8);
  EXPECT_EQ(channel_alignment_score(model, data, vocab, ChannelWeightSource::Uniform, 1).score,
            uniform.score);

  const auto learned = channel_alignment_score(model, data, vocab, ChannelWeightSource::Model);
  EXPECT_GE(learned.score, 0.0);
  EXPECT_LE(learned.score, 1.0);
}

TEST(ChannelAlignment, NeedsChannelAttention) {
  const Vocabulary vocab = synthetic_vocabulary();
  ModelConfig config;
  config.vocab_size = vocab.size();
  config.order = AttentionOrder::SpatialOnly;
  const auto model = CaptionModel::initialize(config, 5);
  EXPECT_THROW(channel_alignment_score(model, scenes(2, 1, vocab), vocab,
                                       ChannelWeightSource::Model),
               ConfigError);
}
