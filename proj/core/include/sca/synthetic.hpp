#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sca/dataset.hpp"
#include "sca/decoder.hpp"
#include "sca/random.hpp"
#include "sca/tensor.hpp"

namespace sca {

enum class ShapeKind { Square, Cross, Disk };
enum class Color { Red, Green, Blue };  // doubles as the channel index

inline constexpr std::size_t kShapeKinds = 3;
inline constexpr std::size_t kColors = 3;

std::string to_string(ShapeKind shape);
std::string to_string(Color color);

struct SceneObject {
  ShapeKind shape = ShapeKind::Square;
  Color color = Color::Red;
  std::size_t cell = 0;  // row * grid + col; row runs along H, col along W

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct SceneSpec {
  std::size_t grid = 4;       // cells per side
  std::size_t cell_size = 4;  // pixels per cell side
  std::vector<SceneObject> objects;

  // Throws SpecError for no objects, more than two, repeated or out-of-range
  // cells.
  void validate() const;
};

struct RenderedScene {
  Tensor image;  // (grid*cell_size) x (grid*cell_size) x 3
  std::vector<std::string> caption;
};

// 4x4 shape masks, indexed [row][col].
const std::vector<std::string>& shape_mask(ShapeKind shape);

// Objects drawn with value 1 in their color channel; caption
// "a <color> <shape> [and a <color> <shape>]" in cell order.
RenderedScene render_scene(const SceneSpec& spec);

// Inverse of the caption grammar. Cells are not recoverable, so the result
// lists objects in caption order with cell 0. Throws SpecError otherwise.
std::vector<SceneObject> parse_caption(const std::vector<std::string>& caption);

// One or two objects (even odds), uniform shapes and colors, distinct cells.
SceneSpec random_scene(Rng& rng);

// The closed word list: reserved tokens, then
// a and red green blue square cross disk.
Vocabulary synthetic_vocabulary();

// n scenes; the first n - 2*floor(n/10) are train, then val, then test.
// Writes dataset.jsonl, vocab.txt and images/NNNNNN.scat under `out_dir`.
std::vector<DatasetRecord> generate_dataset(std::size_t n, std::uint64_t seed,
                                            const std::filesystem::path& out_dir);

// Where the channel weights come from when scoring alignment.
enum class ChannelWeightSource {
  Model,    // the last attentive layer's beta
  Uniform,  // every channel equal (chance control)
  Oracle,   // one-hot on the channel most correlated with the true shape
};

struct AlignmentScore {
  double score = 0.0;
  std::size_t predictions = 0;  // shape-word steps scored
};

inline constexpr std::size_t kAlignmentTopChannels = 5;

// Over `scenes`, correlates each channel's mean activation in the last
// attentive map with the presence of each shape. At every teacher-forced
// step whose target is a shape word, the top channels by weight (only those
// with positive weight, ties in random seeded order) succeed when their mean
// correlation with that shape exceeds the mean over all channels. Throws
// ConfigError when the model has no channel attention.
AlignmentScore channel_alignment_score(const CaptionModel& model,
                                       const std::vector<TrainExample>& scenes,
                                       const Vocabulary& vocabulary,
                                       ChannelWeightSource source,
                                       std::uint64_t seed = 0);

}  // namespace sca
