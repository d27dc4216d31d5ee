#include <benchmark/benchmark.h>

#include "sca/attention.hpp"
#include "sca/decoder.hpp"
#include "sca/random.hpp"
#include "sca/synthetic.hpp"
#include "sca/training.hpp"

namespace {

using namespace sca;

Tensor random_tensor(Shape shape, Rng& rng, double range = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.uniform(-range, range);
  return t;
}

AttentionParams random_attention(std::size_t channels, std::size_t hidden,
                                 std::size_t common, AttentionOrder order, Rng& rng) {
  auto p = AttentionParams::zeros(channels, hidden, common, order);
  for (auto* t : {&p.spatial->feature_proj, &p.spatial->feature_bias, &p.spatial->hidden_proj,
                  &p.spatial->score, &p.spatial->score_bias, &p.channel->feature_proj,
                  &p.channel->feature_bias, &p.channel->hidden_proj, &p.channel->score,
                  &p.channel->score_bias}) {
    for (auto& x : t->data()) x = rng.uniform(-0.1, 0.1);
  }
  return p;
}

// Args: map extent, channels.
void BM_Attend(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const Tensor map = random_tensor({side, side, channels}, rng);
  const Tensor hidden = random_tensor({48}, rng);
  const auto params = random_attention(channels, 48, 24, AttentionOrder::ChannelFirst, rng);
  for (auto _ : state) {
    Tape tape(false);
    const auto vars = bind_attention(tape, params);
    const auto out = attend(tape.constant(map), tape.constant(hidden), vars,
                            AttentionOrder::ChannelFirst, {});
    benchmark::DoNotOptimize(out.modulated.value().data().data());
  }
}
BENCHMARK(BM_Attend)->Args({4, 16})->Args({8, 16})->Args({7, 512});

void BM_ConvForward(benchmark::State& state) {
  Rng rng(2);
  const ConvLayerSpec spec{5, 8, 3, Nonlinearity::Tanh, true};
  const Tensor input = random_tensor({16, 16, 5}, rng);
  const Tensor weight = random_tensor({8, 5, 3, 3}, rng, 0.08);
  const Tensor bias = random_tensor({8}, rng, 0.08);
  for (auto _ : state) {
    Tape tape(false);
    const ConvWeights w{tape.constant(weight), tape.constant(bias)};
    benchmark::DoNotOptimize(conv_forward(tape.constant(input), spec, w).value().data().data());
  }
}
BENCHMARK(BM_ConvForward);

ModelConfig synthetic_model(AttentionOrder order) {
  ModelConfig config;
  config.order = order;
  config.vocab_size = synthetic_vocabulary().size();
  return config;
}

Tensor sample_image() {
  Rng rng(3);
  return render_scene(random_scene(rng)).image;
}

// Arg: beam width, 0 for greedy.
void BM_DecodeCaption(benchmark::State& state) {
  const auto model = CaptionModel::initialize(synthetic_model(AttentionOrder::ChannelFirst), 4);
  const Tensor image = sample_image();
  DecodeOptions options;
  options.mode = state.range(0) == 0 ? DecodeMode::Greedy : DecodeMode::Beam;
  options.beam_width = std::max<std::size_t>(1, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(decode_caption(model, image, options).log_prob);
}
BENCHMARK(BM_DecodeCaption)->Arg(0)->Arg(5)->Unit(benchmark::kMillisecond);

// Forward and backward pass of one teacher-forced example, per order.
void BM_ExampleGradient(benchmark::State& state) {
  const auto order = static_cast<AttentionOrder>(state.range(0));
  const auto model = CaptionModel::initialize(synthetic_model(order), 5);
  Rng rng(6);
  const auto scene = render_scene(random_scene(rng));
  const TrainExample example{scene.image, synthetic_vocabulary().encode(scene.caption)};
  for (auto _ : state) benchmark::DoNotOptimize(example_gradient(model, example).loss_sum);
  state.SetLabel(to_string(order));
}
BENCHMARK(BM_ExampleGradient)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
