#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

#include "sca/errors.hpp"
#include "sca/ops.hpp"
#include "sca/training.hpp"
#include "support.hpp"

using namespace sca;
using sca::testing::random_tensor;

namespace {

std::vector<Var> constants(Tape& tape, const std::vector<Tensor>& ts) {
  std::vector<Var> out;
  for (const auto& t : ts) out.push_back(tape.constant(t));
  return out;
}

ModelConfig tiny_model_config() {
  ModelConfig config;
  config.encoder = EncoderConfig::feature_injection(2, 2, 3);
  config.dims = DecoderDims{4, 8, 4, 4};
  config.vocab_size = 8;
  return config;
}

std::vector<TrainExample> toy_examples(std::size_t n, std::uint64_t seed) {
  std::vector<TrainExample> out;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    TrainExample ex{random_tensor({2, 2, 3}, seed * 100 + i), {}};
    const std::size_t len = 1 + rng.below(3);
    for (std::size_t t = 0; t < len; ++t) ex.caption.push_back(4 + rng.below(4));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST(CrossEntropy, PerfectAndUniformPredictions) {
  Tape tape;
  const std::vector<TokenId> targets = {4, 5, 2};
  std::vector<Tensor> onehot;
  for (TokenId y : targets) {
    Tensor p = Tensor::zeros({8});
    p[y] = 1.0;
    onehot.push_back(p);
  }
  EXPECT_EQ(cross_entropy_loss(constants(tape, onehot), targets).value()[0], 0.0);
  const std::vector<Tensor> uniform(3, Tensor::full({8}, 1.0 / 8.0));
  EXPECT_NEAR(cross_entropy_loss(constants(tape, uniform), targets).value()[0], std::log(8.0),
              1e-15);
  EXPECT_NEAR(std::log(8.0), 2.0794, 1e-4);
}

TEST(CrossEntropy, HandSummedThreeStepsWithPadMasked) {
  Tape tape;
  const std::vector<Tensor> probs = {Tensor::vector({0.1, 0.2, 0.3, 0.4}),
                                     Tensor::vector({0.25, 0.25, 0.4, 0.1}),
                                     Tensor::vector({0.7, 0.1, 0.1, 0.1}),
                                     Tensor::vector({0.6, 0.2, 0.1, 0.1})};
  const std::vector<TokenId> targets = {3, 2, 1, 0};
  const double want = -(std::log(0.4) + std::log(0.4) + std::log(0.1)) / 3.0;
  EXPECT_NEAR(cross_entropy_loss(constants(tape, probs), targets).value()[0], want, 1e-12);
}

TEST(CrossEntropy, Errors) {
  Tape tape;
  const auto probs = constants(tape, {Tensor::full({4}, 0.25)});
  const std::vector<TokenId> two = {1, 2};
  EXPECT_THROW(cross_entropy_loss(probs, two), DimensionError);
  const std::vector<TokenId> out_of_range = {4};
  EXPECT_THROW(cross_entropy_loss(probs, out_of_range), VocabularyError);
  const std::vector<TokenId> pad = {0};
  EXPECT_EQ(cross_entropy_loss(probs, pad).value()[0], 0.0);
}

TEST(Dropout, TrivialCasesAndErrors) {
  EXPECT_EQ(dropout_mask({10}, 0.0, 1, true), Tensor::ones({10}));
  EXPECT_EQ(dropout_mask({10}, 0.9, 1, false), Tensor::ones({10}));
  EXPECT_THROW(dropout_mask({10}, 1.0, 1, true), DomainError);
  EXPECT_THROW(dropout_mask({10}, -0.1, 1, true), DomainError);
  EXPECT_EQ(dropout_mask({50}, 0.3, 9, true), dropout_mask({50}, 0.3, 9, true));
  EXPECT_NE(dropout_mask({50}, 0.3, 9, true), dropout_mask({50}, 0.3, 10, true));
}

TEST(Dropout, BinomialStatistics) {
  const std::size_t n = 100000;
  const Tensor m = dropout_mask({n}, 0.5, 42, true);
  double total = 0.0;
  std::size_t zeros = 0;
  for (double x : m.data()) {
    ASSERT_TRUE(x == 0.0 || x == 2.0);
    total += x;
    zeros += x == 0.0;
  }
  // Entries are 0 or 2 with equal odds: variance 1 per entry.
  EXPECT_NEAR(total / n, 1.0, 3.0 * std::sqrt(1.0 / n));
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(Adadelta, FirstStepHandValue) {
  Tensor x = Tensor::vector({0.0}), sg = Tensor::zeros({1}), su = Tensor::zeros({1});
  adadelta_update(x, Tensor::vector({1.0}), sg, su, 0.95, 1e-6);
  EXPECT_NEAR(x[0], -std::sqrt(1e-6 / (0.05 + 1e-6)), 1e-15);
  EXPECT_NEAR(x[0], -4.4720e-3, 1e-7);
}

TEST(Adadelta, TwoStepHandComputation) {
  const double rho = 0.95, eps = 1e-6;
  const double g1 = 0.3, g2 = -1.7;
  Tensor x = Tensor::vector({2.0}), sg = Tensor::zeros({1}), su = Tensor::zeros({1});
  adadelta_update(x, Tensor::vector({g1}), sg, su, rho, eps);
  adadelta_update(x, Tensor::vector({g2}), sg, su, rho, eps);

  double eg = 0.0, ed = 0.0, p = 2.0;
  for (double g : {g1, g2}) {
    eg = rho * eg + (1 - rho) * g * g;
    const double dx = -std::sqrt(ed + eps) / std::sqrt(eg + eps) * g;
    ed = rho * ed + (1 - rho) * dx * dx;
    p += dx;
  }
  EXPECT_NEAR(x[0], p, 1e-12);
  EXPECT_NEAR(sg[0], eg, 1e-12);
  EXPECT_NEAR(su[0], ed, 1e-12);
}

TEST(Adadelta, ZeroGradientIsNoOpAndAccumulatorsDecay) {
  ParameterSet params;
  params.set("w", random_tensor({3, 2}, 1));
  params.set("b", random_tensor({2}, 2));
  AdadeltaState state = AdadeltaState::for_params(params);
  ParameterSet grads = params.zeros_like();
  grads.get("w") = random_tensor({3, 2}, 3);
  grads.get("b") = random_tensor({2}, 4);
  adadelta_update(params, grads, state);

  const ParameterSet before = params;
  const ParameterSet sg = state.sq_grad, su = state.sq_update;
  adadelta_update(params, params.zeros_like(), state);
  EXPECT_EQ(params, before);
  for (const auto& [name, t] : state.sq_grad.entries()) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(t[i], 0.95 * sg.get(name)[i]);
      EXPECT_EQ(state.sq_update.get(name)[i], 0.95 * su.get(name)[i]);
      EXPECT_GE(t[i], 0.0);
    }
  }
}

TEST(Adadelta, ShapeMismatchThrows) {
  Tensor x = Tensor::zeros({2}), sg = Tensor::zeros({2}), su = Tensor::zeros({2});
  EXPECT_THROW(adadelta_update(x, Tensor::zeros({3}), sg, su, 0.95, 1e-6), DimensionError);
}

TEST(EarlyStop, Examples) {
  EXPECT_FALSE(early_stop_check(std::vector<double>{3.0, 2.0, 1.0, 0.5}, 2));
  EXPECT_TRUE(early_stop_check(std::vector<double>{1.0, 0.5, 0.6, 0.7}, 2));
  EXPECT_FALSE(early_stop_check(std::vector<double>{0.5, 0.6, 0.4}, 2));
  EXPECT_FALSE(early_stop_check(std::vector<double>{}, 1));
  // Ties keep the first minimum.
  EXPECT_TRUE(early_stop_check(std::vector<double>{0.5, 0.5}, 1));
  EXPECT_THROW(early_stop_check(std::vector<double>{1.0}, 0), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Train, MemorizesSingleExample) {
  const auto examples = toy_examples(1, 5);
  TrainConfig config;
  config.batch_size = 1;
  config.dropout = 0.0;
  config.max_epochs = 500;
  config.patience = 500;
  std::vector<double> losses;
  const auto result = train(CaptionModel::initialize(tiny_model_config(), 3), examples,
                            examples, config,
                            [&](const EpochRecord& r) { losses.push_back(r.train_loss); });
  ASSERT_GE(losses.size(), 10u);
  EXPECT_LT(*std::min_element(losses.begin(), losses.end()), 0.05);
  EXPECT_LT(evaluate_loss(result.model, examples), 0.05);
  std::size_t upticks = 0;
  for (std::size_t i = 1; i < 10; ++i) upticks += losses[i] > losses[i - 1];
  EXPECT_LE(upticks, 2u);
  EXPECT_LT(losses[9], losses[0]);
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  const auto train_set = toy_examples(12, 6), val_set = toy_examples(3, 7);
  TrainConfig config;
  config.batch_size = 4;
  config.max_epochs = 4;
  config.seed = 11;
  const auto model = CaptionModel::initialize(tiny_model_config(), 8);
  const auto a = train(model, train_set, val_set, config);
  const auto b = train(model, train_set, val_set, config);
  config.threads = 3;
  const auto c = train(model, train_set, val_set, config);
  ASSERT_EQ(a.history.size(), 4u);
  for (const auto* other : {&b, &c}) {
    ASSERT_EQ(other->history.size(), a.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_loss, other->history[i].train_loss);
      EXPECT_EQ(a.history[i].val_loss, other->history[i].val_loss);
    }
    EXPECT_EQ(other->model.params(), a.model.params());
  }
}

TEST(Train, ReturnsBestValidationEpochAndStopsEarly) {
  const auto train_set = toy_examples(4, 1), val_set = toy_examples(4, 2);
  TrainConfig config;
  config.batch_size = 1;
  config.dropout = 0.0;
  config.max_epochs = 200;
  config.patience = 2;
  const auto r = train(CaptionModel::initialize(tiny_model_config(), 1), train_set, val_set,
                       config);
  ASSERT_FALSE(r.history.empty());
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    if (r.history[i].val_loss < r.history[best].val_loss) best = i;
  }
  EXPECT_EQ(r.best_epoch, r.history[best].epoch);
  EXPECT_EQ(evaluate_loss(r.model, val_set), r.history[best].val_loss);
  if (r.stopped_early) EXPECT_EQ(r.history.size() - 1 - best, config.patience);
}

TEST(Train, EmptySetsAreRejected) {
  const auto model = CaptionModel::initialize(tiny_model_config(), 1);
  EXPECT_THROW(train(model, {}, toy_examples(1, 1), TrainConfig{}), DomainError);
  EXPECT_THROW(train(model, toy_examples(1, 1), {}, TrainConfig{}), DomainError);
}

TEST(WarmStart, OneLayerIntoTwoLayersCopiesSharedTensorsBitwise) {
  ModelConfig one;
  one.vocab_size = 10;
  ModelConfig two = one;
  two.attentive_layers = 2;
  const auto source = CaptionModel::initialize(one, 1);
  auto target = CaptionModel::initialize(two, 2);
  const auto fresh = warm_start(target, source);
  ASSERT_FALSE(fresh.empty());
  for (const auto& name : fresh) EXPECT_EQ(name.rfind("attention.1.", 0), 0u) << name;
  for (const auto& [name, t] : source.params().entries()) {
    EXPECT_EQ(target.params().get(name), t) << name;
  }
  EXPECT_EQ(target.params().size(), source.params().size() + fresh.size());
}

TEST(ExampleGradient, FullModelMatchesFiniteDifferences) {
  ModelConfig config;
  config.encoder.input_shape = {4, 4, 2};
  config.encoder.coordinate_planes = false;
  config.encoder.layers = {ConvLayerSpec{2, 3, 3, Nonlinearity::Tanh, true}};
  config.attentive_layers = 2;
  config.order = AttentionOrder::SpatialFirst;
  config.dims = DecoderDims{3, 4, 3, 3};
  config.vocab_size = 6;
  const auto model = CaptionModel::initialize(config, 4, 0.5);
  const TrainExample example{random_tensor({4, 4, 2}, 5), {4, 5}};
  const auto analytic = example_gradient(model, example);
  const double tokens = static_cast<double>(analytic.tokens);

  const double eps = 1e-5;
  double worst = 0.0;
  std::string where;
  CaptionModel probe = model;
  for (auto& [name, t] : probe.params().entries()) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + eps;
      const double up = example_gradient(probe, example).loss_sum;
      t[i] = saved - eps;
      const double down = example_gradient(probe, example).loss_sum;
      t[i] = saved;
      const double numeric = (up - down) / (2 * eps) / tokens;
      const double a = analytic.grads.get(name)[i] / tokens;
      const double scale = std::max(std::abs(a), std::abs(numeric));
      // Central differences resolve about 1e-10 here; tiny entries are compared absolutely.
      if (scale < 1e-6) {
        EXPECT_LT(std::abs(a - numeric), 1e-10) << name << "[" << i << "]";
        continue;
      }
      const double rel = std::abs(a - numeric) / scale;
      if (rel > worst) {
        worst = rel;
        where = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  EXPECT_LT(worst, 1e-4) << where;
}

TEST(Threads, EnvironmentVariable) {
  ::unsetenv("SCA_THREADS");
  EXPECT_EQ(threads_from_env(), 1u);
  ::setenv("SCA_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(), 3u);
  ::setenv("SCA_THREADS", "zero", 1);
  EXPECT_THROW(threads_from_env(), ConfigError);
  ::unsetenv("SCA_THREADS");
}
