#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sca/decoder.hpp"
#include "sca/parameters.hpp"
#include "sca/tape.hpp"

namespace sca {

struct AdadeltaState {
  double rho = 0.95;
  double epsilon = 1e-6;
  ParameterSet sq_grad;    // running E[g^2]
  ParameterSet sq_update;  // running E[dx^2]

  static AdadeltaState for_params(const ParameterSet& params, double rho = 0.95,
                                  double epsilon = 1e-6);
};

// One Adadelta step on a single tensor and its two accumulators.
void adadelta_update(Tensor& param, const Tensor& grad, Tensor& sq_grad,
                     Tensor& sq_update, double rho, double epsilon);
// Updates every parameter; `grads` and the state must mirror `params`.
void adadelta_update(ParameterSet& params, const ParameterSet& grads,
                     AdadeltaState& state);

// Inverted dropout: 0 with probability `rate`, else 1 / (1 - rate). All ones
// when `train` is false. Throws DomainError unless rate is in [0, 1).
Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed,
                    bool train);

// Mean of -log p_t[target_t] over the positions whose target is not PAD.
// Returns a zero scalar when every target is PAD.
Var cross_entropy_loss(std::span<const Var> probs,
                       std::span<const TokenId> targets);

// True when the best (first minimal) entry is at least `patience` entries
// old. Throws ConfigError when patience is 0.
bool early_stop_check(std::span<const double> history, std::size_t patience);

struct TrainExample {
  Tensor image;
  std::vector<TokenId> caption;  // without START / END
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double dropout = 0.5;
  std::size_t patience = 5;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 1;
  std::size_t threads = 1;  // result is independent of this

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  CaptionModel model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Teacher-forced training with Adadelta, dropout on h and early stopping on
// validation loss. Throws NumericalError when the loss stops being finite.
TrainResult train(CaptionModel model, const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// Copies every parameter of `source` whose name and shape exist in `target`.
// Returns the names of `target` that kept their fresh values.
std::vector<std::string> warm_start(CaptionModel& target,
                                    const CaptionModel& source);

// Summed loss of one example and its gradients (summed, not averaged).
struct ExampleGradient {
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  ParameterSet grads;
};
ExampleGradient example_gradient(const CaptionModel& model,
                                 const TrainExample& example,
                                 std::span<const Tensor> dropout_masks = {});

// Token-weighted teacher-forced loss without dropout.
double evaluate_loss(const CaptionModel& model,
                     const std::vector<TrainExample>& examples);
// Fraction of teacher-forced targets (END included) predicted by argmax.
double token_accuracy(const CaptionModel& model,
                      const std::vector<TrainExample>& examples);
// Fraction of examples whose decoded caption equals the reference.
double exact_match(const CaptionModel& model,
                   const std::vector<TrainExample>& examples,
                   const DecodeOptions& options);

// Reads SCA_THREADS (default 1).
std::size_t threads_from_env();

}  // namespace sca
