#include "sca/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "sca/errors.hpp"
#include "sca/ops.hpp"
#include "sca/random.hpp"
#include "sca/vocabulary.hpp"

namespace sca {

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5348554646ULL;
constexpr std::uint64_t kDropoutSalt = 0x44524f50ULL;

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string("adadelta_update: ") + what + " shape " +
                         shape_to_string(b.shape()) + " differs from " +
                         shape_to_string(a.shape()));
  }
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<Tensor> step_masks(std::size_t steps, std::size_t hidden,
                               double rate, std::uint64_t seed,
                               std::size_t epoch, std::size_t example) {
  std::vector<Tensor> masks;
  masks.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    masks.push_back(dropout_mask({hidden}, rate,
                                 mix_seed(seed, {kDropoutSalt, epoch, example, t}),
                                 true));
  }
  return masks;
}

std::size_t argmax(const Tensor& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

}  // namespace

AdadeltaState AdadeltaState::for_params(const ParameterSet& params, double rho,
                                        double epsilon) {
  if (!(rho > 0.0 && rho < 1.0) || !(epsilon > 0.0)) {
    throw DomainError("adadelta needs 0 < rho < 1 and epsilon > 0");
  }
  return AdadeltaState{rho, epsilon, params.zeros_like(), params.zeros_like()};
}

void adadelta_update(Tensor& param, const Tensor& grad, Tensor& sq_grad,
                     Tensor& sq_update, double rho, double epsilon) {
  require_same_shape(param, grad, "gradient");
  require_same_shape(param, sq_grad, "E[g^2]");
  require_same_shape(param, sq_update, "E[dx^2]");
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    sq_grad[i] = rho * sq_grad[i] + (1.0 - rho) * g * g;
    const double dx =
        -std::sqrt(sq_update[i] + epsilon) / std::sqrt(sq_grad[i] + epsilon) * g;
    sq_update[i] = rho * sq_update[i] + (1.0 - rho) * dx * dx;
    param[i] += dx;
  }
}

void adadelta_update(ParameterSet& params, const ParameterSet& grads,
                     AdadeltaState& state) {
  if (grads.size() != params.size() || state.sq_grad.size() != params.size() ||
      state.sq_update.size() != params.size()) {
    throw DimensionError("adadelta_update: parameter sets differ in size");
  }
  for (auto& [name, p] : params.entries()) {
    adadelta_update(p, grads.get(name), state.sq_grad.get(name),
                    state.sq_update.get(name), state.rho, state.epsilon);
  }
}

Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed,
                    bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw DomainError("dropout rate must be in [0, 1), got " +
                      std::to_string(rate));
  }
  Tensor mask = Tensor::ones(shape);
  if (!train || rate == 0.0) return mask;
  Rng rng(seed);
  const double keep = 1.0 / (1.0 - rate);
  for (auto& x : mask.data()) x = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

Var cross_entropy_loss(std::span<const Var> probs,
                       std::span<const TokenId> targets) {
  if (probs.size() != targets.size()) {
    throw DimensionError("cross_entropy_loss: " + std::to_string(probs.size()) +
                         " distributions for " + std::to_string(targets.size()) +
                         " targets");
  }
  if (probs.empty()) throw DimensionError("cross_entropy_loss: empty sequence");
  Tape& tape = *probs.front().tape;
  std::optional<Var> total;
  std::size_t counted = 0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    if (targets[t] == Vocabulary::kPad) continue;
    if (targets[t] >= probs[t].size()) {
      throw VocabularyError("target id " + std::to_string(targets[t]) +
                            " outside distribution of size " +
                            std::to_string(probs[t].size()));
    }
    Var term = log_map(pick(probs[t], targets[t]));
    total = total ? add(*total, term) : term;
    ++counted;
  }
  if (!total) return tape.constant(Tensor::scalar(0.0));
  return scale(*total, -1.0 / static_cast<double>(counted));
}

bool early_stop_check(std::span<const double> history, std::size_t patience) {
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (history.empty()) return false;
  const auto best = std::min_element(history.begin(), history.end());
  const auto since =
      static_cast<std::size_t>(std::distance(best, history.end())) - 1;
  return since >= patience;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must be in [0, 1)");
  }
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (max_epochs == 0) throw ConfigError("max epochs must be at least 1");
  if (threads == 0) throw ConfigError("threads must be at least 1");
}

ExampleGradient example_gradient(const CaptionModel& model,
                                 const TrainExample& example,
                                 std::span<const Tensor> dropout_masks) {
  Tape tape;
  CaptionGraph graph(tape, model);
  graph.set_image(example.image);
  TeacherForcedRun run = run_teacher_forced(graph, example.caption, dropout_masks);
  Var loss = cross_entropy_loss(run.probs, run.targets);
  ExampleGradient out;
  out.tokens = static_cast<std::size_t>(
      std::count_if(run.targets.begin(), run.targets.end(),
                    [](TokenId t) { return t != Vocabulary::kPad; }));
  out.loss_sum = loss.value().item() * static_cast<double>(out.tokens);
  out.grads = model.params().zeros_like();
  if (out.tokens == 0) return out;
  tape.backward(loss);
  graph.params().collect_grads(out.grads, static_cast<double>(out.tokens));
  return out;
}

namespace {

struct LossSum {
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

LossSum teacher_forced_eval(const CaptionModel& model, const TrainExample& ex) {
  Tape tape(false);
  CaptionGraph graph(tape, model);
  graph.set_image(ex.image);
  TeacherForcedRun run = run_teacher_forced(graph, ex.caption);
  LossSum s;
  for (std::size_t t = 0; t < run.targets.size(); ++t) {
    const TokenId target = run.targets[t];
    if (target == Vocabulary::kPad) continue;
    const Tensor& p = run.probs[t].value();
    s.loss -= std::log(p[target]);
    s.correct += argmax(p) == target ? 1 : 0;
    ++s.tokens;
  }
  return s;
}

LossSum teacher_forced_totals(const CaptionModel& model,
                              const std::vector<TrainExample>& examples) {
  std::vector<LossSum> parts(examples.size());
  parallel_for(examples.size(), threads_from_env(), [&](std::size_t i) {
    parts[i] = teacher_forced_eval(model, examples[i]);
  });
  LossSum total;
  for (const auto& p : parts) {
    total.loss += p.loss;
    total.tokens += p.tokens;
    total.correct += p.correct;
  }
  return total;
}

}  // namespace

double evaluate_loss(const CaptionModel& model,
                     const std::vector<TrainExample>& examples) {
  const LossSum s = teacher_forced_totals(model, examples);
  if (s.tokens == 0) throw DomainError("evaluate_loss: no target tokens");
  return s.loss / static_cast<double>(s.tokens);
}

double token_accuracy(const CaptionModel& model,
                      const std::vector<TrainExample>& examples) {
  const LossSum s = teacher_forced_totals(model, examples);
  if (s.tokens == 0) throw DomainError("token_accuracy: no target tokens");
  return static_cast<double>(s.correct) / static_cast<double>(s.tokens);
}

double exact_match(const CaptionModel& model,
                   const std::vector<TrainExample>& examples,
                   const DecodeOptions& options) {
  if (examples.empty()) throw DomainError("exact_match: no examples");
  std::vector<char> hit(examples.size(), 0);
  parallel_for(examples.size(), threads_from_env(), [&](std::size_t i) {
    hit[i] = decode_caption(model, examples[i].image, options).tokens ==
             examples[i].caption;
  });
  const auto n = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(n) / static_cast<double>(examples.size());
}

std::vector<std::string> warm_start(CaptionModel& target,
                                    const CaptionModel& source) {
  std::vector<std::string> fresh;
  for (auto& [name, t] : target.params().entries()) {
    if (source.params().contains(name) &&
        source.params().get(name).shape() == t.shape()) {
      t = source.params().get(name);
    } else {
      fresh.push_back(name);
    }
  }
  return fresh;
}

TrainResult train(CaptionModel model, const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DomainError("train: empty training set");
  if (val_set.empty()) throw DomainError("train: empty validation set");

  AdadeltaState state = AdadeltaState::for_params(model.params());
  const std::size_t hidden = model.config().dims.hidden;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{model, {}, 0, false};
  std::vector<double> val_history;
  double best_val = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed, {kShuffleSalt, epoch}));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<ExampleGradient> parts(end - start);
      parallel_for(parts.size(), config.threads, [&](std::size_t j) {
        const std::size_t idx = order[start + j];
        const TrainExample& ex = train_set[idx];
        const auto masks =
            config.dropout > 0.0
                ? step_masks(ex.caption.size() + 1, hidden, config.dropout,
                             config.seed, epoch, idx)
                : std::vector<Tensor>{};
        parts[j] = example_gradient(model, ex, masks);
      });

      ParameterSet grads = model.params().zeros_like();
      std::size_t batch_tokens = 0;
      for (const auto& part : parts) {
        grads.accumulate(part.grads);
        batch_tokens += part.tokens;
        epoch_loss += part.loss_sum;
      }
      epoch_tokens += batch_tokens;
      if (!std::isfinite(epoch_loss)) {
        throw NumericalError("training loss became non-finite in epoch " +
                             std::to_string(epoch));
      }
      if (batch_tokens == 0) continue;
      for (auto& [name, g] : grads.entries()) {
        for (auto& x : g.data()) x /= static_cast<double>(batch_tokens);
      }
      adadelta_update(model.params(), grads, state);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(epoch_tokens);
    record.val_loss = evaluate_loss(model, val_set);
    if (!std::isfinite(record.val_loss)) {
      throw NumericalError("validation loss became non-finite in epoch " +
                           std::to_string(epoch));
    }
    result.history.push_back(record);
    val_history.push_back(record.val_loss);
    if (on_epoch) on_epoch(record);

    if (record.val_loss < best_val) {
      best_val = record.val_loss;
      result.model = model;
      result.best_epoch = epoch;
    }
    if (early_stop_check(val_history, config.patience)) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  return result;
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("SCA_THREADS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1) {
    throw ConfigError(std::string("SCA_THREADS must be a positive integer, got ") +
                      raw);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace sca
