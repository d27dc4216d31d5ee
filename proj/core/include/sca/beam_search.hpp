#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "sca/errors.hpp"

namespace sca {

using TokenId = std::size_t;

struct SearchOptions {
  std::size_t beam_width = 5;
  std::size_t max_len = 16;  // upper bound on emitted tokens, END included
  TokenId start = 1;
  TokenId end = 2;
};

template <class State, class Trace>
struct SearchStep {
  std::vector<double> probs;  // next-token distribution
  State state;
  Trace trace;  // per-step payload kept alongside the hypothesis
};

template <class State, class Trace>
struct BeamHypothesis {
  std::vector<TokenId> tokens;  // emitted tokens, END included if produced
  double log_prob = 0.0;
  std::vector<double> step_log_probs;
  State state;
  std::vector<Trace> traces;
  bool finished = false;
};

template <class Trace>
struct SearchResult {
  std::vector<TokenId> tokens;  // without START and END
  std::vector<TokenId> emitted;  // every emitted token, END included
  bool ended = false;           // false when truncated at max_len
  double log_prob = 0.0;
  std::vector<double> step_log_probs;
  std::vector<Trace> traces;  // one per emitted token
};

namespace detail {

inline void check_search_options(const SearchOptions& options) {
  if (options.beam_width == 0) throw ConfigError("beam width must be >= 1");
  if (options.max_len == 0) throw ConfigError("max_len must be >= 1");
}

template <class Hyp>
bool better(const Hyp& a, const Hyp& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;  // lower token ids win ties
}

template <class Trace, class Hyp>
SearchResult<Trace> to_result(const Hyp& hyp, TokenId end) {
  SearchResult<Trace> r;
  r.emitted = hyp.tokens;
  r.ended = !hyp.tokens.empty() && hyp.tokens.back() == end;
  r.tokens = hyp.tokens;
  if (r.ended) r.tokens.pop_back();
  r.log_prob = hyp.log_prob;
  r.step_log_probs = hyp.step_log_probs;
  r.traces = hyp.traces;
  return r;
}

}  // namespace detail

// Model requirements:
//   using State = ...; using Trace = ...;
//   State initial_state();
//   SearchStep<State, Trace> step(const State&, TokenId previous);

// Highest-probability token at every step, lowest id on ties.
template <class Model>
SearchResult<typename Model::Trace> greedy_search(Model& model,
                                                  const SearchOptions& options) {
  detail::check_search_options(options);
  using Hyp = BeamHypothesis<typename Model::State, typename Model::Trace>;
  Hyp hyp{{}, 0.0, {}, model.initial_state(), {}, false};
  TokenId previous = options.start;
  for (std::size_t t = 0; t < options.max_len; ++t) {
    auto s = model.step(hyp.state, previous);
    if (s.probs.empty()) throw ConfigError("empty vocabulary");
    TokenId best = 0;
    for (TokenId y = 1; y < s.probs.size(); ++y) {
      if (s.probs[y] > s.probs[best]) best = y;
    }
    const double lp = std::log(s.probs[best]);
    hyp.tokens.push_back(best);
    hyp.log_prob += lp;
    hyp.step_log_probs.push_back(lp);
    hyp.state = std::move(s.state);
    hyp.traces.push_back(std::move(s.trace));
    previous = best;
    if (best == options.end) break;
  }
  return detail::to_result<typename Model::Trace>(hyp, options.end);
}

// Beam search without length normalization. Each step expands every live
// hypothesis over the full vocabulary and keeps the `beam_width` best
// candidates; candidates that emit END (or reach max_len) retire. The answer
// is the retired hypothesis with the highest total log-probability.
template <class Model>
SearchResult<typename Model::Trace> beam_search(Model& model,
                                                const SearchOptions& options) {
  detail::check_search_options(options);
  using State = typename Model::State;
  using Trace = typename Model::Trace;
  using Hyp = BeamHypothesis<State, Trace>;

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double log_prob;
    double step_log_prob;
    std::vector<TokenId> tokens;
  };

  std::vector<Hyp> live;
  live.push_back(Hyp{{}, 0.0, {}, model.initial_state(), {}, false});
  std::vector<Hyp> retired;

  for (std::size_t t = 0; t < options.max_len && !live.empty(); ++t) {
    std::vector<SearchStep<State, Trace>> expansions;
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < live.size(); ++i) {
      const TokenId previous =
          live[i].tokens.empty() ? options.start : live[i].tokens.back();
      expansions.push_back(model.step(live[i].state, previous));
      const auto& probs = expansions.back().probs;
      if (probs.empty()) throw ConfigError("empty vocabulary");
      for (TokenId y = 0; y < probs.size(); ++y) {
        const double lp = std::log(probs[y]);
        std::vector<TokenId> tokens = live[i].tokens;
        tokens.push_back(y);
        candidates.push_back(
            Candidate{i, y, live[i].log_prob + lp, lp, std::move(tokens)});
      }
    }
    const std::size_t keep = std::min(options.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob)
                          return a.log_prob > b.log_prob;
                        return a.tokens < b.tokens;
                      });

    std::vector<Hyp> next;
    for (std::size_t j = 0; j < keep; ++j) {
      Candidate& c = candidates[j];
      const Hyp& parent = live[c.parent];
      Hyp h;
      h.tokens = std::move(c.tokens);
      h.log_prob = c.log_prob;
      h.step_log_probs = parent.step_log_probs;
      h.step_log_probs.push_back(c.step_log_prob);
      h.state = expansions[c.parent].state;
      h.traces = parent.traces;
      h.traces.push_back(expansions[c.parent].trace);
      h.finished = c.token == options.end || t + 1 == options.max_len;
      (h.finished ? retired : next).push_back(std::move(h));
    }
    live = std::move(next);
  }

  const Hyp* best = &retired.front();
  for (const Hyp& h : retired) {
    if (detail::better(h, *best)) best = &h;
  }
  return detail::to_result<Trace>(*best, options.end);
}

}  // namespace sca
