#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sca {

using Sentence = std::vector<std::string>;

struct EvalPair {
  Sentence candidate;
  std::vector<Sentence> references;  // at least one
};

// Corpus BLEU with clipped n-gram counts, uniform weights and the brevity
// penalty exp(min(0, 1 - r / c)), r summing the closest reference lengths.
// Unsmoothed: B@n is 0 as soon as an order up to n has no match.
// Throws DomainError on an empty corpus or a pair without references.
std::array<double, 4> bleu(std::span<const EvalPair> corpus);

// Corpus totals behind bleu(): clipped matches and candidate n-gram counts per
// order, plus summed candidate and closest-reference lengths.
struct BleuCounts {
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  // Clipped precision of order n in [1, 4]; 0 when there are no n-grams.
  double precision(std::size_t n) const;
};
BleuCounts bleu_counts(std::span<const EvalPair> corpus);

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b);

// LCS F-measure, maximised over references; 0 for an empty candidate.
double rouge_l(const EvalPair& pair, double beta = 1.2);
// Mean of rouge_l over the corpus.
double rouge_l(std::span<const EvalPair> corpus, double beta = 1.2);

}  // namespace sca
