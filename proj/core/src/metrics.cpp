#include "sca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "sca/errors.hpp"

namespace sca {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Sentence& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[Sentence(s.begin() + static_cast<std::ptrdiff_t>(i),
                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

// Reference length closest to `c`, the shorter one on ties.
std::size_t closest_length(const std::vector<Sentence>& refs, std::size_t c) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [c](std::size_t len) {
      return len > c ? len - c : c - len;
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) {
      best = r.size();
    }
  }
  return best;
}

}  // namespace

double BleuCounts::precision(std::size_t n) const {
  if (n < 1 || n > 4) throw DomainError("BLEU order must be in [1, 4]");
  if (total[n - 1] == 0) return 0.0;
  return static_cast<double>(matched[n - 1]) / static_cast<double>(total[n - 1]);
}

BleuCounts bleu_counts(std::span<const EvalPair> corpus) {
  if (corpus.empty()) throw DomainError("bleu: empty corpus");
  BleuCounts out;
  for (const auto& pair : corpus) {
    if (pair.references.empty()) throw DomainError("bleu: pair without references");
    out.candidate_length += pair.candidate.size();
    out.reference_length += closest_length(pair.references, pair.candidate.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      NgramCounts max_ref;
      for (const auto& ref : pair.references) {
        for (const auto& [g, count] : ngrams(ref, n)) {
          max_ref[g] = std::max(max_ref[g], count);
        }
      }
      for (const auto& [g, count] : ngrams(pair.candidate, n)) {
        auto it = max_ref.find(g);
        out.matched[n - 1] += std::min(count, it == max_ref.end() ? 0 : it->second);
        out.total[n - 1] += count;
      }
    }
  }
  return out;
}

std::array<double, 4> bleu(std::span<const EvalPair> corpus) {
  const BleuCounts counts = bleu_counts(corpus);
  std::array<double, 4> scores{};
  if (counts.candidate_length == 0) return scores;
  const double bp = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(counts.reference_length) /
                     static_cast<double>(counts.candidate_length)));
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (counts.matched[n - 1] == 0) break;  // this and all higher orders stay 0
    log_sum += std::log(counts.precision(n));
    scores[n - 1] = bp * std::exp(log_sum / static_cast<double>(n));
  }
  return scores;
}

std::size_t lcs_length(std::span<const std::string> a,
                       std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1
                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const EvalPair& pair, double beta) {
  if (pair.references.empty()) throw DomainError("rouge_l: no references");
  if (pair.candidate.empty()) return 0.0;
  double best = 0.0;
  const double b2 = beta * beta;
  for (const auto& ref : pair.references) {
    const std::size_t lcs = lcs_length(pair.candidate, ref);
    if (lcs == 0 || ref.empty()) continue;
    const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
    const double p =
        static_cast<double>(lcs) / static_cast<double>(pair.candidate.size());
    best = std::max(best, (1.0 + b2) * r * p / (r + b2 * p));
  }
  return best;
}

double rouge_l(std::span<const EvalPair> corpus, double beta) {
  if (corpus.empty()) throw DomainError("rouge_l: empty corpus");
  double sum = 0.0;
  for (const auto& pair : corpus) sum += rouge_l(pair, beta);
  return sum / static_cast<double>(corpus.size());
}

}  // namespace sca
