#include "hypsel/feedback.hpp"

#include <algorithm>
#include <vector>

#include "hypsel/error.hpp"

namespace hypsel {

WerBreakdown word_error_rate(std::span<const WordId> hyp, std::span<const WordId> ref) {
  if (ref.empty()) throw ValidationError("WER needs a non-empty reference");
  const std::size_t R = ref.size();
  const std::size_t H = hyp.size();
  // cost(i, j): edit distance between ref[0..i) and hyp[0..j)
  std::vector<int> cost((R + 1) * (H + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return cost[i * (H + 1) + j]; };
  for (std::size_t i = 0; i <= R; ++i) at(i, 0) = static_cast<int>(i);
  for (std::size_t j = 0; j <= H; ++j) at(0, j) = static_cast<int>(j);
  for (std::size_t i = 1; i <= R; ++i)
    for (std::size_t j = 1; j <= H; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i, j - 1) + 1,
                           at(i - 1, j) + 1});

  WerBreakdown out;
  out.reference_length = static_cast<int>(R);
  std::size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const int diag = ref[i - 1] == hyp[j - 1] ? 0 : 1;
      if (at(i, j) == at(i - 1, j - 1) + diag) {
        out.substitutions += diag;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
      ++out.insertions;
      --j;
      continue;
    }
    ++out.deletions;
    --i;
  }
  return out;
}

const char* to_string(SelectionSource s) {
  switch (s) {
    case SelectionSource::oracle: return "oracle";
    case SelectionSource::noisy: return "noisy";
    case SelectionSource::human: return "human";
  }
  return "unknown";
}

Selection oracle_select(const Hypothesis& h1, const Hypothesis& h2, const WordSequence& reference) {
  const WerBreakdown w1 = word_error_rate(h1.words, reference);
  const WerBreakdown w2 = word_error_rate(h2.words, reference);
  Selection sel;
  sel.reward = w1.wer() <= w2.wer() ? 1 : 0;
  sel.source = SelectionSource::oracle;
  sel.candidate_wers = std::make_pair(w1, w2);
  return sel;
}

Selection noisy_select(const Selection& selection, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("selection error probability must lie in [0, 1]");
  std::bernoulli_distribution flip(p);
  Selection out = selection;
  if (flip(rng)) out.reward = 1 - out.reward;
  out.source = SelectionSource::noisy;
  out.noise_p = p;
  return out;
}

}  // namespace hypsel
