#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>

#include "hypsel/decoder.hpp"
#include "hypsel/types.hpp"

namespace hypsel {

struct WerBreakdown {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;
  int reference_length = 0;

  int errors() const { return substitutions + insertions + deletions; }
  /// errors / reference_length; may exceed 1.
  double wer() const {
    return reference_length > 0 ? static_cast<double>(errors()) / reference_length : 0.0;
  }

  WerBreakdown& operator+=(const WerBreakdown& o) {
    substitutions += o.substitutions;
    insertions += o.insertions;
    deletions += o.deletions;
    reference_length += o.reference_length;
    return *this;
  }
  bool operator==(const WerBreakdown&) const = default;
};

/// Unit-cost Levenshtein alignment. When several alignments reach the minimum
/// the backtrace prefers substitution, then insertion, then deletion.
WerBreakdown word_error_rate(std::span<const WordId> hypothesis, std::span<const WordId> reference);

enum class SelectionSource { oracle, noisy, human };
const char* to_string(SelectionSource s);

/// Binary feedback for a candidate pair: reward 1 means Candidate 1 was chosen.
struct Selection {
  int reward = 1;
  SelectionSource source = SelectionSource::oracle;
  double noise_p = 0.0;  // meaningful for SelectionSource::noisy
  std::optional<std::pair<WerBreakdown, WerBreakdown>> candidate_wers;

  bool operator==(const Selection&) const = default;
};

/// Reward 1 iff WER(h1) <= WER(h2); exact ties go to Candidate 1.
Selection oracle_select(const Hypothesis& h1, const Hypothesis& h2, const WordSequence& reference);

/// Flips the reward with probability p (one Bernoulli draw per call).
Selection noisy_select(const Selection& selection, double p, std::mt19937_64& rng);

}  // namespace hypsel
