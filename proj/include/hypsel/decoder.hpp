#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "hypsel/acoustic_model.hpp"
#include "hypsel/corpus.hpp"
#include "hypsel/types.hpp"

namespace hypsel {

/// Search space for hybrid decoding: word chains with self-loops, optional
/// inter-word silence, and a bigram LM.
///
/// A word sequence with alignment scores
///   sum_t acoustic(t, l_t) + lm_weight * log P_LM(words) + word_insertion_penalty * |words|
/// where acoustic(t, s) is the scaled log-likelihood log(P(s|x_t) / prior(s)).
/// State transitions carry no score.
struct DecodeGraph {
  TaskTopology topology;
  Eigen::VectorXd initial_log_probs;  // vocab
  Eigen::MatrixXd bigram_log_probs;   // vocab x vocab, row = previous word
  double lm_weight = 1.0;
  double word_insertion_penalty = 0.0;

  void validate() const;
  double lm_log_prob(const WordSequence& words) const;
  /// lm_weight * log P_LM + penalty * |words|
  double language_score(const WordSequence& words) const;
};

DecodeGraph make_decode_graph(const TrueTaskModel& truth, double lm_weight = 1.0,
                              double word_insertion_penalty = 0.0);

struct Hypothesis {
  WordSequence words;
  Alignment alignment;  // one state per frame
  double score = 0.0;
  int rank = 0;  // 1-based position in the N-best list

  bool operator==(const Hypothesis&) const = default;
};

/// T x S matrix of log(P(s | x_t)) - log(prior(s)).
Eigen::MatrixXd scaled_log_likelihoods(const AcousticModel& model, const FeatureMatrix& frames);

/// Up to `n` hypotheses with pairwise distinct word sequences, best first.
/// Exact: every (frame, state) keeps its n best distinct word histories, which
/// is sufficient for the global n best distinct sequences. Equal scores are
/// ordered by lower predecessor state id.
std::vector<Hypothesis> nbest_decode(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph, int n);
std::vector<Hypothesis> nbest_decode(const AcousticModel& model, const DecodeGraph& graph,
                                     const FeatureMatrix& frames, int n);

/// Same as the first entry of nbest_decode(..., 1).
Hypothesis viterbi_decode(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph);
Hypothesis viterbi_decode(const AcousticModel& model, const DecodeGraph& graph, const FeatureMatrix& frames);

struct ForcedAlignment {
  Alignment alignment;
  double acoustic_score = 0.0;
  double score = 0.0;  // acoustic_score + graph.language_score(words)
};

/// Best alignment of exactly `words` (optional silence between words when the
/// topology has it). Empty when the utterance is too short for the sequence.
/// Throws ValidationError for empty or out-of-vocabulary input.
std::optional<ForcedAlignment> force_align(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph,
                                           const WordSequence& words);
std::optional<ForcedAlignment> force_align(const AcousticModel& model, const DecodeGraph& graph,
                                           const FeatureMatrix& frames, const WordSequence& words);

/// Every frame is a state of the current word (or silence between words) and
/// each word's states are visited in order.
bool is_legal_alignment(const TaskTopology& topo, const WordSequence& words, const Alignment& alignment);

}  // namespace hypsel
