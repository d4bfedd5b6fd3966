#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hypsel/acoustic_model.hpp"
#include "hypsel/decoder.hpp"
#include "hypsel/feedback.hpp"

namespace hypsel {

enum class RivalStrategy { nth_best, previous_stage };
const char* to_string(RivalStrategy s);

struct RlConfig {
  /// Weight of the unselected candidate's negative gradient, in [0, 1].
  double alpha = 0.5;
  RivalStrategy rival_strategy = RivalStrategy::nth_best;
  int rival_rank = 10;
  bool skip_identical_candidates = true;

  void validate() const;
  /// N-best depth the decoder must produce for this config.
  int nbest_size() const { return rival_strategy == RivalStrategy::nth_best ? rival_rank : 1; }
  bool operator==(const RlConfig&) const = default;
};

struct CandidateWeights {
  double candidate1 = 0.0;
  double candidate2 = 0.0;
  bool operator==(const CandidateWeights&) const = default;
};

/// Symmetric two-candidate weights written as the sum of two baseline-shifted
/// rewards: w1 = (1+a)(r - a/(1+a)), w2 = (1+a)(-r - (-1)/(1+a)).
CandidateWeights candidate_weights(int reward, double alpha);
/// Same weights in conditional form: (1, -a) when r = 1, (-a, 1) when r = 0.
/// Exact for every a; training uses this form.
CandidateWeights candidate_weights_conditional(int reward, double alpha);

/// (1+a)(r - b) with baseline b = a/(1+a).
double single_candidate_weight(int reward, double alpha);
double reinforcement_baseline(double alpha);

struct CandidatePair {
  std::string utterance_id;
  Hypothesis candidate1;  // 1-best
  Hypothesis candidate2;  // rival
};

enum class DropReason { none, identical_candidates, alignment_failure };
const char* to_string(DropReason r);

struct RlRequests {
  std::vector<FrameGradientRequest> requests;
  CandidateWeights weights;
  DropReason dropped = DropReason::none;
};

/// Recovers an alignment for a word sequence (normally forced alignment with
/// the current model); empty on failure.
using Aligner = std::function<std::optional<Alignment>(const WordSequence&)>;

/// Emits (candidate1 alignment, w1) and (candidate2 alignment, w2); requests
/// with weight exactly zero are omitted. Hypotheses without an alignment are
/// aligned with `aligner`.
RlRequests build_rl_requests(const CandidatePair& pair, const Selection& selection, const RlConfig& config,
                             const FeatureMatrix& frames, const Aligner& aligner = {});

/// Append-only store of published models used by the previous_stage rival
/// strategy. Reads take a snapshot under the lock.
class ModelArchive {
 public:
  void publish(AcousticModel model);
  std::size_t size() const;
  std::shared_ptr<const AcousticModel> at(std::size_t index) const;
  /// Uniformly sampled archived model. Throws ConfigError when empty.
  std::shared_ptr<const AcousticModel> sample(std::mt19937_64& rng) const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::shared_ptr<const AcousticModel>> models_;
};

/// nth_best: rank-n hypothesis or the deepest available one.
/// previous_stage: 1-best of a uniformly sampled archived model.
Hypothesis select_rival(const std::vector<Hypothesis>& nbest, const RlConfig& config, const ModelArchive* archive,
                        const DecodeGraph& graph, const FeatureMatrix& frames, std::mt19937_64& rng);

/// Linear-softmax policy over a finite action set: P(a) ∝ exp(phi_a . theta).
struct EnumerablePolicy {
  Eigen::VectorXd theta;
  Eigen::MatrixXd features;  // actions x dim
  Eigen::VectorXd rewards;   // r(a)

  int num_actions() const { return static_cast<int>(features.rows()); }
  Eigen::VectorXd probabilities() const;
  /// d log P(a) / d theta = phi_a - E_P[phi]
  Eigen::VectorXd grad_log_prob(int action) const;
  double expected_reward() const;
};

/// sum_a P(a) r(a) d log P(a) / d theta, by enumeration.
Eigen::VectorXd exact_policy_gradient(const EnumerablePolicy& policy);

struct PolicyGradientEstimate {
  Eigen::VectorXd mean;
  Eigen::VectorXd standard_error;  // per coordinate
};

/// Monte Carlo average of r(a_i) * d log P(a_i) / d theta over sampled actions.
PolicyGradientEstimate estimate_policy_gradient(const EnumerablePolicy& policy, int num_samples,
                                                std::mt19937_64& rng);

}  // namespace hypsel
