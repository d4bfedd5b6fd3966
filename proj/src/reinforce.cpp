#include "hypsel/reinforce.hpp"

#include <cmath>

#include "hypsel/error.hpp"

namespace hypsel {

namespace {
void check(int reward, double alpha) {
  if (reward != 0 && reward != 1) throw ValidationError("reward must be 0 or 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
}
}  // namespace

const char* to_string(RivalStrategy s) {
  return s == RivalStrategy::nth_best ? "nth_best" : "previous_stage";
}

const char* to_string(DropReason r) {
  switch (r) {
    case DropReason::none: return "";
    case DropReason::identical_candidates: return "identical_candidates";
    case DropReason::alignment_failure: return "alignment_failure";
  }
  return "unknown";
}

void RlConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("rl.alpha", "must lie in [0, 1]");
  if (rival_strategy == RivalStrategy::nth_best && rival_rank < 2)
    throw ConfigError("rl.rival_rank", "must be >= 2");
}

CandidateWeights candidate_weights(int reward, double alpha) {
  check(reward, alpha);
  const double r = reward;
  const double k = 1.0 + alpha;
  return {k * (r - alpha / k), k * ((-r) - (-1.0) / k)};
}

CandidateWeights candidate_weights_conditional(int reward, double alpha) {
  check(reward, alpha);
  return reward == 1 ? CandidateWeights{1.0, -alpha} : CandidateWeights{-alpha, 1.0};
}

double reinforcement_baseline(double alpha) {
  check(1, alpha);
  return alpha / (1.0 + alpha);
}

double single_candidate_weight(int reward, double alpha) {
  check(reward, alpha);
  return (1.0 + alpha) * (reward - reinforcement_baseline(alpha));
}

RlRequests build_rl_requests(const CandidatePair& pair, const Selection& selection, const RlConfig& config,
                             const FeatureMatrix& frames, const Aligner& aligner) {
  RlRequests out;
  out.weights = candidate_weights_conditional(selection.reward, config.alpha);
  if (config.skip_identical_candidates && pair.candidate1.words == pair.candidate2.words) {
    out.dropped = DropReason::identical_candidates;
    return out;
  }
  auto alignment_of = [&](const Hypothesis& h) -> std::optional<Alignment> {
    if (!h.alignment.empty()) return h.alignment;
    if (!aligner) return std::nullopt;
    return aligner(h.words);
  };
  const auto a1 = alignment_of(pair.candidate1);
  const auto a2 = alignment_of(pair.candidate2);
  if (!a1 || !a2 || a1->size() != static_cast<std::size_t>(frames.cols()) ||
      a2->size() != static_cast<std::size_t>(frames.cols())) {
    out.dropped = DropReason::alignment_failure;
    return out;
  }
  if (out.weights.candidate1 != 0.0)
    out.requests.push_back({&frames, *a1, out.weights.candidate1, pair.utterance_id});
  if (out.weights.candidate2 != 0.0)
    out.requests.push_back({&frames, *a2, out.weights.candidate2, pair.utterance_id});
  return out;
}

void ModelArchive::publish(AcousticModel model) {
  std::lock_guard lock(mutex_);
  models_.push_back(std::make_shared<const AcousticModel>(std::move(model)));
}

std::size_t ModelArchive::size() const {
  std::lock_guard lock(mutex_);
  return models_.size();
}

std::shared_ptr<const AcousticModel> ModelArchive::at(std::size_t index) const {
  std::lock_guard lock(mutex_);
  return models_.at(index);
}

std::shared_ptr<const AcousticModel> ModelArchive::sample(std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  if (models_.empty()) throw ConfigError("rl.rival_strategy", "previous_stage rival needs a non-empty model archive");
  std::uniform_int_distribution<std::size_t> pick(0, models_.size() - 1);
  return models_[pick(rng)];
}

Hypothesis select_rival(const std::vector<Hypothesis>& nbest, const RlConfig& config, const ModelArchive* archive,
                        const DecodeGraph& graph, const FeatureMatrix& frames, std::mt19937_64& rng) {
  if (nbest.empty()) throw ValidationError("select_rival needs a non-empty n-best list");
  if (config.rival_strategy == RivalStrategy::nth_best) {
    const std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(config.rival_rank), nbest.size()) - 1;
    return nbest[idx];
  }
  if (archive == nullptr) throw ConfigError("rl.rival_strategy", "previous_stage rival needs a model archive");
  const auto model = archive->sample(rng);
  return viterbi_decode(*model, graph, frames);
}

Eigen::VectorXd EnumerablePolicy::probabilities() const {
  const Eigen::VectorXd logits = features * theta;
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd EnumerablePolicy::grad_log_prob(int action) const {
  const Eigen::VectorXd p = probabilities();
  return features.row(action).transpose() - features.transpose() * p;
}

double EnumerablePolicy::expected_reward() const { return probabilities().dot(rewards); }

Eigen::VectorXd exact_policy_gradient(const EnumerablePolicy& policy) {
  const Eigen::VectorXd p = policy.probabilities();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.theta.size());
  for (int a = 0; a < policy.num_actions(); ++a) g += p[a] * policy.rewards[a] * policy.grad_log_prob(a);
  return g;
}

PolicyGradientEstimate estimate_policy_gradient(const EnumerablePolicy& policy, int num_samples,
                                                std::mt19937_64& rng) {
  if (num_samples < 1) throw ValidationError("num_samples must be >= 1");
  const Eigen::VectorXd p = policy.probabilities();
  std::discrete_distribution<int> draw(p.data(), p.data() + p.size());

  // Per-action score vectors r(a) * grad log P(a) are fixed; cache them.
  std::vector<Eigen::VectorXd> score(static_cast<std::size_t>(policy.num_actions()));
  for (int a = 0; a < policy.num_actions(); ++a)
    score[static_cast<std::size_t>(a)] = policy.rewards[a] * policy.grad_log_prob(a);

  const auto D = policy.theta.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(D);
  for (int i = 0; i < num_samples; ++i) {
    const Eigen::VectorXd& s = score[static_cast<std::size_t>(draw(rng))];
    sum += s;
    sum_sq += s.cwiseProduct(s);
  }
  PolicyGradientEstimate est;
  const double n = num_samples;
  est.mean = sum / n;
  const Eigen::VectorXd var = (sum_sq / n - est.mean.cwiseProduct(est.mean)).cwiseMax(0.0) * (n / std::max(1.0, n - 1));
  est.standard_error = (var / n).cwiseSqrt();
  return est;
}

}  // namespace hypsel
