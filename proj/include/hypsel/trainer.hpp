#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hypsel/acoustic_model.hpp"
#include "hypsel/corpus.hpp"
#include "hypsel/decoder.hpp"
#include "hypsel/feedback.hpp"
#include "hypsel/reinforce.hpp"

namespace hypsel {

/// Supervised bootstrap on the labeled set.
struct TrainConfig {
  double learning_rate = 0.02;
  int max_epochs = 12;
  int minibatch_frames = 64;
  double clip_norm = 0.0;  // 0 disables clipping
  double cv_fraction = 0.10;
  double halving_threshold = 0.01;
  /// Rounds of (train, re-align) after the flat-start segmentation.
  int realign_rounds = 2;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class TrainingMode {
  reinforcement,
  unsupervised_adaptation,
  /// No update: the "initial model" reference curve.
  frozen,
};
const char* to_string(TrainingMode m);
TrainingMode training_mode_from_string(const std::string& s);

struct StageConfig {
  std::vector<double> stage_learning_rates{0.004, 0.002, 0.001, 0.0005};
  /// Epoch cap within a stage.
  int max_iterations_per_epoch = 7;
  double cv_fraction = 0.10;
  /// Relative CV cross-entropy improvement below which the rate is halved.
  double halving_threshold = 0.01;
  bool labeled_mix = true;
  double labeled_mix_weight = 1.0;
  TrainingMode mode = TrainingMode::reinforcement;
  int minibatch_frames = 256;
  double clip_norm = 5.0;

  void validate() const;
  bool operator==(const StageConfig&) const = default;
};

struct LrDecision {
  double learning_rate = 0.0;
  bool stop = false;
};

/// Halve when the relative CV improvement is below the threshold; stop once
/// `iteration` (1-based count of finished epochs) reaches the cap.
LrDecision lr_schedule_step(double current_lr, double cv_improvement, int iteration, const StageConfig& cfg);

/// Labeled utterances with frame labels, split into training and CV parts.
/// Holds pointers into the corpus, which must outlive it.
struct LabeledSupervision {
  std::vector<const Utterance*> train;
  std::vector<Alignment> train_alignments;
  std::vector<const Utterance*> cv;
  std::vector<Alignment> cv_alignments;

  std::vector<FrameGradientRequest> train_requests(double weight = 1.0) const;
  std::vector<FrameGradientRequest> cv_requests() const;
};

/// Seeded shuffle of the labeled set; at least one utterance goes to CV.
LabeledSupervision split_labeled(const std::vector<Utterance>& labeled, double cv_fraction, std::uint64_t seed);

/// Uniform segmentation of the reference's state chain (no silence) over T frames.
Alignment flat_start_alignment(const TaskTopology& topo, const WordSequence& words, int num_frames);

struct BaselineResult {
  AcousticModel model;
  LabeledSupervision supervision;
  std::vector<double> cv_history;
};

/// Flat start, then cross-entropy SGD with the halving schedule interleaved
/// with forced re-alignment. Returns the best-CV model of the final round.
/// Throws TrainingError when the CV cross-entropy worsens on every epoch.
BaselineResult train_baseline(const std::vector<Utterance>& labeled, const DecodeGraph& graph,
                              const ArchConfig& arch, const TrainConfig& config, std::uint64_t seed);

struct EpochOptions {
  double learning_rate = 0.004;
  int max_epochs = 7;
  double halving_threshold = 0.01;
  int minibatch_frames = 256;
  double clip_norm = 5.0;
  bool keep_best = false;
};

struct EpochLog {
  std::vector<double> lr_trajectory;  // rate used by each epoch
  std::vector<double> cv_history;     // CV cross-entropy before the first and after each epoch
};

/// Minibatch SGD over `requests` (utterance groups shuffled per epoch) with
/// CV-driven halving. Deterministic given `rng`.
EpochLog run_epochs(AcousticModel& model, std::span<const FrameGradientRequest> requests,
                    std::span<const FrameGradientRequest> cv_requests, const EpochOptions& options,
                    std::mt19937_64& rng);

/// Aggregate 1-best WER: total errors over total reference words.
WerBreakdown evaluate_model(const AcousticModel& model, const std::vector<Utterance>& eval_set,
                            const DecodeGraph& graph);

/// What a selector sees for one stage.
struct SelectionRequest {
  int stage = 0;
  std::span<const CandidatePair> pairs;
  std::span<const Utterance* const> utterances;  // parallel to pairs
};

class Selector {
 public:
  virtual ~Selector() = default;
  /// One Selection per pair, in pair order.
  virtual std::vector<Selection> select(const SelectionRequest& request) = 0;
  virtual std::string describe() const = 0;
};

class OracleSelector : public Selector {
 public:
  std::vector<Selection> select(const SelectionRequest& request) override;
  std::string describe() const override { return "oracle"; }
};

/// Oracle selection followed by an independent swap with probability p.
class NoisySelector : public Selector {
 public:
  NoisySelector(double p, std::uint64_t seed);
  std::vector<Selection> select(const SelectionRequest& request) override;
  std::string describe() const override;

 private:
  double p_;
  std::mt19937_64 rng_;
};

struct PairRecord {
  std::string utterance_id;
  WordSequence candidate1;
  WordSequence candidate2;
  int candidate2_rank = 0;
  int reward = 1;
  std::string source;
  CandidateWeights weights;
  WerBreakdown candidate1_wer;
  WerBreakdown candidate2_wer;
  DropReason dropped = DropReason::none;

  const WerBreakdown& selected_wer() const { return reward == 1 ? candidate1_wer : candidate2_wer; }
};

struct StageReport {
  int stage = 0;
  /// 1-best WER of RL_k on batch k+1; absent for the final model.
  std::optional<double> batch_wer;
  double eval_wer = 0.0;
  std::optional<double> selected_wer;
  std::optional<double> candidate1_wer;
  std::optional<double> candidate2_wer;
  int pairs = 0;
  int reward_one = 0;
  int dropped_identical = 0;
  int dropped_alignment = 0;
  std::vector<double> lr_trajectory;
  std::vector<double> cv_history;
  /// Not part of the serialized report (keeps reports reproducible).
  double wall_seconds = 0.0;
};

struct StageContext {
  const DecodeGraph* graph = nullptr;
  const LabeledSupervision* supervision = nullptr;
  const std::vector<Utterance>* eval_set = nullptr;
  const ModelArchive* archive = nullptr;  // previous_stage rivals
  std::uint64_t seed = 0;
};

struct StageResult {
  AcousticModel model;  // RL_{k+1}
  StageReport report;   // metrics of RL_k
  std::vector<PairRecord> pairs;
};

/// One round of the staged protocol: decode `batch` with RL_k, pair 1-best
/// with a rival, collect selections, build weighted requests and train RL_{k+1}.
StageResult run_stage(const AcousticModel& model, int stage_index, const std::vector<Utterance>& batch,
                      const StageConfig& config, const RlConfig& rl, Selector* selector, const StageContext& context);

struct ArmSpec {
  std::string name;
  TrainingMode mode = TrainingMode::reinforcement;
  RlConfig rl;
  double selection_noise = 0.0;
  bool operator==(const ArmSpec&) const = default;
};

struct CampaignConfig {
  StageConfig stage;
  std::vector<ArmSpec> arms;
  std::uint64_t seed = 1;
};

struct ArmResult {
  ArmSpec arm;
  std::vector<StageReport> reports;  // stages 0..K
  std::vector<AcousticModel> models; // RL0..RLK
  std::vector<std::vector<PairRecord>> pairs;  // per stage 0..K-1
};

using SelectorFactory = std::function<std::unique_ptr<Selector>(const ArmSpec&, std::uint64_t seed)>;

/// Oracle for p = 0, NoisySelector otherwise.
std::unique_ptr<Selector> default_selector(const ArmSpec& arm, std::uint64_t seed);

/// Every arm starts from the same baseline and sees the same batches and
/// shuffling seeds, so arms diverge only through their updates.
std::vector<ArmResult> run_campaign(const CorpusSplit& corpus, const DecodeGraph& graph,
                                    const BaselineResult& baseline, const CampaignConfig& config,
                                    const SelectorFactory& make_selector = default_selector);

}  // namespace hypsel
