#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hypsel/acoustic_model.hpp"
#include "hypsel/corpus.hpp"
#include "hypsel/reinforce.hpp"
#include "hypsel/trainer.hpp"

namespace hypsel {

struct DecodeOptions {
  double lm_weight = 1.0;
  double word_insertion_penalty = 0.0;
  bool operator==(const DecodeOptions&) const = default;
};

struct SelectorSpec {
  std::string kind = "oracle";  // oracle | noisy | human
  double p = 0.0;
  bool operator==(const SelectorSpec&) const = default;
};

struct SweepSpec {
  std::vector<double> error_rates{0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50};
  int trials = 200;
  std::uint64_t seed = 1;
  /// Rival rank used when the sweep decodes its own candidate pairs.
  int rival_rank = 10;

  void validate() const;
  bool operator==(const SweepSpec&) const = default;
};

/// Everything a run needs; the file form is JSON with one object per section.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  GenerationConfig corpus;
  ArchConfig arch;
  TrainConfig baseline;
  StageConfig stage;
  RlConfig rl;
  DecodeOptions decode;
  SelectorSpec selector;
  SweepSpec sweep;
  /// Explicit arm list; when empty the CLI derives arms from `rl`/`selector`.
  std::vector<ArmSpec> arms;

  void validate() const;
  /// Arch with feature_dim / num_states filled in from the corpus.
  ArchConfig resolved_arch() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// RL arm named `name` using `rl` and noise `p`.
ArmSpec reinforcement_arm(std::string name, const RlConfig& rl, double p);
ArmSpec unsupervised_arm(std::string name = "unsup");
ArmSpec frozen_arm(std::string name = "initial");

/// One seed's full pipeline: corpus, baseline, then the arms of a campaign.
struct SeedRun {
  std::uint64_t seed = 0;
  std::unique_ptr<CorpusArchive> corpus;  // owned here; baseline points into it
  DecodeGraph graph;
  BaselineResult baseline;
  double baseline_eval_wer = 0.0;
  std::vector<ArmResult> arms;

  const ArmResult& arm(const std::string& name) const;
};

/// Uses `seed` for corpus generation, initialization and the campaign.
SeedRun run_seed(const ExperimentConfig& config, const std::vector<ArmSpec>& arms, std::uint64_t seed,
                 const SelectorFactory& make_selector = default_selector);

/// Same, on an existing corpus (the corpus archive is copied into the run).
SeedRun run_seed_on_corpus(const ExperimentConfig& config, const CorpusArchive& corpus,
                           const std::vector<ArmSpec>& arms, std::uint64_t seed,
                           const SelectorFactory& make_selector = default_selector);

double median(std::vector<double> values);

}  // namespace hypsel
