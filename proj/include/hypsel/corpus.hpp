#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hypsel/types.hpp"

namespace hypsel {

struct IntRange {
  int min = 0;
  int max = 0;
  bool operator==(const IntRange&) const = default;
};

/// Knobs of the synthetic word-HMM task. Frames of state `s` are drawn as
/// mean_s + shift + noise, with a per-partition shift that creates the domain
/// mismatch between the labeled set and the unlabeled batches.
struct GenerationConfig {
  int vocab_size = 50;
  int states_per_word = 3;
  int feature_dim = 20;
  double emission_noise_sigma = 1.0;
  double self_loop_prob = 0.5;
  double bigram_concentration = 0.3;
  IntRange utterance_length_range{2, 6};
  double batch_shift_magnitude = 2.0;
  /// Per-batch deviation of the shift direction around the shared target
  /// domain direction. 0 means every batch (and the eval set) share one bias.
  double batch_shift_jitter = 0.3;
  /// Probability of an inter-word silence segment. 0 disables the silence unit.
  double silence_prob = 0.1;
  double mean_scale = 1.0;

  int labeled_count = 200;
  int batch_count = 4;
  int batch_size = 500;
  int eval_count = 200;

  std::uint64_t seed = 1;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
  TaskTopology topology() const {
    return TaskTopology{vocab_size, states_per_word, silence_prob > 0.0};
  }

  bool operator==(const GenerationConfig&) const = default;
};

enum class Partition { labeled, batch, eval };

const char* to_string(Partition p);

struct Utterance {
  std::string id;
  FeatureMatrix frames;  // feature_dim x T
  WordSequence reference;
  Partition partition = Partition::labeled;
  int batch_index = -1;  // 0-based; only meaningful for Partition::batch

  int num_frames() const { return static_cast<int>(frames.cols()); }
  bool operator==(const Utterance& other) const;
};

struct CorpusSplit {
  GenerationConfig config;
  std::vector<Utterance> labeled;
  std::vector<std::vector<Utterance>> large_batches;  // stage order
  std::vector<Utterance> eval_set;

  bool operator==(const CorpusSplit&) const = default;
};

/// Ground truth of the generator. Only oracles, debugging and the decode
/// graph's language model read it; the acoustic model never sees it.
struct TrueTaskModel {
  TaskTopology topology;
  Eigen::MatrixXd state_means;         // feature_dim x num_states
  Eigen::VectorXd initial_log_probs;   // vocab
  Eigen::MatrixXd bigram_log_probs;    // vocab x vocab, row = previous word
  std::vector<Eigen::VectorXd> batch_shifts;
  Eigen::VectorXd eval_shift;

  bool operator==(const TrueTaskModel& other) const;
};

struct CorpusArchive {
  CorpusSplit split;
  TrueTaskModel truth;

  bool operator==(const CorpusArchive&) const = default;
};

/// Deterministic in `config.seed`.
CorpusArchive generate_corpus(const GenerationConfig& config);

inline constexpr int kCorpusSchemaVersion = 1;
inline constexpr const char* kCorpusFileName = "corpus.hsc";

void save_corpus(const CorpusArchive& archive, const std::filesystem::path& path);
/// Throws SchemaError on malformed/truncated input, VersionError on an unknown
/// schema version, IoError when the file cannot be opened.
CorpusArchive load_corpus(const std::filesystem::path& path);

/// Minimum number of frames needed to realize `words` (one frame per state).
int min_frames(const TaskTopology& topo, const WordSequence& words);

}  // namespace hypsel
