#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypsel/experiment.hpp"
#include "hypsel/trainer.hpp"

namespace hypsel {

/// Per-utterance WERs of a candidate pair.
struct CandidateWerPair {
  double candidate1 = 0.0;
  double candidate2 = 0.0;
};

struct SweepRow {
  double p = 0.0;
  double selected_wer = 0.0;  // mean over trials of the per-pair mean
  double selected_se = 0.0;   // standard error across trials
  double candidate1_wer = 0.0;
  double candidate2_wer = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  /// First swept p whose selected WER exceeds the Candidate 1 WER.
  std::optional<double> crossing_p;
};

/// Simulated selection with error rate p over recorded candidate WERs.
SweepTable selection_error_sweep(std::span<const CandidateWerPair> pairs, const SweepSpec& spec);

/// Candidate WERs of every pair in a stage log.
std::vector<CandidateWerPair> candidate_wers(std::span<const PairRecord> records);

inline constexpr const char* kSummaryHeader = "stage,arm,alpha,p,batch_wer,eval_wer,selected_wer";
inline constexpr const char* kStageHeader =
    "arm,mode,stage,alpha,p,rival_strategy,rival_rank,batch_wer,eval_wer,selected_wer,candidate1_wer,"
    "candidate2_wer,pairs,reward_one,dropped_identical,dropped_alignment,lr_trajectory,cv_history";
inline constexpr const char* kPairsHeader =
    "utterance_id,candidate2_rank,reward,source,weight1,weight2,candidate1_wer,candidate2_wer,selected_wer,"
    "candidate1_errors,candidate2_errors,reference_length,dropped";
inline constexpr const char* kSweepHeader = "p,selected_wer,selected_se,candidate1_wer,candidate2_wer";
inline constexpr const char* kRivalSummaryHeader = "arm,stage,median_batch_wer,median_eval_wer";

/// Shortest text that round-trips the double ("nan" for NaN, empty for absent).
std::string format_number(double value);
std::string format_number(const std::optional<double>& value);

/// Writes summary.csv, reports/stage_<k>.csv, reports/pairs_<arm>_stage_<k>.csv,
/// plot_batch_wer.dat, plot_eval_wer.dat and (when `write_models`)
/// models/<arm>/RL<k>.bin. Output depends only on the arguments.
void emit_report(std::span<const ArmResult> arms, const std::filesystem::path& out_dir, bool write_models = true);

void write_sweep_csv(const SweepTable& table, const std::filesystem::path& path);

struct RivalComparison {
  std::vector<SeedRun> runs;
  /// Arm names: "unsup", then "rl_n<rank>" per rank.
  std::vector<std::string> arm_names;
  /// Median over seeds of the final eval WER, parallel to arm_names.
  std::vector<double> median_final_eval_wer;
  bool rl_arms_not_worse = false;
};

/// Paired campaigns differing only in the rival rank, plus an unsupervised arm.
RivalComparison rival_rank_comparison(const ExperimentConfig& config, const std::vector<int>& ranks, double p,
                                      const std::vector<std::uint64_t>& seeds);

/// One row per (arm, stage) with medians over the runs.
void write_rival_summary(const RivalComparison& comparison, const std::filesystem::path& path);

}  // namespace hypsel
