#include "hypsel/reporting.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "hypsel/error.hpp"
#include "hypsel/parallel.hpp"

namespace hypsel {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string join(const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ';';
    s += format_number(values[i]);
  }
  return s;
}

bool is_rl(const ArmSpec& arm) { return arm.mode == TrainingMode::reinforcement; }

void write_plot(std::span<const ArmResult> arms, const std::filesystem::path& path, bool batch) {
  auto out = open_out(path);
  out << "# stage";
  for (const ArmResult& a : arms) out << ' ' << a.arm.name;
  out << '\n';
  std::size_t stages = 0;
  for (const ArmResult& a : arms) stages = std::max(stages, a.reports.size());
  for (std::size_t k = 0; k < stages; ++k) {
    out << k;
    for (const ArmResult& a : arms) {
      std::optional<double> v;
      if (k < a.reports.size()) v = batch ? a.reports[k].batch_wer : std::optional<double>(a.reports[k].eval_wer);
      out << ' ' << (v ? format_number(*v) : "nan");
    }
    out << '\n';
  }
}

}  // namespace

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string format_number(const std::optional<double>& value) { return value ? format_number(*value) : ""; }

std::vector<CandidateWerPair> candidate_wers(std::span<const PairRecord> records) {
  std::vector<CandidateWerPair> out;
  out.reserve(records.size());
  for (const PairRecord& r : records) out.push_back({r.candidate1_wer.wer(), r.candidate2_wer.wer()});
  return out;
}

SweepTable selection_error_sweep(std::span<const CandidateWerPair> pairs, const SweepSpec& spec) {
  spec.validate();
  if (pairs.empty()) throw ValidationError("sweep needs at least one candidate pair");
  const std::size_t P = spec.error_rates.size();
  const std::size_t trials = static_cast<std::size_t>(spec.trials);
  const double n = static_cast<double>(pairs.size());

  double c1 = 0.0, c2 = 0.0;
  for (const auto& p : pairs) {
    c1 += p.candidate1;
    c2 += p.candidate2;
  }
  c1 /= n;
  c2 /= n;

  std::vector<double> trial_means(P * trials);
  parallel_for(P * trials, [&](std::size_t idx) {
    const std::size_t pi = idx / trials, t = idx % trials;
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(pi), static_cast<std::uint32_t>(t)};
    std::mt19937_64 rng(seq);
    double sum = 0.0;
    for (const auto& pair : pairs) {
      Selection s;
      s.reward = pair.candidate1 <= pair.candidate2 ? 1 : 0;
      s = noisy_select(s, spec.error_rates[pi], rng);
      sum += s.reward == 1 ? pair.candidate1 : pair.candidate2;
    }
    trial_means[idx] = sum / n;
  });

  SweepTable table;
  for (std::size_t pi = 0; pi < P; ++pi) {
    double mean = 0.0;
    for (std::size_t t = 0; t < trials; ++t) mean += trial_means[pi * trials + t];
    mean /= static_cast<double>(trials);
    double var = 0.0;
    for (std::size_t t = 0; t < trials; ++t) var += std::pow(trial_means[pi * trials + t] - mean, 2);
    const double se = trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1) / static_cast<double>(trials)) : 0.0;
    table.rows.push_back({spec.error_rates[pi], mean, se, c1, c2});
    if (!table.crossing_p && mean > c1) table.crossing_p = spec.error_rates[pi];
  }
  return table;
}

void write_sweep_csv(const SweepTable& table, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kSweepHeader << '\n';
  for (const SweepRow& r : table.rows)
    out << format_number(r.p) << ',' << format_number(r.selected_wer) << ',' << format_number(r.selected_se) << ','
        << format_number(r.candidate1_wer) << ',' << format_number(r.candidate2_wer) << '\n';
  out << "# crossing_p," << format_number(table.crossing_p) << '\n';
}

void emit_report(std::span<const ArmResult> arms, const std::filesystem::path& out_dir, bool write_models) {
  std::filesystem::create_directories(out_dir / "reports");
  {
    auto out = open_out(out_dir / "summary.csv");
    out << kSummaryHeader << '\n';
    for (const ArmResult& a : arms)
      for (const StageReport& r : a.reports)
        out << r.stage << ',' << a.arm.name << ',' << (is_rl(a.arm) ? format_number(a.arm.rl.alpha) : "") << ','
            << (is_rl(a.arm) ? format_number(a.arm.selection_noise) : "") << ',' << format_number(r.batch_wer)
            << ',' << format_number(r.eval_wer) << ',' << format_number(r.selected_wer) << '\n';
  }

  std::size_t stages = 0;
  for (const ArmResult& a : arms) stages = std::max(stages, a.reports.size());
  for (std::size_t k = 0; k < stages; ++k) {
    auto out = open_out(out_dir / "reports" / ("stage_" + std::to_string(k) + ".csv"));
    out << kStageHeader << '\n';
    for (const ArmResult& a : arms) {
      if (k >= a.reports.size()) continue;
      const StageReport& r = a.reports[k];
      const bool rl = is_rl(a.arm);
      out << a.arm.name << ',' << to_string(a.arm.mode) << ',' << r.stage << ','
          << (rl ? format_number(a.arm.rl.alpha) : "") << ',' << (rl ? format_number(a.arm.selection_noise) : "")
          << ',' << (rl ? to_string(a.arm.rl.rival_strategy) : "") << ','
          << (rl ? std::to_string(a.arm.rl.rival_rank) : "") << ',' << format_number(r.batch_wer) << ','
          << format_number(r.eval_wer) << ',' << format_number(r.selected_wer) << ','
          << format_number(r.candidate1_wer) << ',' << format_number(r.candidate2_wer) << ',' << r.pairs << ','
          << r.reward_one << ',' << r.dropped_identical << ',' << r.dropped_alignment << ','
          << join(r.lr_trajectory) << ',' << join(r.cv_history) << '\n';
    }
  }

  for (const ArmResult& a : arms) {
    for (std::size_t k = 0; k < a.pairs.size(); ++k) {
      auto out = open_out(out_dir / "reports" / ("pairs_" + a.arm.name + "_stage_" + std::to_string(k) + ".csv"));
      out << kPairsHeader << '\n';
      for (const PairRecord& p : a.pairs[k])
        out << p.utterance_id << ',' << p.candidate2_rank << ',' << p.reward << ',' << p.source << ','
            << format_number(p.weights.candidate1) << ',' << format_number(p.weights.candidate2) << ','
            << format_number(p.candidate1_wer.wer()) << ',' << format_number(p.candidate2_wer.wer()) << ','
            << format_number(p.selected_wer().wer()) << ',' << p.candidate1_wer.errors() << ','
            << p.candidate2_wer.errors() << ',' << p.candidate1_wer.reference_length << ',' << to_string(p.dropped)
            << '\n';
    }
  }

  write_plot(arms, out_dir / "plot_batch_wer.dat", true);
  write_plot(arms, out_dir / "plot_eval_wer.dat", false);

  if (write_models) {
    for (const ArmResult& a : arms) {
      const auto dir = out_dir / "models" / a.arm.name;
      std::filesystem::create_directories(dir);
      for (std::size_t k = 0; k < a.models.size(); ++k)
        save_model(a.models[k], dir / ("RL" + std::to_string(k) + ".bin"));
    }
  }
}

RivalComparison rival_rank_comparison(const ExperimentConfig& config, const std::vector<int>& ranks, double p,
                                      const std::vector<std::uint64_t>& seeds) {
  if (ranks.empty()) throw ConfigError("ranks", "must not be empty");
  if (seeds.empty()) throw ConfigError("seeds", "must not be empty");
  RivalComparison cmp;
  std::vector<ArmSpec> arms{unsupervised_arm("unsup")};
  for (int n : ranks) {
    RlConfig rl = config.rl;
    rl.rival_strategy = RivalStrategy::nth_best;
    rl.rival_rank = n;
    arms.push_back(reinforcement_arm("rl_n" + std::to_string(n), rl, p));
  }
  for (const ArmSpec& a : arms) cmp.arm_names.push_back(a.name);
  for (std::uint64_t seed : seeds) cmp.runs.push_back(run_seed(config, arms, seed));

  for (const std::string& name : cmp.arm_names) {
    std::vector<double> finals;
    for (const SeedRun& run : cmp.runs) finals.push_back(run.arm(name).reports.back().eval_wer);
    cmp.median_final_eval_wer.push_back(median(finals));
  }
  cmp.rl_arms_not_worse = true;
  for (std::size_t i = 1; i < cmp.arm_names.size(); ++i)
    if (cmp.median_final_eval_wer[i] > cmp.median_final_eval_wer[0]) cmp.rl_arms_not_worse = false;
  return cmp;
}

void write_rival_summary(const RivalComparison& comparison, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << kRivalSummaryHeader << '\n';
  if (comparison.runs.empty()) return;
  for (const std::string& name : comparison.arm_names) {
    const std::size_t stages = comparison.runs.front().arm(name).reports.size();
    for (std::size_t k = 0; k < stages; ++k) {
      std::vector<double> batch, eval;
      for (const SeedRun& run : comparison.runs) {
        const StageReport& r = run.arm(name).reports.at(k);
        if (r.batch_wer) batch.push_back(*r.batch_wer);
        eval.push_back(r.eval_wer);
      }
      out << name << ',' << k << ',' << (batch.empty() ? "" : format_number(median(batch))) << ','
          << format_number(median(eval)) << '\n';
    }
  }
}

}  // namespace hypsel
