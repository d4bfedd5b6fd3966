// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [out_dir]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "hypsel/experiment.hpp"
#include "hypsel/reinforce.hpp"
#include "hypsel/reporting.hpp"
#include "oracles.hpp"

using namespace hypsel;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

void gradient_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  const int instances = 24;
  for (int i = 0; i < instances; ++i) {
    ArchConfig arch = fixtures::tiny_arch(2 + i % 3, 2 + i % 5);
    arch.splice = i % 3 == 0 ? 0 : 1;
    arch.hidden_sizes = i % 2 == 0 ? std::vector<int>{5} : std::vector<int>{4, 3};
    arch.per_frame_normalization = i % 4 == 1;
    const auto m = init_model(arch, static_cast<std::uint64_t>(500 + i));
    std::vector<FeatureMatrix> frames{fixtures::random_frames(arch.feature_dim, 2 + i % 4, rng),
                                      fixtures::random_frames(arch.feature_dim, 3, rng)};
    const auto reqs = fixtures::random_requests(rng, frames, arch.num_states);
    worst = std::max(worst, oracles::finite_difference_error(m, reqs, weighted_ce_gradient<double>(m, reqs)));
  }
  const double t = seconds_since(start);
  report(worst <= 1e-4 && t < 10.0, "gradient",
         std::to_string(instances) + " instances, max relative error " + fmt(worst) + ", " + fmt(t) + " s");
}

void estimator_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(77);
  const int policies = 6;
  double worst_z = 0.0;
  bool ok = true;
  for (int i = 0; i < policies; ++i) {
    const auto p = fixtures::random_policy(rng, 2 + (i * 8) / (policies - 1), 3);
    const Eigen::VectorXd exact = exact_policy_gradient(p);
    const auto est = estimate_policy_gradient(p, 100000, rng);
    for (Eigen::Index d = 0; d < exact.size(); ++d) {
      const double err = std::abs(est.mean[d] - exact[d]);
      const double z = est.standard_error[d] > 0 ? err / est.standard_error[d] : (err == 0 ? 0.0 : INFINITY);
      worst_z = std::max(worst_z, z);
      ok = ok && err <= 3.0 * est.standard_error[d];
    }
  }
  const double t = seconds_since(start);
  report(ok && t < 30.0, "estimator",
         std::to_string(policies) + " policies (2..10 actions), 1e5 samples, max |mean - exact| / SE " + fmt(worst_z) +
             ", " + fmt(t) + " s");
}

void weight_algebra_check() {
  double worst = 0.0;
  bool exact = true;
  for (int i = 0; i <= 10; ++i) {
    const double a = i / 10.0;
    for (int r : {0, 1}) {
      const auto e = candidate_weights(r, a);
      const auto c = candidate_weights_conditional(r, a);
      worst = std::max({worst, std::abs(e.candidate1 - c.candidate1), std::abs(e.candidate2 - c.candidate2)});
    }
    exact = exact && candidate_weights_conditional(1, a).candidate1 == 1.0 &&
            candidate_weights_conditional(0, a).candidate1 == -a;
  }
  report(worst <= 1e-12 && exact, "weight algebra",
         "max |expanded - conditional| " + fmt(worst) + " over 11 alphas x 2 rewards; w(r=1) = 1 and w(r=0) = -alpha " +
             (exact ? "exactly" : "NOT exactly"));
}

void decoder_check() {
  const auto start = Clock::now();
  std::mt19937_64 rng(31);
  int mismatches = 0;
  const int instances = 100;
  for (int trial = 0; trial < instances; ++trial) {
    std::uniform_int_distribution<int> vocab(1, 4), spw(1, 2), frames(1, 6), coin(0, 1);
    const int V = vocab(rng), P = spw(rng);
    auto g = fixtures::random_graph(V, P, coin(rng) == 1, rng);
    g.lm_weight = trial % 5 == 0 ? 0.0 : 1.0;
    g.word_insertion_penalty = trial % 4 == 0 ? -0.5 : 0.0;
    const int T = std::max(P, frames(rng));
    const auto a = fixtures::random_acoustic(T, g.topology.num_states(), rng);
    const auto ranked = oracles::brute_force_rank(a, g);
    const auto best = viterbi_decode(a, g);
    const auto nbest = nbest_decode(a, g, 3);
    bool ok = nbest.size() == std::min<std::size_t>(3, ranked.size()) && std::abs(best.score - ranked[0].score) <= 1e-9;
    auto tied_with = [&](const WordSequence& w, double score) {
      for (const auto& s : ranked)
        if (s.words == w && std::abs(s.score - score) <= 1e-9) return true;
      return false;
    };
    ok = ok && tied_with(best.words, ranked[0].score);
    for (std::size_t r = 0; ok && r < nbest.size(); ++r)
      ok = std::abs(nbest[r].score - ranked[r].score) <= 1e-9 && tied_with(nbest[r].words, ranked[r].score);
    if (!ok) ++mismatches;
  }
  const double t = seconds_since(start);
  report(mismatches == 0 && t < 60.0, "decoder exactness",
         std::to_string(instances) + " instances (vocab <= 4, T <= 6), " + std::to_string(mismatches) +
             " mismatches against enumeration, " + fmt(t) + " s");
}

void selection_laws_check(const std::vector<PairRecord>& records) {
  const auto pairs = candidate_wers(records);
  double min_mean = 0.0, mid_mean = 0.0;
  for (const auto& p : pairs) {
    min_mean += std::min(p.candidate1, p.candidate2);
    mid_mean += 0.5 * (p.candidate1 + p.candidate2);
  }
  min_mean /= static_cast<double>(pairs.size());
  mid_mean /= static_cast<double>(pairs.size());
  SweepSpec spec;
  const SweepTable table = selection_error_sweep(pairs, spec);
  const SweepRow* at0 = nullptr;
  const SweepRow* at5 = nullptr;
  bool monotone = true;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].p == 0.0) at0 = &table.rows[i];
    if (table.rows[i].p == 0.5) at5 = &table.rows[i];
    if (i > 0) monotone = monotone && table.rows[i].selected_wer >= table.rows[i - 1].selected_wer;
  }
  const bool ok = at0 && at5 && std::abs(at0->selected_wer - min_mean) <= 1e-12 &&
                  std::abs(at5->selected_wer - mid_mean) <= 3.0 * at5->selected_se && monotone;
  std::string detail = std::to_string(pairs.size()) + " pairs from seed 1 stage 0";
  if (at0 && at5)
    detail += "; p=0 " + fmt(at0->selected_wer) + " vs min " + fmt(min_mean) + "; p=0.5 " + fmt(at5->selected_wer) +
              " vs midpoint " + fmt(mid_mean) + " (SE " + fmt(at5->selected_se) + "); " +
              (monotone ? "monotone" : "NOT monotone");
  report(ok, "selection laws", detail);
}

std::vector<ArmSpec> campaign_arms(const ExperimentConfig& cfg) {
  RlConfig n10 = cfg.rl;
  n10.alpha = 0.5;
  n10.rival_rank = 10;
  RlConfig a09 = n10;
  a09.alpha = 0.9;
  RlConfig n5 = n10;
  n5.rival_rank = 5;
  return {reinforcement_arm("rl", n10, 0.0), unsupervised_arm(), frozen_arm(),
          reinforcement_arm("rl_a09", a09, 0.0), reinforcement_arm("rl_p15", n10, 0.15),
          reinforcement_arm("rl_p15_n5", n5, 0.15)};
}

double final_wer(const SeedRun& run, const std::string& arm) { return run.arm(arm).reports.back().eval_wer; }

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).generic_string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::remove_all(out);
  fs::create_directories(out);

  gradient_check();
  estimator_check();
  weight_algebra_check();
  decoder_check();

  const ExperimentConfig cfg;
  const auto arms = campaign_arms(cfg);
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::map<std::string, std::vector<double>> finals;
  std::vector<double> initial;
  std::vector<PairRecord> stage0_pairs;
  const auto campaign_start = Clock::now();
  for (std::uint64_t seed : seeds) {
    const auto start = Clock::now();
    const SeedRun run = run_seed(cfg, arms, seed);
    emit_report(run.arms, out / ("seed_" + std::to_string(seed)));
    std::cout << "seed " << seed << " (" << fmt(seconds_since(start)) << " s):";
    for (const auto& a : arms) {
      finals[a.name].push_back(final_wer(run, a.name));
      std::cout << ' ' << a.name << '=' << fmt(final_wer(run, a.name));
    }
    std::cout << std::endl;
    initial.push_back(run.baseline_eval_wer);
    if (seed == 1) stage0_pairs = run.arm("rl").pairs.front();
  }
  const double campaign_seconds = seconds_since(campaign_start);

  selection_laws_check(stage0_pairs);

  std::map<std::string, double> med;
  for (const auto& [name, v] : finals) med[name] = median(v);
  const double med_initial = median(initial);
  {
    std::ofstream medians(out / "medians.csv");
    medians << "arm,median_final_eval_wer\n";
    for (const auto& a : arms) medians << a.name << ',' << format_number(med[a.name]) << '\n';
  }

  report(med["rl"] <= med["unsup"] && med["unsup"] <= med_initial && med["rl"] <= med_initial, "main result",
         "median final eval WER rl " + fmt(med["rl"]) + ", unsup " + fmt(med["unsup"]) + ", initial " +
             fmt(med["initial"]) + "; 6 arms x 5 seeds in " + fmt(campaign_seconds / 60.0) + " min (target < 30)");
  report(med["rl_a09"] > med["rl"], "alpha sensitivity",
         "median final eval WER alpha 0.9 " + fmt(med["rl_a09"]) + " vs alpha 0.5 " + fmt(med["rl"]));
  const double margin0 = med["unsup"] - med["rl"];
  const double margin15 = med["unsup"] - med["rl_p15"];
  report(margin15 >= 0.0 && margin15 <= margin0, "noise robustness",
         "p=0.15 rl " + fmt(med["rl_p15"]) + " vs unsup " + fmt(med["unsup"]) + "; margin " + fmt(margin15) +
             " vs p=0 margin " + fmt(margin0));
  report(med["rl_p15"] <= med["unsup"] && med["rl_p15_n5"] <= med["unsup"], "rival rank",
         "p=0.15 n=10 " + fmt(med["rl_p15"]) + ", n=5 " + fmt(med["rl_p15_n5"]) + " vs unsup " + fmt(med["unsup"]));

  {
    const auto start = Clock::now();
    const fs::path again = out / "rerun_seed_1";
    emit_report(run_seed(cfg, arms, 1).arms, again);
    const auto a = read_tree(out / "seed_1");
    const auto b = read_tree(again);
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) {
      auto it = b.find(name);
      if (it == b.end() || it->second != bytes) ++differing;
    }
    const bool ok = a.size() == b.size() && differing == 0 && !a.empty();
    report(ok, "determinism",
           "seed 1 campaign re-run: " + std::to_string(a.size()) + " report and model files, " +
               std::to_string(differing) + " differ, " + fmt(seconds_since(start)) + " s");
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
