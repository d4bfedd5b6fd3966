#include "hypsel/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "hypsel/error.hpp"
#include "hypsel/json_io.hpp"

namespace hypsel {

void SweepSpec::validate() const {
  if (error_rates.empty()) throw ConfigError("sweep.error_rates", "must not be empty");
  for (double p : error_rates)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("sweep.error_rates", "values must lie in [0, 1]");
  if (trials < 1) throw ConfigError("sweep.trials", "must be at least 1");
  if (rival_rank < 2) throw ConfigError("sweep.rival_rank", "must be at least 2");
}

ArchConfig ExperimentConfig::resolved_arch() const {
  ArchConfig a = arch;
  a.feature_dim = corpus.feature_dim;
  a.num_states = corpus.topology().num_states();
  return a;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  resolved_arch().validate();
  baseline.validate();
  stage.validate();
  rl.validate();
  if (selector.kind != "oracle" && selector.kind != "noisy" && selector.kind != "human")
    throw ConfigError("selector.kind", "expected oracle, noisy or human");
  if (!(selector.p >= 0.0 && selector.p <= 1.0)) throw ConfigError("selector.p", "must lie in [0, 1]");
  if (!(decode.lm_weight >= 0.0)) throw ConfigError("decode.lm_weight", "must be non-negative");
  sweep.validate();
  if (corpus.batch_count > static_cast<int>(stage.stage_learning_rates.size()))
    throw ConfigError("stage.stage_learning_rates", "fewer rates than large batches");
  std::set<std::string> names;
  for (const ArmSpec& a : arms) {
    a.rl.validate();
    if (!(a.selection_noise >= 0.0 && a.selection_noise <= 1.0)) throw ConfigError("arms[].p", "must lie in [0, 1]");
    if (!names.insert(a.name).second) throw ConfigError("arms[].name", "duplicate arm name " + a.name);
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig config = j.get<ExperimentConfig>();
  config.validate();
  return config;
}

ArmSpec reinforcement_arm(std::string name, const RlConfig& rl, double p) {
  return ArmSpec{std::move(name), TrainingMode::reinforcement, rl, p};
}

ArmSpec unsupervised_arm(std::string name) {
  return ArmSpec{std::move(name), TrainingMode::unsupervised_adaptation, RlConfig{}, 0.0};
}

ArmSpec frozen_arm(std::string name) { return ArmSpec{std::move(name), TrainingMode::frozen, RlConfig{}, 0.0}; }

const ArmResult& SeedRun::arm(const std::string& name) const {
  for (const ArmResult& a : arms)
    if (a.arm.name == name) return a;
  throw ValidationError("no arm named " + name);
}

SeedRun run_seed(const ExperimentConfig& config, const std::vector<ArmSpec>& arms, std::uint64_t seed,
                 const SelectorFactory& make_selector) {
  GenerationConfig gen = config.corpus;
  gen.seed = seed;
  return run_seed_on_corpus(config, generate_corpus(gen), arms, seed, make_selector);
}

SeedRun run_seed_on_corpus(const ExperimentConfig& config, const CorpusArchive& corpus,
                           const std::vector<ArmSpec>& arms, std::uint64_t seed,
                           const SelectorFactory& make_selector) {
  SeedRun run;
  run.seed = seed;
  run.corpus = std::make_unique<CorpusArchive>(corpus);
  run.graph = make_decode_graph(run.corpus->truth, config.decode.lm_weight, config.decode.word_insertion_penalty);
  ExperimentConfig resolved = config;
  resolved.corpus = run.corpus->split.config;
  run.baseline = train_baseline(run.corpus->split.labeled, run.graph, resolved.resolved_arch(), config.baseline, seed);
  run.baseline_eval_wer = evaluate_model(run.baseline.model, run.corpus->split.eval_set, run.graph).wer();
  CampaignConfig campaign{config.stage, arms, seed};
  run.arms = run_campaign(run.corpus->split, run.graph, run.baseline, campaign, make_selector);
  return run;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ValidationError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace hypsel
