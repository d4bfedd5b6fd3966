#include "hypsel/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hypsel/error.hpp"
#include "hypsel/parallel.hpp"

namespace hypsel {

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  // splitmix64 finalizer over base ^ tag
  std::uint64_t z = base ^ (tag + 0x9e3779b97f4a7c15ULL + (base << 6) + (base >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;
constexpr std::uint64_t kRivalTag = 0x524956414cULL;
constexpr std::uint64_t kSelectorTag = 0x53454c4543ULL;
constexpr std::uint64_t kStageTag = 0x5354414745ULL;

LrDecision schedule(double lr, double improvement, int iteration, double threshold, int cap) {
  LrDecision d;
  d.learning_rate = improvement < threshold ? lr / 2.0 : lr;
  d.stop = iteration >= cap;
  return d;
}

}  // namespace

const char* to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::reinforcement: return "reinforcement";
    case TrainingMode::unsupervised_adaptation: return "unsupervised_adaptation";
    case TrainingMode::frozen: return "frozen";
  }
  return "unknown";
}

TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "reinforcement" || s == "rl") return TrainingMode::reinforcement;
  if (s == "unsupervised_adaptation" || s == "unsup") return TrainingMode::unsupervised_adaptation;
  if (s == "frozen" || s == "initial") return TrainingMode::frozen;
  throw ConfigError("mode", "unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("baseline.learning_rate", "must be > 0");
  if (max_epochs < 1) throw ConfigError("baseline.max_epochs", "must be >= 1");
  if (minibatch_frames < 1) throw ConfigError("baseline.minibatch_frames", "must be >= 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("baseline.clip_norm", "must be >= 0");
  if (!(cv_fraction > 0.0 && cv_fraction < 1.0)) throw ConfigError("baseline.cv_fraction", "must lie in (0, 1)");
  if (realign_rounds < 0) throw ConfigError("baseline.realign_rounds", "must be >= 0");
}

void StageConfig::validate() const {
  if (stage_learning_rates.empty()) throw ConfigError("stage.stage_learning_rates", "must not be empty");
  for (double r : stage_learning_rates)
    if (!(r > 0.0)) throw ConfigError("stage.stage_learning_rates", "all rates must be > 0");
  if (max_iterations_per_epoch < 1) throw ConfigError("stage.max_iterations_per_epoch", "must be >= 1");
  if (!(cv_fraction > 0.0 && cv_fraction < 1.0)) throw ConfigError("stage.cv_fraction", "must lie in (0, 1)");
  if (!(labeled_mix_weight >= 0.0)) throw ConfigError("stage.labeled_mix_weight", "must be >= 0");
  if (minibatch_frames < 1) throw ConfigError("stage.minibatch_frames", "must be >= 1");
  if (!(clip_norm >= 0.0)) throw ConfigError("stage.clip_norm", "must be >= 0");
}

LrDecision lr_schedule_step(double current_lr, double cv_improvement, int iteration, const StageConfig& cfg) {
  if (!(current_lr > 0.0)) throw ValidationError("learning rate must be > 0");
  return schedule(current_lr, cv_improvement, iteration, cfg.halving_threshold, cfg.max_iterations_per_epoch);
}

std::vector<FrameGradientRequest> LabeledSupervision::train_requests(double weight) const {
  std::vector<FrameGradientRequest> out;
  out.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    out.push_back({&train[i]->frames, train_alignments[i], weight, train[i]->id});
  return out;
}

std::vector<FrameGradientRequest> LabeledSupervision::cv_requests() const {
  std::vector<FrameGradientRequest> out;
  out.reserve(cv.size());
  for (std::size_t i = 0; i < cv.size(); ++i) out.push_back({&cv[i]->frames, cv_alignments[i], 1.0, cv[i]->id});
  return out;
}

LabeledSupervision split_labeled(const std::vector<Utterance>& labeled, double cv_fraction, std::uint64_t seed) {
  if (labeled.size() < 2) throw ValidationError("labeled set needs at least 2 utterances for a CV split");
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x4356ULL));
  std::shuffle(order.begin(), order.end(), rng);
  auto cv_count = static_cast<std::size_t>(std::lround(cv_fraction * static_cast<double>(labeled.size())));
  cv_count = std::clamp<std::size_t>(cv_count, 1, labeled.size() - 1);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cv_count));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(cv_count), order.end());
  LabeledSupervision sup;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < cv_count ? sup.cv : sup.train).push_back(&labeled[order[i]]);
  return sup;
}

Alignment flat_start_alignment(const TaskTopology& topo, const WordSequence& words, int num_frames) {
  std::vector<StateId> chain;
  for (WordId w : words)
    for (int j = 0; j < topo.states_per_word; ++j) chain.push_back(topo.state(w, j));
  if (chain.empty() || num_frames < static_cast<int>(chain.size()))
    throw ValidationError("utterance too short for flat-start segmentation");
  Alignment a(static_cast<std::size_t>(num_frames));
  const auto N = static_cast<long long>(chain.size());
  for (int t = 0; t < num_frames; ++t) a[static_cast<std::size_t>(t)] = chain[static_cast<std::size_t>(t * N / num_frames)];
  return a;
}

EpochLog run_epochs(AcousticModel& model, std::span<const FrameGradientRequest> requests,
                    std::span<const FrameGradientRequest> cv_requests, const EpochOptions& options,
                    std::mt19937_64& rng) {
  EpochLog log;
  const double cv0 = cross_entropy(model, cv_requests);
  log.cv_history.push_back(cv0);
  if (requests.empty()) return log;

  // Units: runs of consecutive requests on the same utterance.
  std::vector<std::pair<std::size_t, std::size_t>> units;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (units.empty() || requests[units.back().first].frames != requests[i].frames) units.push_back({i, i + 1});
    else units.back().second = i + 1;
  }

  double lr = options.learning_rate;
  double prev = cv0;
  double best_cv = cv0;
  std::optional<AcousticModel> best;
  if (options.keep_best) best = model;

  std::vector<FrameGradientRequest> minibatch;
  for (int iteration = 1; iteration <= options.max_epochs; ++iteration) {
    std::shuffle(units.begin(), units.end(), rng);
    std::size_t frames = 0;
    minibatch.clear();
    auto flush = [&] {
      if (minibatch.empty()) return;
      const Gradient g = weighted_ce_gradient(model, std::span<const FrameGradientRequest>(minibatch));
      apply_sgd_step(model, g, lr, options.clip_norm);
      minibatch.clear();
      frames = 0;
    };
    for (const auto& [b, e] : units) {
      for (std::size_t i = b; i < e; ++i) minibatch.push_back(requests[i]);
      frames += static_cast<std::size_t>(requests[b].frames->cols());
      if (frames >= static_cast<std::size_t>(options.minibatch_frames)) flush();
    }
    flush();

    const double cv = cross_entropy(model, cv_requests);
    log.cv_history.push_back(cv);
    log.lr_trajectory.push_back(lr);
    if (options.keep_best && cv < best_cv) {
      best_cv = cv;
      best = model;
    }
    const double improvement = (prev - cv) / prev;
    const LrDecision d = schedule(lr, improvement, iteration, options.halving_threshold, options.max_epochs);
    if (d.stop) break;
    lr = d.learning_rate;
    prev = cv;
  }
  if (options.keep_best) model = std::move(*best);
  return log;
}

BaselineResult train_baseline(const std::vector<Utterance>& labeled, const DecodeGraph& graph,
                              const ArchConfig& arch, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  arch.validate();
  if (labeled.empty()) throw ValidationError("labeled set is empty");
  if (arch.num_states != graph.topology.num_states())
    throw ConfigError("arch.num_states", "does not match the decode graph's state count");

  BaselineResult result;
  result.supervision = split_labeled(labeled, config.cv_fraction, seed);
  LabeledSupervision& sup = result.supervision;
  for (const Utterance* u : sup.train)
    sup.train_alignments.push_back(flat_start_alignment(graph.topology, u->reference, u->num_frames()));
  for (const Utterance* u : sup.cv)
    sup.cv_alignments.push_back(flat_start_alignment(graph.topology, u->reference, u->num_frames()));

  result.model = init_model(arch, seed);
  std::mt19937_64 rng(mix_seed(seed, kShuffleTag));
  EpochOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.max_epochs = config.max_epochs;
  opts.halving_threshold = config.halving_threshold;
  opts.minibatch_frames = config.minibatch_frames;
  opts.clip_norm = config.clip_norm;
  opts.keep_best = true;

  auto realign = [&](std::vector<const Utterance*>& utts, std::vector<Alignment>& alignments) {
    std::vector<std::optional<ForcedAlignment>> fresh(utts.size());
    parallel_for(utts.size(), [&](std::size_t i) {
      fresh[i] = force_align(result.model, graph, utts[i]->frames, utts[i]->reference);
    });
    for (std::size_t i = 0; i < utts.size(); ++i)
      if (fresh[i]) alignments[i] = std::move(fresh[i]->alignment);
  };

  for (int round = 0; round <= config.realign_rounds; ++round) {
    result.model.state_priors = estimate_priors(sup.train_alignments, arch.num_states, arch.prior_floor);
    const auto train = sup.train_requests();
    const auto cv = sup.cv_requests();
    const EpochLog log = run_epochs(result.model, train, cv, opts, rng);
    bool worsened_every_epoch = log.cv_history.size() > 1;
    for (std::size_t i = 1; i < log.cv_history.size(); ++i)
      if (!(log.cv_history[i] > log.cv_history[i - 1])) worsened_every_epoch = false;
    if (worsened_every_epoch)
      throw TrainingError("baseline training diverged in round " + std::to_string(round) +
                          ": CV cross-entropy rose on every epoch (start " + std::to_string(log.cv_history.front()) +
                          ", end " + std::to_string(log.cv_history.back()) + ")");
    result.cv_history.insert(result.cv_history.end(), log.cv_history.begin(), log.cv_history.end());
    if (round < config.realign_rounds) {
      realign(sup.train, sup.train_alignments);
      realign(sup.cv, sup.cv_alignments);
    }
  }
  result.model.state_priors = estimate_priors(sup.train_alignments, arch.num_states, arch.prior_floor);
  return result;
}

WerBreakdown evaluate_model(const AcousticModel& model, const std::vector<Utterance>& eval_set,
                            const DecodeGraph& graph) {
  if (eval_set.empty()) throw ValidationError("evaluation set is empty");
  std::vector<WerBreakdown> per(eval_set.size());
  parallel_for(eval_set.size(), [&](std::size_t i) {
    per[i] = word_error_rate(viterbi_decode(model, graph, eval_set[i].frames).words, eval_set[i].reference);
  });
  WerBreakdown total;
  for (const auto& w : per) total += w;
  return total;
}

std::vector<Selection> OracleSelector::select(const SelectionRequest& request) {
  std::vector<Selection> out;
  out.reserve(request.pairs.size());
  for (std::size_t i = 0; i < request.pairs.size(); ++i)
    out.push_back(oracle_select(request.pairs[i].candidate1, request.pairs[i].candidate2,
                                request.utterances[i]->reference));
  return out;
}

NoisySelector::NoisySelector(double p, std::uint64_t seed) : p_(p), rng_(seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("selector.p", "must lie in [0, 1]");
}

std::vector<Selection> NoisySelector::select(const SelectionRequest& request) {
  std::vector<Selection> out;
  out.reserve(request.pairs.size());
  for (std::size_t i = 0; i < request.pairs.size(); ++i)
    out.push_back(noisy_select(oracle_select(request.pairs[i].candidate1, request.pairs[i].candidate2,
                                             request.utterances[i]->reference),
                               p_, rng_));
  return out;
}

std::string NoisySelector::describe() const { return "noisy(" + std::to_string(p_) + ")"; }

StageResult run_stage(const AcousticModel& model, int stage_index, const std::vector<Utterance>& batch,
                      const StageConfig& config, const RlConfig& rl, Selector* selector, const StageContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  rl.validate();
  if (ctx.graph == nullptr || ctx.supervision == nullptr || ctx.eval_set == nullptr)
    throw ConfigError("stage.context", "graph, supervision and eval set are required");
  if (stage_index < 0 || stage_index >= static_cast<int>(config.stage_learning_rates.size()))
    throw ConfigError("stage.stage_learning_rates", "no learning rate for stage " + std::to_string(stage_index));
  if (batch.empty()) throw ValidationError("stage batch is empty");
  const DecodeGraph& graph = *ctx.graph;

  StageResult result;
  result.model = model;
  StageReport& report = result.report;
  report.stage = stage_index;

  std::vector<std::vector<Hypothesis>> nbests(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    nbests[i] = nbest_decode(model, graph, batch[i].frames, rl.nbest_size());
  });
  report.eval_wer = evaluate_model(model, *ctx.eval_set, graph).wer();

  std::mt19937_64 rival_rng(mix_seed(ctx.seed, kRivalTag));
  std::vector<CandidatePair> pairs;
  std::vector<const Utterance*> utts;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pairs.push_back({batch[i].id, nbests[i].front(),
                     select_rival(nbests[i], rl, ctx.archive, graph, batch[i].frames, rival_rng)});
    utts.push_back(&batch[i]);
  }

  std::vector<Selection> selections;
  if (config.mode == TrainingMode::reinforcement) {
    if (selector == nullptr) throw ConfigError("selector", "reinforcement mode needs a selector");
    selections = selector->select({stage_index, pairs, utts});
    if (selections.size() != pairs.size()) throw ValidationError("selector returned the wrong number of selections");
  } else {
    selections.assign(pairs.size(), Selection{});
  }

  std::vector<FrameGradientRequest> requests;
  WerBreakdown c1_total, c2_total, selected_total;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    PairRecord rec;
    rec.utterance_id = pairs[i].utterance_id;
    rec.candidate1 = pairs[i].candidate1.words;
    rec.candidate2 = pairs[i].candidate2.words;
    rec.candidate2_rank = pairs[i].candidate2.rank;
    rec.candidate1_wer = word_error_rate(rec.candidate1, batch[i].reference);
    rec.candidate2_wer = word_error_rate(rec.candidate2, batch[i].reference);
    rec.reward = selections[i].reward;
    if (config.mode == TrainingMode::reinforcement) {
      rec.source = to_string(selections[i].source);
      auto built = build_rl_requests(pairs[i], selections[i], rl, batch[i].frames, [&](const WordSequence& w) {
        auto fa = force_align(result.model, graph, batch[i].frames, w);
        return fa ? std::optional<Alignment>(std::move(fa->alignment)) : std::nullopt;
      });
      rec.weights = built.weights;
      rec.dropped = built.dropped;
      if (built.dropped == DropReason::identical_candidates) ++report.dropped_identical;
      if (built.dropped == DropReason::alignment_failure) ++report.dropped_alignment;
      for (auto& r : built.requests) requests.push_back(std::move(r));
    } else {
      rec.source = "none";
      if (config.mode == TrainingMode::unsupervised_adaptation) {
        rec.weights = {1.0, 0.0};
        requests.push_back({&batch[i].frames, pairs[i].candidate1.alignment, 1.0, batch[i].id});
      } else {
        rec.weights = {0.0, 0.0};
      }
    }
    report.reward_one += rec.reward;
    c1_total += rec.candidate1_wer;
    c2_total += rec.candidate2_wer;
    selected_total += rec.selected_wer();
    result.pairs.push_back(std::move(rec));
  }
  report.pairs = static_cast<int>(pairs.size());
  WerBreakdown batch_total = c1_total;
  report.batch_wer = batch_total.wer();
  report.candidate1_wer = c1_total.wer();
  report.candidate2_wer = c2_total.wer();
  report.selected_wer = selected_total.wer();

  if (config.mode != TrainingMode::frozen) {
    if (config.labeled_mix && config.labeled_mix_weight > 0.0) {
      auto labeled = ctx.supervision->train_requests(config.labeled_mix_weight);
      for (auto& r : labeled) requests.push_back(std::move(r));
    }
    const auto cv = ctx.supervision->cv_requests();
    EpochOptions opts;
    opts.learning_rate = config.stage_learning_rates[static_cast<std::size_t>(stage_index)];
    opts.max_epochs = config.max_iterations_per_epoch;
    opts.halving_threshold = config.halving_threshold;
    opts.minibatch_frames = config.minibatch_frames;
    opts.clip_norm = config.clip_norm;
    std::mt19937_64 shuffle_rng(mix_seed(ctx.seed, kShuffleTag));
    const EpochLog log = run_epochs(result.model, requests, cv, opts, shuffle_rng);
    report.lr_trajectory = log.lr_trajectory;
    report.cv_history = log.cv_history;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::unique_ptr<Selector> default_selector(const ArmSpec& arm, std::uint64_t seed) {
  if (arm.selection_noise > 0.0) return std::make_unique<NoisySelector>(arm.selection_noise, seed);
  return std::make_unique<OracleSelector>();
}

std::vector<ArmResult> run_campaign(const CorpusSplit& corpus, const DecodeGraph& graph,
                                    const BaselineResult& baseline, const CampaignConfig& config,
                                    const SelectorFactory& make_selector) {
  config.stage.validate();
  const int K = static_cast<int>(corpus.large_batches.size());
  if (K > static_cast<int>(config.stage.stage_learning_rates.size()))
    throw ConfigError("stage.stage_learning_rates", "fewer rates than large batches");

  std::vector<ArmResult> results;
  for (const ArmSpec& arm : config.arms) {
    arm.rl.validate();
    ArmResult res;
    res.arm = arm;
    StageConfig stage_cfg = config.stage;
    stage_cfg.mode = arm.mode;
    std::unique_ptr<Selector> selector;
    if (arm.mode == TrainingMode::reinforcement) selector = make_selector(arm, mix_seed(config.seed, kSelectorTag));

    ModelArchive archive;
    archive.publish(baseline.model);
    AcousticModel model = baseline.model;
    res.models.push_back(model);

    StageContext ctx;
    ctx.graph = &graph;
    ctx.supervision = &baseline.supervision;
    ctx.eval_set = &corpus.eval_set;
    ctx.archive = &archive;
    for (int k = 0; k < K; ++k) {
      ctx.seed = mix_seed(config.seed, kStageTag + static_cast<std::uint64_t>(k));
      StageResult sr = run_stage(model, k, corpus.large_batches[static_cast<std::size_t>(k)], stage_cfg, arm.rl,
                                 selector.get(), ctx);
      res.reports.push_back(std::move(sr.report));
      res.pairs.push_back(std::move(sr.pairs));
      // previous_stage rivals at stage k+1 draw from RL0..RLk.
      if (k > 0) archive.publish(model);
      model = std::move(sr.model);
      res.models.push_back(model);
    }
    StageReport final_report;
    final_report.stage = K;
    final_report.eval_wer = evaluate_model(model, corpus.eval_set, graph).wer();
    res.reports.push_back(std::move(final_report));
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace hypsel
