#include "hypsel/json_io.hpp"

#include <initializer_list>
#include <string>

#include "hypsel/error.hpp"

namespace hypsel {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
  if (!j.is_object()) throw ConfigError(section, "expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError(std::string(section) + "." + item.key(), "unknown key");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const char* section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key, e.what());
  }
}

}  // namespace

void to_json(json& j, const IntRange& r) { j = json::array({r.min, r.max}); }

void from_json(const json& j, IntRange& r) {
  if (!j.is_array() || j.size() != 2) throw ConfigError("utterance_length_range", "expected [min, max]");
  r.min = j[0].get<int>();
  r.max = j[1].get<int>();
}

void to_json(json& j, const GenerationConfig& c) {
  j = json{{"vocab_size", c.vocab_size},
           {"states_per_word", c.states_per_word},
           {"feature_dim", c.feature_dim},
           {"emission_noise_sigma", c.emission_noise_sigma},
           {"self_loop_prob", c.self_loop_prob},
           {"bigram_concentration", c.bigram_concentration},
           {"utterance_length_range", c.utterance_length_range},
           {"batch_shift_magnitude", c.batch_shift_magnitude},
           {"batch_shift_jitter", c.batch_shift_jitter},
           {"silence_prob", c.silence_prob},
           {"mean_scale", c.mean_scale},
           {"labeled_count", c.labeled_count},
           {"batch_count", c.batch_count},
           {"batch_size", c.batch_size},
           {"eval_count", c.eval_count},
           {"seed", c.seed}};
}

void from_json(const json& j, GenerationConfig& c) {
  constexpr const char* s = "corpus";
  check_keys(j,
             {"vocab_size", "states_per_word", "feature_dim", "emission_noise_sigma", "self_loop_prob",
              "bigram_concentration", "utterance_length_range", "batch_shift_magnitude", "batch_shift_jitter",
              "silence_prob", "mean_scale", "labeled_count", "batch_count", "batch_size", "eval_count", "seed"},
             s);
  read(j, "vocab_size", c.vocab_size, s);
  read(j, "states_per_word", c.states_per_word, s);
  read(j, "feature_dim", c.feature_dim, s);
  read(j, "emission_noise_sigma", c.emission_noise_sigma, s);
  read(j, "self_loop_prob", c.self_loop_prob, s);
  read(j, "bigram_concentration", c.bigram_concentration, s);
  read(j, "utterance_length_range", c.utterance_length_range, s);
  read(j, "batch_shift_magnitude", c.batch_shift_magnitude, s);
  read(j, "batch_shift_jitter", c.batch_shift_jitter, s);
  read(j, "silence_prob", c.silence_prob, s);
  read(j, "mean_scale", c.mean_scale, s);
  read(j, "labeled_count", c.labeled_count, s);
  read(j, "batch_count", c.batch_count, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "eval_count", c.eval_count, s);
  read(j, "seed", c.seed, s);
}

void to_json(json& j, const ArchConfig& c) {
  j = json{{"feature_dim", c.feature_dim},   {"splice", c.splice},
           {"hidden_sizes", c.hidden_sizes}, {"num_states", c.num_states},
           {"init_scale", c.init_scale},     {"prior_floor", c.prior_floor},
           {"per_frame_normalization", c.per_frame_normalization}};
}

void from_json(const json& j, ArchConfig& c) {
  constexpr const char* s = "arch";
  check_keys(j, {"feature_dim", "splice", "hidden_sizes", "num_states", "init_scale", "prior_floor",
                 "per_frame_normalization"},
             s);
  read(j, "feature_dim", c.feature_dim, s);
  read(j, "splice", c.splice, s);
  read(j, "hidden_sizes", c.hidden_sizes, s);
  read(j, "num_states", c.num_states, s);
  read(j, "init_scale", c.init_scale, s);
  read(j, "prior_floor", c.prior_floor, s);
  read(j, "per_frame_normalization", c.per_frame_normalization, s);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},     {"max_epochs", c.max_epochs},
           {"minibatch_frames", c.minibatch_frames}, {"clip_norm", c.clip_norm},
           {"cv_fraction", c.cv_fraction},         {"halving_threshold", c.halving_threshold},
           {"realign_rounds", c.realign_rounds}};
}

void from_json(const json& j, TrainConfig& c) {
  constexpr const char* s = "baseline";
  check_keys(j, {"learning_rate", "max_epochs", "minibatch_frames", "clip_norm", "cv_fraction",
                 "halving_threshold", "realign_rounds"},
             s);
  read(j, "learning_rate", c.learning_rate, s);
  read(j, "max_epochs", c.max_epochs, s);
  read(j, "minibatch_frames", c.minibatch_frames, s);
  read(j, "clip_norm", c.clip_norm, s);
  read(j, "cv_fraction", c.cv_fraction, s);
  read(j, "halving_threshold", c.halving_threshold, s);
  read(j, "realign_rounds", c.realign_rounds, s);
}

void to_json(json& j, const StageConfig& c) {
  j = json{{"stage_learning_rates", c.stage_learning_rates},
           {"max_iterations_per_epoch", c.max_iterations_per_epoch},
           {"cv_fraction", c.cv_fraction},
           {"halving_threshold", c.halving_threshold},
           {"labeled_mix", c.labeled_mix},
           {"labeled_mix_weight", c.labeled_mix_weight},
           {"mode", to_string(c.mode)},
           {"minibatch_frames", c.minibatch_frames},
           {"clip_norm", c.clip_norm}};
}

void from_json(const json& j, StageConfig& c) {
  constexpr const char* s = "stage";
  check_keys(j, {"stage_learning_rates", "max_iterations_per_epoch", "cv_fraction", "halving_threshold",
                 "labeled_mix", "labeled_mix_weight", "mode", "minibatch_frames", "clip_norm"},
             s);
  read(j, "stage_learning_rates", c.stage_learning_rates, s);
  read(j, "max_iterations_per_epoch", c.max_iterations_per_epoch, s);
  read(j, "cv_fraction", c.cv_fraction, s);
  read(j, "halving_threshold", c.halving_threshold, s);
  read(j, "labeled_mix", c.labeled_mix, s);
  read(j, "labeled_mix_weight", c.labeled_mix_weight, s);
  if (j.contains("mode")) c.mode = training_mode_from_string(j.at("mode").get<std::string>());
  read(j, "minibatch_frames", c.minibatch_frames, s);
  read(j, "clip_norm", c.clip_norm, s);
}

void to_json(json& j, const RlConfig& c) {
  j = json{{"alpha", c.alpha},
           {"rival_strategy", to_string(c.rival_strategy)},
           {"rival_rank", c.rival_rank},
           {"skip_identical_candidates", c.skip_identical_candidates}};
}

void from_json(const json& j, RlConfig& c) {
  constexpr const char* s = "rl";
  check_keys(j, {"alpha", "rival_strategy", "rival_rank", "skip_identical_candidates"}, s);
  read(j, "alpha", c.alpha, s);
  if (j.contains("rival_strategy")) {
    const auto v = j.at("rival_strategy").get<std::string>();
    if (v == "nth_best") c.rival_strategy = RivalStrategy::nth_best;
    else if (v == "previous_stage") c.rival_strategy = RivalStrategy::previous_stage;
    else throw ConfigError("rl.rival_strategy", "expected nth_best or previous_stage");
  }
  read(j, "rival_rank", c.rival_rank, s);
  read(j, "skip_identical_candidates", c.skip_identical_candidates, s);
}

void to_json(json& j, const DecodeOptions& c) {
  j = json{{"lm_weight", c.lm_weight}, {"word_insertion_penalty", c.word_insertion_penalty}};
}

void from_json(const json& j, DecodeOptions& c) {
  constexpr const char* s = "decode";
  check_keys(j, {"lm_weight", "word_insertion_penalty"}, s);
  read(j, "lm_weight", c.lm_weight, s);
  read(j, "word_insertion_penalty", c.word_insertion_penalty, s);
}

void to_json(json& j, const SelectorSpec& c) { j = json{{"kind", c.kind}, {"p", c.p}}; }

void from_json(const json& j, SelectorSpec& c) {
  constexpr const char* s = "selector";
  check_keys(j, {"kind", "p"}, s);
  read(j, "kind", c.kind, s);
  read(j, "p", c.p, s);
}

void to_json(json& j, const SweepSpec& c) {
  j = json{{"error_rates", c.error_rates}, {"trials", c.trials}, {"seed", c.seed}, {"rival_rank", c.rival_rank}};
}

void from_json(const json& j, SweepSpec& c) {
  constexpr const char* s = "sweep";
  check_keys(j, {"error_rates", "trials", "seed", "rival_rank"}, s);
  read(j, "error_rates", c.error_rates, s);
  read(j, "trials", c.trials, s);
  read(j, "seed", c.seed, s);
  read(j, "rival_rank", c.rival_rank, s);
}

void to_json(json& j, const ArmSpec& c) {
  j = json{{"name", c.name}, {"mode", to_string(c.mode)}, {"rl", c.rl}, {"p", c.selection_noise}};
}

void from_json(const json& j, ArmSpec& c) {
  constexpr const char* s = "arms[]";
  check_keys(j, {"name", "mode", "rl", "p"}, s);
  read(j, "name", c.name, s);
  if (j.contains("mode")) c.mode = training_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("rl")) c.rl = j.at("rl").get<RlConfig>();
  read(j, "p", c.selection_noise, s);
  if (c.name.empty()) throw ConfigError("arms[].name", "must not be empty");
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"seed", c.seed},         {"corpus", c.corpus}, {"arch", c.arch},         {"baseline", c.baseline},
           {"stage", c.stage},       {"rl", c.rl},         {"decode", c.decode},     {"selector", c.selector},
           {"sweep", c.sweep},       {"arms", c.arms}};
}

void from_json(const json& j, ExperimentConfig& c) {
  check_keys(j, {"seed", "corpus", "arch", "baseline", "stage", "rl", "decode", "selector", "sweep", "arms"},
             "experiment");
  read(j, "seed", c.seed, "experiment");
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<GenerationConfig>();
  if (j.contains("arch")) c.arch = j.at("arch").get<ArchConfig>();
  if (j.contains("baseline")) c.baseline = j.at("baseline").get<TrainConfig>();
  if (j.contains("stage")) c.stage = j.at("stage").get<StageConfig>();
  if (j.contains("rl")) c.rl = j.at("rl").get<RlConfig>();
  if (j.contains("decode")) c.decode = j.at("decode").get<DecodeOptions>();
  if (j.contains("selector")) c.selector = j.at("selector").get<SelectorSpec>();
  if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepSpec>();
  if (j.contains("arms")) c.arms = j.at("arms").get<std::vector<ArmSpec>>();
}

}  // namespace hypsel
