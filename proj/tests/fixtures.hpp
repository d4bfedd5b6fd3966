#pragma once

#include <cmath>
#include <random>

#include "hypsel/acoustic_model.hpp"
#include "hypsel/corpus.hpp"
#include "hypsel/decoder.hpp"
#include "hypsel/experiment.hpp"
#include "hypsel/reinforce.hpp"

namespace fixtures {

inline hypsel::GenerationConfig tiny_corpus_config(std::uint64_t seed = 1) {
  hypsel::GenerationConfig c;
  c.vocab_size = 6;
  c.states_per_word = 2;
  c.feature_dim = 6;
  c.utterance_length_range = {1, 3};
  c.labeled_count = 40;
  c.batch_count = 2;
  c.batch_size = 30;
  c.eval_count = 30;
  c.seed = seed;
  return c;
}

inline hypsel::ArchConfig tiny_arch(int feature_dim, int num_states) {
  hypsel::ArchConfig a;
  a.feature_dim = feature_dim;
  a.splice = 1;
  a.hidden_sizes = {12};
  a.num_states = num_states;
  return a;
}

/// Small experiment that runs end to end in a couple of seconds.
inline hypsel::ExperimentConfig tiny_experiment() {
  hypsel::ExperimentConfig e;
  e.corpus = tiny_corpus_config();
  e.arch.splice = 1;
  e.arch.hidden_sizes = {24};
  e.baseline.max_epochs = 6;
  e.baseline.realign_rounds = 1;
  e.stage.max_iterations_per_epoch = 2;
  e.rl.rival_rank = 3;
  return e;
}

/// Graph over `vocab` words with random LM rows (uniform when `uniform`).
inline hypsel::DecodeGraph random_graph(int vocab, int states_per_word, bool silence, std::mt19937_64& rng,
                                        bool uniform = false) {
  hypsel::DecodeGraph g;
  g.topology = hypsel::TaskTopology{vocab, states_per_word, silence};
  std::gamma_distribution<double> gamma(1.0, 1.0);
  auto row = [&](int n) {
    Eigen::VectorXd p(n);
    for (int i = 0; i < n; ++i) p[i] = uniform ? 1.0 : gamma(rng) + 0.05;
    return Eigen::VectorXd((p / p.sum()).array().log());
  };
  g.initial_log_probs = row(vocab);
  g.bigram_log_probs.resize(vocab, vocab);
  for (int v = 0; v < vocab; ++v) g.bigram_log_probs.row(v) = row(vocab).transpose();
  return g;
}

inline Eigen::MatrixXd random_acoustic(int T, int S, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  Eigen::MatrixXd a(T, S);
  for (int t = 0; t < T; ++t)
    for (int s = 0; s < S; ++s) a(t, s) = n(rng);
  return a;
}

inline hypsel::FeatureMatrix random_frames(int dim, int T, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  hypsel::FeatureMatrix f(dim, T);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < dim; ++d) f(d, t) = n(rng);
  return f;
}

inline std::vector<hypsel::FrameGradientRequest> random_requests(std::mt19937_64& rng,
                                                                 const std::vector<hypsel::FeatureMatrix>& frames,
                                                                 int num_states) {
  std::uniform_int_distribution<int> label(0, num_states - 1);
  std::uniform_real_distribution<double> weight(-1.5, 1.5);
  std::vector<hypsel::FrameGradientRequest> out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    hypsel::FrameGradientRequest r;
    r.frames = &frames[i];
    r.labels.resize(static_cast<std::size_t>(frames[i].cols()));
    for (auto& l : r.labels) l = label(rng);
    r.weight = weight(rng);
    r.utterance_id = "u" + std::to_string(i);
    out.push_back(std::move(r));
  }
  return out;
}

inline hypsel::EnumerablePolicy random_policy(std::mt19937_64& rng, int actions, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  hypsel::EnumerablePolicy p;
  p.theta.resize(dim);
  p.features.resize(actions, dim);
  p.rewards.resize(actions);
  for (int d = 0; d < dim; ++d) p.theta[d] = n(rng);
  for (int a = 0; a < actions; ++a) {
    for (int d = 0; d < dim; ++d) p.features(a, d) = n(rng);
    p.rewards[a] = u(rng);
  }
  return p;
}

}  // namespace fixtures
