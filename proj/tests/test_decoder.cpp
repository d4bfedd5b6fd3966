#include "doctest.h"

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "hypsel/decoder.hpp"
#include "hypsel/error.hpp"
#include "oracles.hpp"

using namespace hypsel;

TEST_CASE("single-word vocabulary decodes to that word with a monotone alignment") {
  std::mt19937_64 rng(1);
  auto g = fixtures::random_graph(1, 3, false, rng);
  const auto a = fixtures::random_acoustic(7, 3, rng);
  const auto h = viterbi_decode(a, g);
  CHECK(h.words == WordSequence{0});
  CHECK(h.alignment.front() == 0);
  CHECK(h.alignment.back() == 2);
  for (std::size_t t = 1; t < h.alignment.size(); ++t) CHECK(h.alignment[t] >= h.alignment[t - 1]);
}

TEST_CASE("too few frames is a decode error") {
  std::mt19937_64 rng(2);
  auto g = fixtures::random_graph(3, 3, false, rng);
  CHECK_THROWS_AS(viterbi_decode(fixtures::random_acoustic(2, 9, rng), g), DecodeError);
  CHECK_THROWS_AS(nbest_decode(fixtures::random_acoustic(4, 9, rng), g, 0), ValidationError);
  CHECK_THROWS_AS(viterbi_decode(fixtures::random_acoustic(4, 7, rng), g), ShapeError);
}

TEST_CASE("vocab 3, one state per word, T=4 matches enumeration") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = fixtures::random_graph(3, 1, false, rng);
    const auto a = fixtures::random_acoustic(4, 3, rng);
    const auto ranked = oracles::brute_force_rank(a, g);
    const auto h = viterbi_decode(a, g);
    CHECK(std::abs(h.score - ranked.front().score) <= 1e-9);
    CHECK(h.words == ranked.front().words);
  }
}

TEST_CASE("n-best equals brute-force top distinct sequences") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> vocab(1, 4), spw(1, 2), frames(1, 6), coin(0, 1), depth(1, 5);
    const int V = vocab(rng), P = spw(rng);
    const bool sil = coin(rng) == 1;
    auto g = fixtures::random_graph(V, P, sil, rng);
    g.lm_weight = trial % 3 == 0 ? 0.0 : 1.0;
    g.word_insertion_penalty = trial % 4 == 0 ? -0.5 : 0.0;
    const int T = std::max(P, frames(rng));
    const auto a = fixtures::random_acoustic(T, g.topology.num_states(), rng);
    const auto ranked = oracles::brute_force_rank(a, g);
    // depth 1 matters: silence must keep the best path per preceding word
    const int n = depth(rng);
    const auto nbest = nbest_decode(a, g, n);
    INFO("trial " << trial << " n=" << n << " V=" << V << " P=" << P << " sil=" << sil << " T=" << T);
    REQUIRE(nbest.size() == std::min<std::size_t>(static_cast<std::size_t>(n), ranked.size()));
    for (std::size_t r = 0; r < nbest.size(); ++r) {
      CHECK(nbest[r].rank == static_cast<int>(r) + 1);
      CHECK(std::abs(nbest[r].score - ranked[r].score) <= 1e-9);
      // equal-score sequences (lm weight 0, one state per word) may come in any order
      bool tied = false;
      for (const auto& s : ranked) tied = tied || (s.words == nbest[r].words && std::abs(s.score - ranked[r].score) <= 1e-9);
      CHECK(tied);
      CHECK(is_legal_alignment(g.topology, nbest[r].words, nbest[r].alignment));
    }
    CHECK(nbest.front() == viterbi_decode(a, g));
  }
}

TEST_CASE("n-best has distinct sequences and non-increasing scores") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto g = fixtures::random_graph(8, 2, true, rng);
    const auto a = fixtures::random_acoustic(20, g.topology.num_states(), rng);
    const auto nbest = nbest_decode(a, g, 15);
    CHECK(nbest.size() == 15);
    for (std::size_t i = 0; i < nbest.size(); ++i) {
      CHECK(is_legal_alignment(g.topology, nbest[i].words, nbest[i].alignment));
      CHECK(std::isfinite(nbest[i].score));
      if (i > 0) CHECK(nbest[i].score <= nbest[i - 1].score);
      for (std::size_t j = 0; j < i; ++j) CHECK(nbest[i].words != nbest[j].words);
    }
  }
}

TEST_CASE("hypothesis scores decompose into acoustic and language terms") {
  std::mt19937_64 rng(6);
  auto g = fixtures::random_graph(5, 2, true, rng);
  g.word_insertion_penalty = 0.3;
  const auto a = fixtures::random_acoustic(15, g.topology.num_states(), rng);
  for (const auto& h : nbest_decode(a, g, 5)) {
    double acoustic = 0.0;
    for (std::size_t t = 0; t < h.alignment.size(); ++t) acoustic += a(static_cast<int>(t), h.alignment[t]);
    CHECK(h.score == doctest::Approx(acoustic + g.language_score(h.words)).epsilon(1e-12));
  }
}

TEST_CASE("forced alignment") {
  std::mt19937_64 rng(7);

  SUBCASE("only legal path") {
    auto g = fixtures::random_graph(2, 3, false, rng);
    const auto fa = force_align(fixtures::random_acoustic(3, 6, rng), g, WordSequence{1});
    REQUIRE(fa);
    CHECK(fa->alignment == Alignment{3, 4, 5});
  }
  SUBCASE("too short is a signaled failure") {
    auto g = fixtures::random_graph(2, 3, false, rng);
    CHECK(!force_align(fixtures::random_acoustic(5, 6, rng), g, WordSequence{0, 1}));
  }
  SUBCASE("bad input") {
    auto g = fixtures::random_graph(2, 1, false, rng);
    const auto a = fixtures::random_acoustic(3, 2, rng);
    CHECK_THROWS_AS(force_align(a, g, WordSequence{}), ValidationError);
    CHECK_THROWS_AS(force_align(a, g, WordSequence{5}), ValidationError);
  }
  SUBCASE("matches exhaustive alignment") {
    for (int trial = 0; trial < 100; ++trial) {
      std::uniform_int_distribution<int> len(1, 3), frames(1, 6), coin(0, 1), spw(1, 2);
      const int P = spw(rng);
      auto g = fixtures::random_graph(3, P, coin(rng) == 1, rng);
      WordSequence words(static_cast<std::size_t>(len(rng)));
      std::uniform_int_distribution<int> w(0, 2);
      for (auto& x : words) x = w(rng);
      const auto a = fixtures::random_acoustic(frames(rng), g.topology.num_states(), rng);
      const auto brute = oracles::brute_force_align(a, g.topology, words);
      const auto fa = force_align(a, g, words);
      INFO("trial " << trial);
      REQUIRE(fa.has_value() == brute.found);
      if (!fa) continue;
      CHECK(std::abs(fa->acoustic_score - brute.acoustic) <= 1e-9);
      CHECK(fa->alignment == brute.alignment);
      CHECK(fa->score == doctest::Approx(fa->acoustic_score + g.language_score(words)));
    }
  }
  SUBCASE("re-aligning a decoded hypothesis reproduces it") {
    auto g = fixtures::random_graph(6, 2, true, rng);
    for (int trial = 0; trial < 20; ++trial) {
      const auto a = fixtures::random_acoustic(18, g.topology.num_states(), rng);
      const auto h = viterbi_decode(a, g);
      const auto fa = force_align(a, g, h.words);
      REQUIRE(fa);
      CHECK(fa->alignment == h.alignment);
      CHECK(fa->score == doctest::Approx(h.score).epsilon(1e-12));
    }
  }
}

TEST_CASE("alignment legality") {
  const TaskTopology topo{3, 2, true};  // silence state 6
  CHECK(is_legal_alignment(topo, {0, 1}, {0, 1, 1, 2, 3}));
  CHECK(is_legal_alignment(topo, {0, 1}, {0, 1, 6, 6, 2, 3}));
  CHECK(!is_legal_alignment(topo, {0, 1}, {0, 2, 3}));
  CHECK(!is_legal_alignment(topo, {0, 1}, {0, 1, 2}));
  CHECK(!is_legal_alignment(topo, {0}, {6, 0, 1}));
  CHECK(!is_legal_alignment(topo, {0}, {1, 0}));
  const TaskTopology single{2, 1, false};
  CHECK(is_legal_alignment(single, {1, 1}, {1, 1, 1}));
  CHECK(!is_legal_alignment(single, {1, 1}, {1}));
}

TEST_CASE("per-frame constant shifts do not change the best sequence") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> shift(0.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = fixtures::random_graph(5, 2, true, rng);
    auto a = fixtures::random_acoustic(14, g.topology.num_states(), rng);
    const auto before = viterbi_decode(a, g).words;
    for (int t = 0; t < a.rows(); ++t) a.row(t).array() += shift(rng);
    CHECK(viterbi_decode(a, g).words == before);
  }
}

TEST_CASE("frames at the generator's state means decode to the reference") {
  GenerationConfig c;
  c.vocab_size = 20;
  c.feature_dim = 12;
  c.emission_noise_sigma = 0.05;
  c.batch_shift_magnitude = 0.0;
  c.labeled_count = 50;
  c.batch_count = 0;
  c.eval_count = 1;
  const auto corpus = generate_corpus(c);
  const auto g = make_decode_graph(corpus.truth);
  const int S = g.topology.num_states();
  int matches = 0;
  for (const auto& u : corpus.split.labeled) {
    // Gaussian log-likelihoods with uniform priors act as scaled likelihoods.
    Eigen::MatrixXd a(u.num_frames(), S);
    for (int t = 0; t < u.num_frames(); ++t)
      for (int s = 0; s < S; ++s)
        a(t, s) = -(u.frames.col(t).cast<double>() - corpus.truth.state_means.col(s)).squaredNorm() /
                  (2.0 * c.emission_noise_sigma * c.emission_noise_sigma);
    matches += viterbi_decode(a, g).words == u.reference;
  }
  CHECK(matches >= 48);
}

TEST_CASE("decode graph validation") {
  std::mt19937_64 rng(9);
  auto g = fixtures::random_graph(3, 1, false, rng);
  CHECK_NOTHROW(g.validate());
  g.bigram_log_probs(1, 1) += 0.5;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = fixtures::random_graph(3, 1, false, rng);
  g.lm_weight = -1.0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}
