#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace hypsel {

using WordId = std::int32_t;
using StateId = std::int32_t;

using WordSequence = std::vector<WordId>;
/// One HMM state id per frame.
using Alignment = std::vector<StateId>;

/// Features of one utterance, one column per frame. Stored as float because
/// that is the on-disk precision.
using FeatureMatrix = Eigen::MatrixXf;

/// State layout shared by generator, acoustic model and decoder: word `w`
/// owns states [w*states_per_word, (w+1)*states_per_word); the optional
/// silence unit is a single state placed after all word states.
struct TaskTopology {
  int vocab_size = 0;
  int states_per_word = 0;
  bool has_silence = false;

  int num_states() const { return vocab_size * states_per_word + (has_silence ? 1 : 0); }
  StateId state(WordId word, int position) const { return word * states_per_word + position; }
  StateId first_state(WordId word) const { return state(word, 0); }
  StateId last_state(WordId word) const { return state(word, states_per_word - 1); }
  StateId silence_state() const { return vocab_size * states_per_word; }
  bool is_silence(StateId s) const { return has_silence && s == silence_state(); }
  WordId word_of(StateId s) const { return s / states_per_word; }
  int position_of(StateId s) const { return s % states_per_word; }

  bool operator==(const TaskTopology&) const = default;
};

}  // namespace hypsel
