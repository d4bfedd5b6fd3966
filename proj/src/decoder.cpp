#include "hypsel/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <unordered_map>

namespace hypsel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Interned word sequences: equal sequences share one node id.
class HistoryTrie {
 public:
  static constexpr std::int32_t kRoot = 0;

  HistoryTrie() { nodes_.push_back({-1, -1}); }

  std::int32_t extend(std::int32_t parent, WordId word) {
    const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(parent)) << 32) |
                              static_cast<std::uint32_t>(word);
    auto [it, inserted] = index_.try_emplace(key, static_cast<std::int32_t>(nodes_.size()));
    if (inserted) nodes_.push_back({parent, word});
    return it->second;
  }

  WordId last(std::int32_t node) const { return nodes_[static_cast<std::size_t>(node)].word; }

  WordSequence words(std::int32_t node) const {
    WordSequence out;
    while (node != kRoot) {
      out.push_back(nodes_[static_cast<std::size_t>(node)].word);
      node = nodes_[static_cast<std::size_t>(node)].parent;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::int32_t parent;
    WordId word;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::int32_t> index_;
};

struct Token {
  double score;
  std::int32_t history;
  StateId back_state;
  std::int32_t back_index;
};

/// A token at the previous frame, addressed by (state, index).
struct Entry {
  double score;
  std::int32_t history;
  StateId state;
  std::int32_t index;
};

bool better(double sa, StateId a_state, std::int32_t a_index, double sb, StateId b_state, std::int32_t b_index) {
  if (sa != sb) return sa > sb;
  if (a_state != b_state) return a_state < b_state;
  return a_index < b_index;
}

bool better(const Entry& a, const Entry& b) { return better(a.score, a.state, a.index, b.score, b.state, b.index); }

/// Tokens of one frame, grouped by state and sorted best first within a state.
struct Frame {
  std::vector<Token> tokens;
  std::vector<std::int32_t> begin;  // S + 1 offsets
  // Silence tokens are grouped by the word they follow: V + 1 offsets
  // relative to begin[silence].
  std::vector<std::int32_t> sil_begin;

  std::int32_t size(StateId s) const { return begin[s + 1] - begin[s]; }
  const Token& at(StateId s, std::int32_t i) const { return tokens[static_cast<std::size_t>(begin[s] + i)]; }
};

/// Merge workspace. Sources are sorted runs of entries; a candidate is
/// entry.score + offset with its history extended by `extend_word` when >= 0.
class Merger {
 public:
  struct Source {
    const Entry* begin;
    const Entry* end;
    double offset;
    WordId extend_word;
  };

  void clear() { sources_.clear(); }
  void add(const Entry* begin, const Entry* end, double offset = 0.0, WordId extend_word = -1) {
    if (begin != end) sources_.push_back({begin, end, offset, extend_word});
  }

  /// Best `k` candidates with pairwise distinct resulting histories.
  template <typename Emit>
  void select(int k, HistoryTrie& trie, Emit&& emit) {
    kept_.clear();
    heap_.clear();
    for (std::size_t i = 0; i < sources_.size(); ++i) heap_.push_back(head(i));
    auto worse = [](const Entry& a, const Entry& b) { return better(b, a); };
    std::make_heap(heap_.begin(), heap_.end(), worse);
    while (!heap_.empty() && static_cast<int>(kept_.size()) < k) {
      std::pop_heap(heap_.begin(), heap_.end(), worse);
      const Entry cand = heap_.back();
      heap_.pop_back();
      // The source id rides in `history` of the heap entry; recover it.
      Source& src = sources_[static_cast<std::size_t>(cand.history)];
      const Entry& e = *src.begin;
      const std::int32_t history = src.extend_word >= 0 ? trie.extend(e.history, src.extend_word) : e.history;
      const bool duplicate = std::find(kept_.begin(), kept_.end(), history) != kept_.end();
      if (!duplicate) {
        kept_.push_back(history);
        emit(Token{cand.score, history, e.state, e.index});
      }
      ++src.begin;
      if (src.begin != src.end) {
        heap_.push_back(head(static_cast<std::size_t>(cand.history)));
        std::push_heap(heap_.begin(), heap_.end(), worse);
      }
    }
  }

 private:
  Entry head(std::size_t i) const {
    const Source& s = sources_[i];
    return {s.begin->score + s.offset, static_cast<std::int32_t>(i), s.begin->state, s.begin->index};
  }

  std::vector<Source> sources_;
  std::vector<Entry> heap_;
  std::vector<std::int32_t> kept_;
};

void check_acoustic(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph) {
  if (acoustic.cols() != graph.topology.num_states())
    throw ShapeError("acoustic score matrix has " + std::to_string(acoustic.cols()) + " states, graph has " +
                     std::to_string(graph.topology.num_states()));
  if (acoustic.rows() < 1) throw DecodeError("utterance has no frames");
}

}  // namespace

void DecodeGraph::validate() const {
  const int V = topology.vocab_size;
  if (V < 1 || topology.states_per_word < 1) throw ConfigError("graph.topology", "empty topology");
  if (initial_log_probs.size() != V || bigram_log_probs.rows() != V || bigram_log_probs.cols() != V)
    throw ConfigError("graph.lm", "LM tables do not match the vocabulary size");
  if (std::abs(initial_log_probs.array().exp().sum() - 1.0) > 1e-6)
    throw ConfigError("graph.lm", "initial distribution does not sum to 1");
  for (int v = 0; v < V; ++v)
    if (std::abs(bigram_log_probs.row(v).array().exp().sum() - 1.0) > 1e-6)
      throw ConfigError("graph.lm", "bigram row " + std::to_string(v) + " does not sum to 1");
  if (!(lm_weight >= 0.0)) throw ConfigError("graph.lm_weight", "must be >= 0");
  if (!std::isfinite(word_insertion_penalty)) throw ConfigError("graph.word_insertion_penalty", "must be finite");
}

double DecodeGraph::lm_log_prob(const WordSequence& words) const {
  if (words.empty()) return 0.0;
  double lp = initial_log_probs[words[0]];
  for (std::size_t i = 1; i < words.size(); ++i) lp += bigram_log_probs(words[i - 1], words[i]);
  return lp;
}

double DecodeGraph::language_score(const WordSequence& words) const {
  return lm_weight * lm_log_prob(words) + word_insertion_penalty * static_cast<double>(words.size());
}

DecodeGraph make_decode_graph(const TrueTaskModel& truth, double lm_weight, double word_insertion_penalty) {
  DecodeGraph g;
  g.topology = truth.topology;
  g.initial_log_probs = truth.initial_log_probs;
  g.bigram_log_probs = truth.bigram_log_probs;
  g.lm_weight = lm_weight;
  g.word_insertion_penalty = word_insertion_penalty;
  g.validate();
  return g;
}

Eigen::MatrixXd scaled_log_likelihoods(const AcousticModel& model, const FeatureMatrix& frames) {
  Eigen::MatrixXd lp = log_posteriors(model, frames);
  const Eigen::RowVectorXd log_prior = model.state_priors.array().log().matrix().transpose();
  lp.rowwise() -= log_prior;
  return lp;
}

std::vector<Hypothesis> nbest_decode(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph, int n) {
  if (n < 1) throw ValidationError("n-best size must be >= 1");
  check_acoustic(acoustic, graph);
  const TaskTopology& topo = graph.topology;
  const int V = topo.vocab_size;
  const int S = topo.num_states();
  const int P = topo.states_per_word;
  const auto T = static_cast<int>(acoustic.rows());
  const double lm = graph.lm_weight;
  const double pen = graph.word_insertion_penalty;

  HistoryTrie trie;
  std::vector<Frame> lattice(static_cast<std::size_t>(T));
  {
    Frame& f0 = lattice[0];
    f0.begin.assign(static_cast<std::size_t>(S) + 1, 0);
    for (StateId s = 0; s < S; ++s) {
      f0.begin[s] = static_cast<std::int32_t>(f0.tokens.size());
      if (!topo.is_silence(s) && topo.position_of(s) == 0) {
        const WordId w = topo.word_of(s);
        f0.tokens.push_back(
            {lm * graph.initial_log_probs[w] + pen + acoustic(0, s), trie.extend(HistoryTrie::kRoot, w), -1, -1});
      }
    }
    f0.begin[S] = static_cast<std::int32_t>(f0.tokens.size());
    f0.sil_begin.assign(static_cast<std::size_t>(V) + 1, 0);
  }

  // entries[begin[s] .. begin[s+1]) mirror the previous frame's tokens of s
  // with their (state, index) addresses.
  std::vector<Entry> entries;
  std::vector<std::int32_t> entry_begin(static_cast<std::size_t>(S) + 1);
  std::vector<Entry> exits;  // per-word exit groups, concatenated
  std::vector<std::int32_t> exit_begin(static_cast<std::size_t>(V) + 1);
  std::vector<Entry> candidates;
  Merger merger;

  auto load_entries = [&](const Frame& prev) {
    entries.clear();
    for (StateId s = 0; s < S; ++s) {
      entry_begin[s] = static_cast<std::int32_t>(entries.size());
      for (std::int32_t i = 0; i < prev.size(s); ++i) {
        const Token& tk = prev.at(s, i);
        entries.push_back({tk.score, tk.history, s, i});
      }
    }
    entry_begin[S] = static_cast<std::int32_t>(entries.size());
  };
  auto first = [&](StateId s) { return entries.data() + entry_begin[s]; };
  auto last = [&](StateId s) { return entries.data() + entry_begin[s + 1]; };

  for (int t = 1; t < T; ++t) {
    const Frame& prev = lattice[static_cast<std::size_t>(t - 1)];
    load_entries(prev);
    const StateId sil = topo.has_silence ? topo.silence_state() : -1;
    auto sil_first = [&](WordId v) { return first(sil) + prev.sil_begin[v]; };
    auto sil_last = [&](WordId v) { return first(sil) + prev.sil_begin[v + 1]; };

    // Tokens able to start a new word: word-final states, plus silence
    // following the same word.
    exits.clear();
    for (WordId v = 0; v < V; ++v) {
      exit_begin[v] = static_cast<std::int32_t>(exits.size());
      merger.clear();
      merger.add(first(topo.last_state(v)), last(topo.last_state(v)));
      if (topo.has_silence) merger.add(sil_first(v), sil_last(v));
      merger.select(n, trie, [&](const Token& tk) {
        exits.push_back({tk.score, tk.history, tk.back_state, tk.back_index});
      });
    }
    exit_begin[V] = static_cast<std::int32_t>(exits.size());

    Frame& cur = lattice[static_cast<std::size_t>(t)];
    cur.begin.assign(static_cast<std::size_t>(S) + 1, 0);
    cur.sil_begin.assign(static_cast<std::size_t>(V) + 1, 0);
    auto push = [&](StateId s) {
      return [&cur, &acoustic, t, s](const Token& tk) {
        cur.tokens.push_back({tk.score + acoustic(t, s), tk.history, tk.back_state, tk.back_index});
      };
    };
    for (StateId s = 0; s < S; ++s) {
      cur.begin[s] = static_cast<std::int32_t>(cur.tokens.size());
      if (topo.is_silence(s)) {
        // What follows silence depends on the preceding word, so each word
        // keeps its own n best.
        for (WordId v = 0; v < V; ++v) {
          cur.sil_begin[v] = static_cast<std::int32_t>(cur.tokens.size()) - cur.begin[s];
          merger.clear();
          merger.add(sil_first(v), sil_last(v));
          merger.add(first(topo.last_state(v)), last(topo.last_state(v)));
          merger.select(n, trie, push(s));
        }
        cur.sil_begin[V] = static_cast<std::int32_t>(cur.tokens.size()) - cur.begin[s];
      } else if (topo.position_of(s) > 0) {
        merger.clear();
        merger.add(first(s), last(s));
        merger.add(first(s - 1), last(s - 1));
        merger.select(n, trie, push(s));
      } else {
        // Word entry. Heads of different exit groups carry distinct
        // histories, so nothing worse than the n-th best head can win.
        const WordId w = topo.word_of(s);
        candidates.clear();
        for (WordId v = 0; v < V; ++v) {
          if (exit_begin[v] == exit_begin[v + 1]) continue;
          const double off = lm * graph.bigram_log_probs(v, w) + pen;
          const Entry& h = exits[static_cast<std::size_t>(exit_begin[v])];
          candidates.push_back({h.score + off, v, h.state, h.index});
        }
        merger.clear();
        merger.add(first(s), last(s));
        double threshold = -std::numeric_limits<double>::infinity();
        if (candidates.size() >= static_cast<std::size_t>(n)) {
          std::nth_element(candidates.begin(), candidates.begin() + (n - 1), candidates.end(),
                           [](const Entry& a, const Entry& b) { return better(a, b); });
          threshold = candidates[static_cast<std::size_t>(n - 1)].score;
        }
        for (WordId v = 0; v < V; ++v) {
          const Entry* b = exits.data() + exit_begin[v];
          const Entry* e = exits.data() + exit_begin[v + 1];
          const double off = lm * graph.bigram_log_probs(v, w) + pen;
          const Entry* stop = b;
          while (stop != e && stop->score + off >= threshold) ++stop;
          merger.add(b, stop, off, w);
        }
        merger.select(n, trie, push(s));
      }
    }
    cur.begin[S] = static_cast<std::int32_t>(cur.tokens.size());
  }

  // Complete paths end in a word-final state.
  load_entries(lattice[static_cast<std::size_t>(T - 1)]);
  merger.clear();
  for (WordId v = 0; v < V; ++v) merger.add(first(topo.last_state(v)), last(topo.last_state(v)));
  std::vector<Token> finals;
  merger.select(n, trie, [&](const Token& tk) { finals.push_back(tk); });
  if (finals.empty())
    throw DecodeError("no complete path: " + std::to_string(T) + " frames are fewer than a word's " +
                      std::to_string(P) + " states");

  std::vector<Hypothesis> out;
  for (std::size_t r = 0; r < finals.size(); ++r) {
    Hypothesis h;
    h.words = trie.words(finals[r].history);
    h.score = finals[r].score;
    h.rank = static_cast<int>(r) + 1;
    h.alignment.resize(static_cast<std::size_t>(T));
    StateId s = finals[r].back_state;
    std::int32_t i = finals[r].back_index;
    for (int t = T - 1; t >= 0; --t) {
      h.alignment[static_cast<std::size_t>(t)] = s;
      const Token& tk = lattice[static_cast<std::size_t>(t)].at(s, i);
      s = tk.back_state;
      i = tk.back_index;
    }
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<Hypothesis> nbest_decode(const AcousticModel& model, const DecodeGraph& graph,
                                     const FeatureMatrix& frames, int n) {
  return nbest_decode(scaled_log_likelihoods(model, frames), graph, n);
}

Hypothesis viterbi_decode(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph) {
  return nbest_decode(acoustic, graph, 1).front();
}

Hypothesis viterbi_decode(const AcousticModel& model, const DecodeGraph& graph, const FeatureMatrix& frames) {
  return viterbi_decode(scaled_log_likelihoods(model, frames), graph);
}

std::optional<ForcedAlignment> force_align(const Eigen::MatrixXd& acoustic, const DecodeGraph& graph,
                                           const WordSequence& words) {
  check_acoustic(acoustic, graph);
  const TaskTopology& topo = graph.topology;
  if (words.empty()) throw ValidationError("cannot force-align an empty word sequence");
  for (WordId w : words)
    if (w < 0 || w >= topo.vocab_size) throw ValidationError("word " + std::to_string(w) + " not in vocabulary");

  // Chain of nodes; silence nodes sit between words and may be skipped.
  std::vector<StateId> nodes;
  std::vector<bool> skippable;
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (int j = 0; j < topo.states_per_word; ++j) {
      nodes.push_back(topo.state(words[i], j));
      skippable.push_back(false);
    }
    if (topo.has_silence && i + 1 < words.size()) {
      nodes.push_back(topo.silence_state());
      skippable.push_back(true);
    }
  }
  const auto N = static_cast<int>(nodes.size());
  const auto T = static_cast<int>(acoustic.rows());
  if (T < min_frames(topo, words)) return std::nullopt;

  Eigen::MatrixXd score = Eigen::MatrixXd::Constant(T, N, kNegInf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Constant(T, N, -1);
  score(0, 0) = acoustic(0, nodes[0]);
  for (int t = 1; t < T; ++t) {
    for (int k = 0; k < N; ++k) {
      double best = score(t - 1, k);
      int arg = k;
      auto consider = [&](int from) {
        if (from >= 0 && score(t - 1, from) > best) {
          best = score(t - 1, from);
          arg = from;
        }
      };
      consider(k - 1);
      if (k >= 2 && skippable[static_cast<std::size_t>(k - 1)]) consider(k - 2);
      if (best == kNegInf) continue;
      score(t, k) = best + acoustic(t, nodes[static_cast<std::size_t>(k)]);
      back(t, k) = arg;
    }
  }
  if (score(T - 1, N - 1) == kNegInf) return std::nullopt;

  ForcedAlignment fa;
  fa.alignment.resize(static_cast<std::size_t>(T));
  int k = N - 1;
  for (int t = T - 1; t >= 0; --t) {
    fa.alignment[static_cast<std::size_t>(t)] = nodes[static_cast<std::size_t>(k)];
    if (t > 0) k = back(t, k);
  }
  fa.acoustic_score = score(T - 1, N - 1);
  fa.score = fa.acoustic_score + graph.language_score(words);
  return fa;
}

std::optional<ForcedAlignment> force_align(const AcousticModel& model, const DecodeGraph& graph,
                                           const FeatureMatrix& frames, const WordSequence& words) {
  return force_align(scaled_log_likelihoods(model, frames), graph, words);
}

bool is_legal_alignment(const TaskTopology& topo, const WordSequence& words, const Alignment& alignment) {
  if (words.empty() || alignment.empty()) return false;
  std::vector<StateId> nodes;
  std::vector<bool> skippable;
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (int j = 0; j < topo.states_per_word; ++j) {
      nodes.push_back(topo.state(words[i], j));
      skippable.push_back(false);
    }
    if (topo.has_silence && i + 1 < words.size()) {
      nodes.push_back(topo.silence_state());
      skippable.push_back(true);
    }
  }
  // Set of chain positions consistent with the prefix seen so far.
  const std::size_t N = nodes.size();
  std::vector<bool> reach(N, false), next(N, false);
  reach[0] = alignment[0] == nodes[0];
  for (std::size_t t = 1; t < alignment.size(); ++t) {
    std::fill(next.begin(), next.end(), false);
    for (std::size_t k = 0; k < N; ++k) {
      if (!reach[k]) continue;
      auto visit = [&](std::size_t to) {
        if (to < N && nodes[to] == alignment[t]) next[to] = true;
      };
      visit(k);
      visit(k + 1);
      if (k + 1 < N && skippable[k + 1]) visit(k + 2);
    }
    reach.swap(next);
  }
  return reach[N - 1];
}

}  // namespace hypsel
