#include "hypsel/corpus.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "hypsel/binary_io.hpp"
#include "hypsel/error.hpp"
#include "hypsel/json_io.hpp"

namespace hypsel {

namespace {

constexpr const char* kMagic = "HYPSEL-CORPUS";

Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  do {
    for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  } while (v.norm() == 0.0);
  return v.normalized();
}

Eigen::VectorXd dirichlet_log(std::mt19937_64& rng, int size, double concentration) {
  std::gamma_distribution<double> gamma(concentration, 1.0);
  Eigen::VectorXd p(size);
  for (int i = 0; i < size; ++i) p[i] = gamma(rng);
  // gamma draws with small shape can underflow to 0
  p = p.array().max(1e-300);
  p /= p.sum();
  p = p.array().max(1e-12);
  p /= p.sum();
  return p.array().log();
}

WordId sample_categorical(std::mt19937_64& rng, const Eigen::VectorXd& log_probs) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < log_probs.size(); ++i) {
    acc += std::exp(log_probs[i]);
    if (u < acc) return static_cast<WordId>(i);
  }
  return static_cast<WordId>(log_probs.size() - 1);
}

class UtteranceGenerator {
 public:
  UtteranceGenerator(const GenerationConfig& config, const TrueTaskModel& truth, std::mt19937_64& rng)
      : config_(config), truth_(truth), rng_(rng) {}

  Utterance operator()(std::string id, Partition partition, int batch_index,
                       const Eigen::VectorXd& shift) {
    const TaskTopology& topo = truth_.topology;
    std::uniform_int_distribution<int> length_dist(config_.utterance_length_range.min,
                                                   config_.utterance_length_range.max);
    std::geometric_distribution<int> extra_frames(1.0 - config_.self_loop_prob);
    std::bernoulli_distribution silence(config_.silence_prob);
    std::normal_distribution<double> noise(0.0, 1.0);

    Utterance utt;
    utt.id = std::move(id);
    utt.partition = partition;
    utt.batch_index = batch_index;

    const int length = length_dist(rng_);
    utt.reference.reserve(length);
    for (int i = 0; i < length; ++i) {
      const WordId w = i == 0 ? sample_categorical(rng_, truth_.initial_log_probs)
                              : sample_categorical(rng_, truth_.bigram_log_probs.row(utt.reference.back()).transpose());
      utt.reference.push_back(w);
    }

    Alignment states;
    for (int i = 0; i < length; ++i) {
      for (int j = 0; j < topo.states_per_word; ++j) {
        const int duration = 1 + extra_frames(rng_);
        states.insert(states.end(), duration, topo.state(utt.reference[i], j));
      }
      if (topo.has_silence && i + 1 < length && silence(rng_)) {
        const int duration = 1 + extra_frames(rng_);
        states.insert(states.end(), duration, topo.silence_state());
      }
    }

    const int dim = config_.feature_dim;
    utt.frames.resize(dim, static_cast<Eigen::Index>(states.size()));
    for (std::size_t t = 0; t < states.size(); ++t) {
      for (int d = 0; d < dim; ++d) {
        const double x = truth_.state_means(d, states[t]) + shift[d] +
                         config_.emission_noise_sigma * noise(rng_);
        utt.frames(d, static_cast<Eigen::Index>(t)) = static_cast<float>(x);
      }
    }
    return utt;
  }

 private:
  const GenerationConfig& config_;
  const TrueTaskModel& truth_;
  std::mt19937_64& rng_;
};

std::string make_id(const std::string& prefix, int index) {
  std::ostringstream os;
  os << prefix << '-';
  os.width(6);
  os.fill('0');
  os << index;
  return os.str();
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) binary::write<double>(out, m(i, j));
}

void read_matrix(std::istream& in, Eigen::MatrixXd& m, const char* what) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = binary::read<double>(in, what);
}

void write_utterance(std::ostream& out, const Utterance& utt) {
  binary::write_string(out, utt.id);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(utt.frames.cols()));
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(utt.reference.size()));
  for (WordId w : utt.reference) binary::write<std::int32_t>(out, w);
  for (Eigen::Index t = 0; t < utt.frames.cols(); ++t)
    for (Eigen::Index d = 0; d < utt.frames.rows(); ++d) binary::write<float>(out, utt.frames(d, t));
}

Utterance read_utterance(std::istream& in, int dim, int vocab, Partition partition, int batch_index) {
  Utterance utt;
  utt.partition = partition;
  utt.batch_index = batch_index;
  utt.id = binary::read_string(in, "utterance id", 4096);
  const auto frames = binary::read<std::uint32_t>(in, "frame count");
  const auto words = binary::read<std::uint32_t>(in, "reference length");
  if (frames == 0 || frames > (1u << 24) || words > (1u << 20))
    throw SchemaError("implausible record sizes for utterance " + utt.id);
  utt.reference.resize(words);
  for (auto& w : utt.reference) {
    w = binary::read<std::int32_t>(in, "reference word");
    if (w < 0 || w >= vocab) throw SchemaError("reference word out of vocabulary in " + utt.id);
  }
  utt.frames.resize(dim, frames);
  for (Eigen::Index t = 0; t < utt.frames.cols(); ++t)
    for (Eigen::Index d = 0; d < dim; ++d) utt.frames(d, t) = binary::read<float>(in, "frame value");
  return utt;
}

}  // namespace

const char* to_string(Partition p) {
  switch (p) {
    case Partition::labeled: return "labeled";
    case Partition::batch: return "batch";
    case Partition::eval: return "eval";
  }
  return "unknown";
}

void GenerationConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size", "must be >= 2");
  if (states_per_word < 1) throw ConfigError("states_per_word", "must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be >= 1");
  if (!(emission_noise_sigma >= 0.0)) throw ConfigError("emission_noise_sigma", "must be >= 0");
  if (!(self_loop_prob > 0.0 && self_loop_prob < 1.0))
    throw ConfigError("self_loop_prob", "must lie in (0, 1)");
  if (!(bigram_concentration > 0.0)) throw ConfigError("bigram_concentration", "must be > 0");
  if (utterance_length_range.min < 1)
    throw ConfigError("utterance_length_range", "min must be >= 1");
  if (utterance_length_range.max < utterance_length_range.min)
    throw ConfigError("utterance_length_range", "max must be >= min");
  if (!(batch_shift_magnitude >= 0.0)) throw ConfigError("batch_shift_magnitude", "must be >= 0");
  if (!(batch_shift_jitter >= 0.0)) throw ConfigError("batch_shift_jitter", "must be >= 0");
  if (!(silence_prob >= 0.0 && silence_prob < 1.0))
    throw ConfigError("silence_prob", "must lie in [0, 1)");
  if (!(mean_scale > 0.0)) throw ConfigError("mean_scale", "must be > 0");
  if (labeled_count < 2) throw ConfigError("labeled_count", "must be >= 2");
  if (batch_count < 0) throw ConfigError("batch_count", "must be >= 0");
  if (batch_count > 0 && batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (eval_count < 1) throw ConfigError("eval_count", "must be >= 1");
}

bool Utterance::operator==(const Utterance& other) const {
  return id == other.id && reference == other.reference && partition == other.partition &&
         batch_index == other.batch_index && frames.rows() == other.frames.rows() &&
         frames.cols() == other.frames.cols() && (frames.array() == other.frames.array()).all();
}

bool TrueTaskModel::operator==(const TrueTaskModel& other) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
  };
  if (!(topology == other.topology) || !same(state_means, other.state_means) ||
      !same(initial_log_probs, other.initial_log_probs) ||
      !same(bigram_log_probs, other.bigram_log_probs) || !same(eval_shift, other.eval_shift) ||
      batch_shifts.size() != other.batch_shifts.size())
    return false;
  for (std::size_t i = 0; i < batch_shifts.size(); ++i)
    if (!same(batch_shifts[i], other.batch_shifts[i])) return false;
  return true;
}

int min_frames(const TaskTopology& topo, const WordSequence& words) {
  return static_cast<int>(words.size()) * topo.states_per_word;
}

CorpusArchive generate_corpus(const GenerationConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  CorpusArchive archive;
  TrueTaskModel& truth = archive.truth;
  truth.topology = config.topology();
  const int num_states = truth.topology.num_states();
  const int dim = config.feature_dim;

  truth.state_means.resize(dim, num_states);
  for (int s = 0; s < num_states; ++s)
    for (int d = 0; d < dim; ++d) truth.state_means(d, s) = config.mean_scale * normal(rng);

  truth.initial_log_probs = dirichlet_log(rng, config.vocab_size, config.bigram_concentration);
  truth.bigram_log_probs.resize(config.vocab_size, config.vocab_size);
  for (int v = 0; v < config.vocab_size; ++v)
    truth.bigram_log_probs.row(v) =
        dirichlet_log(rng, config.vocab_size, config.bigram_concentration).transpose();

  // All mismatched partitions lean towards one target-domain direction;
  // batches deviate from it by `batch_shift_jitter`.
  const Eigen::VectorXd target = random_unit(rng, dim);
  truth.eval_shift = config.batch_shift_magnitude * target;
  for (int b = 0; b < config.batch_count; ++b) {
    const Eigen::VectorXd jitter = random_unit(rng, dim);
    const Eigen::VectorXd dir = (target + config.batch_shift_jitter * jitter).normalized();
    truth.batch_shifts.push_back(config.batch_shift_magnitude * dir);
  }

  CorpusSplit& split = archive.split;
  split.config = config;
  UtteranceGenerator gen(config, truth, rng);
  const Eigen::VectorXd no_shift = Eigen::VectorXd::Zero(dim);

  for (int i = 0; i < config.labeled_count; ++i)
    split.labeled.push_back(gen(make_id("lab", i), Partition::labeled, -1, no_shift));
  for (int b = 0; b < config.batch_count; ++b) {
    auto& batch = split.large_batches.emplace_back();
    for (int i = 0; i < config.batch_size; ++i)
      batch.push_back(gen(make_id("b" + std::to_string(b + 1), i), Partition::batch, b,
                          truth.batch_shifts[b]));
  }
  for (int i = 0; i < config.eval_count; ++i)
    split.eval_set.push_back(gen(make_id("eval", i), Partition::eval, -1, truth.eval_shift));
  return archive;
}

void save_corpus(const CorpusArchive& archive, const std::filesystem::path& path) {
  const CorpusSplit& split = archive.split;
  const TrueTaskModel& truth = archive.truth;

  nlohmann::json header;
  header["format"] = "hypsel-corpus";
  header["schema_version"] = kCorpusSchemaVersion;
  header["config"] = split.config;
  nlohmann::json partitions = nlohmann::json::array();
  partitions.push_back({{"name", "labeled"}, {"count", split.labeled.size()}});
  for (std::size_t b = 0; b < split.large_batches.size(); ++b)
    partitions.push_back({{"name", "batch"}, {"index", b}, {"count", split.large_batches[b].size()}});
  partitions.push_back({{"name", "eval"}, {"count", split.eval_set.size()}});
  header["partitions"] = partitions;
  header["truth"] = {{"vocab_size", truth.topology.vocab_size},
                     {"states_per_word", truth.topology.states_per_word},
                     {"has_silence", truth.topology.has_silence},
                     {"feature_dim", truth.state_means.rows()},
                     {"batch_shifts", truth.batch_shifts.size()}};
  const std::string header_text = header.dump(2);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kMagic << '\n' << header_text.size() << '\n' << header_text << '\n';

  write_matrix(out, truth.state_means);
  write_matrix(out, truth.initial_log_probs);
  write_matrix(out, truth.bigram_log_probs);
  for (const auto& s : truth.batch_shifts) write_matrix(out, s);
  write_matrix(out, truth.eval_shift);

  for (const auto& u : split.labeled) write_utterance(out, u);
  for (const auto& batch : split.large_batches)
    for (const auto& u : batch) write_utterance(out, u);
  for (const auto& u : split.eval_set) write_utterance(out, u);

  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

CorpusArchive load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  std::string magic;
  if (!std::getline(in, magic) || magic != kMagic)
    throw SchemaError(path.string() + " is not a corpus archive");
  std::string length_line;
  if (!std::getline(in, length_line)) throw SchemaError("truncated corpus header");
  std::size_t header_len = 0;
  try {
    header_len = std::stoul(length_line);
  } catch (const std::exception&) {
    throw SchemaError("malformed corpus header length");
  }
  if (header_len > (1u << 24)) throw SchemaError("implausible corpus header length");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::size_t>(in.gcount()) != header_len || in.get() != '\n')
    throw SchemaError("truncated corpus header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("corpus header is not valid JSON: ") + e.what());
  }

  CorpusArchive archive;
  try {
    const int version = header.at("schema_version").get<int>();
    if (version != kCorpusSchemaVersion) throw VersionError("corpus", version, kCorpusSchemaVersion);

    archive.split.config = header.at("config").get<GenerationConfig>();
    const auto& th = header.at("truth");
    TrueTaskModel& truth = archive.truth;
    truth.topology.vocab_size = th.at("vocab_size").get<int>();
    truth.topology.states_per_word = th.at("states_per_word").get<int>();
    truth.topology.has_silence = th.at("has_silence").get<bool>();
    const int dim = th.at("feature_dim").get<int>();
    const auto shifts = th.at("batch_shifts").get<std::size_t>();
    const int vocab = truth.topology.vocab_size;
    if (vocab < 1 || dim < 1 || truth.topology.states_per_word < 1 || shifts > 4096)
      throw SchemaError("implausible truth dimensions");

    truth.state_means.resize(dim, truth.topology.num_states());
    read_matrix(in, truth.state_means, "state means");
    truth.initial_log_probs.resize(vocab);
    {
      Eigen::MatrixXd tmp(vocab, 1);
      read_matrix(in, tmp, "initial log probs");
      truth.initial_log_probs = tmp.col(0);
    }
    truth.bigram_log_probs.resize(vocab, vocab);
    read_matrix(in, truth.bigram_log_probs, "bigram log probs");
    for (std::size_t b = 0; b < shifts; ++b) {
      Eigen::MatrixXd tmp(dim, 1);
      read_matrix(in, tmp, "batch shift");
      truth.batch_shifts.push_back(tmp.col(0));
    }
    {
      Eigen::MatrixXd tmp(dim, 1);
      read_matrix(in, tmp, "eval shift");
      truth.eval_shift = tmp.col(0);
    }

    for (const auto& part : header.at("partitions")) {
      const std::string name = part.at("name").get<std::string>();
      const auto count = part.at("count").get<std::size_t>();
      if (name == "labeled") {
        for (std::size_t i = 0; i < count; ++i)
          archive.split.labeled.push_back(read_utterance(in, dim, vocab, Partition::labeled, -1));
      } else if (name == "batch") {
        const int index = part.at("index").get<int>();
        if (index != static_cast<int>(archive.split.large_batches.size()))
          throw SchemaError("batch partitions out of order");
        auto& batch = archive.split.large_batches.emplace_back();
        for (std::size_t i = 0; i < count; ++i)
          batch.push_back(read_utterance(in, dim, vocab, Partition::batch, index));
      } else if (name == "eval") {
        for (std::size_t i = 0; i < count; ++i)
          archive.split.eval_set.push_back(read_utterance(in, dim, vocab, Partition::eval, -1));
      } else {
        throw SchemaError("unknown partition '" + name + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("corpus header is missing fields: ") + e.what());
  }
  if (in.peek() != std::char_traits<char>::eof()) throw SchemaError("trailing bytes after corpus records");
  return archive;
}

}  // namespace hypsel
