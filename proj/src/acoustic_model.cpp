#include "hypsel/acoustic_model.hpp"

#include <fstream>
#include <limits>

#include "json.hpp"

#include "hypsel/binary_io.hpp"

namespace hypsel {

namespace {
constexpr const char* kModelMagic = "HYPSEL-MODEL";

nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"feature_dim", a.feature_dim},     {"splice", a.splice},
          {"hidden_sizes", a.hidden_sizes},   {"num_states", a.num_states},
          {"init_scale", a.init_scale},       {"prior_floor", a.prior_floor},
          {"per_frame_normalization", a.per_frame_normalization}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.feature_dim = j.at("feature_dim").get<int>();
  a.splice = j.at("splice").get<int>();
  a.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  a.num_states = j.at("num_states").get<int>();
  a.init_scale = j.at("init_scale").get<double>();
  a.prior_floor = j.at("prior_floor").get<double>();
  a.per_frame_normalization = j.at("per_frame_normalization").get<bool>();
  return a;
}
}  // namespace

void ArchConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("arch.feature_dim", "must be >= 1");
  if (splice < 0) throw ConfigError("arch.splice", "must be >= 0");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("arch.hidden_sizes", "layer sizes must be >= 1");
  if (num_states < 1) throw ConfigError("arch.num_states", "must be >= 1");
  if (!(init_scale >= 0.0)) throw ConfigError("arch.init_scale", "must be >= 0");
  if (!(prior_floor > 0.0) || prior_floor * num_states > 1.0)
    throw ConfigError("arch.prior_floor", "must be > 0 and floor * num_states <= 1");
}

AcousticModel init_model(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  AcousticModel model;
  model.arch = arch;
  std::vector<int> sizes{arch.input_dim()};
  sizes.insert(sizes.end(), arch.hidden_sizes.begin(), arch.hidden_sizes.end());
  sizes.push_back(arch.num_states);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int fan_in = sizes[i];
    const double bound = arch.init_scale * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer<double> layer;
    layer.weight.resize(sizes[i + 1], fan_in);
    for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = bound > 0 ? dist(rng) : 0.0;
    layer.bias = Eigen::VectorXd::Zero(sizes[i + 1]);
    model.params.layers.push_back(std::move(layer));
  }
  model.state_priors = Eigen::VectorXd::Constant(arch.num_states, 1.0 / arch.num_states);
  return model;
}

void validate_request(const FrameGradientRequest& request, int num_states) {
  if (request.frames == nullptr) throw ValidationError("request for '" + request.utterance_id + "' has no frames");
  if (static_cast<Eigen::Index>(request.labels.size()) != request.frames->cols())
    throw ValidationError("utterance '" + request.utterance_id + "': " + std::to_string(request.labels.size()) +
                          " labels for " + std::to_string(request.frames->cols()) + " frames");
  for (std::size_t t = 0; t < request.labels.size(); ++t) {
    if (request.labels[t] < 0 || request.labels[t] >= num_states)
      throw ValidationError("utterance '" + request.utterance_id + "', frame " + std::to_string(t) +
                            ": state label " + std::to_string(request.labels[t]) + " out of range [0, " +
                            std::to_string(num_states) + ")");
  }
  if (!std::isfinite(request.weight))
    throw ValidationError("utterance '" + request.utterance_id + "': non-finite weight");
}

double cross_entropy(const AcousticModel& model, std::span<const FrameGradientRequest> requests) {
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& req : requests) {
    validate_request(req, model.arch.num_states);
    const Eigen::MatrixXd lp = log_posteriors(model, *req.frames);
    for (std::size_t t = 0; t < req.labels.size(); ++t) total -= lp(static_cast<Eigen::Index>(t), req.labels[t]);
    frames += req.labels.size();
  }
  if (frames == 0) throw ValidationError("cross_entropy over an empty request set");
  return total / static_cast<double>(frames);
}

double apply_sgd_step(AcousticModel& model, const Gradient& gradient, double learning_rate, double clip_norm) {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("learning rate must be a finite positive number");
  if (!gradient.all_finite()) throw NumericError("non-finite gradient; update refused");
  const double norm = std::sqrt(gradient.squared_norm());
  double scale = 1.0;
  if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;
  model.params.add_scaled(gradient, learning_rate * scale);
  return norm * scale;
}

AcousticModel sgd_step(const AcousticModel& model, const Gradient& gradient, double learning_rate, double clip_norm) {
  AcousticModel updated = model;
  apply_sgd_step(updated, gradient, learning_rate, clip_norm);
  return updated;
}

Eigen::VectorXd priors_from_counts(const Eigen::VectorXd& counts, double floor) {
  const auto n = counts.size();
  if (n == 0) throw ValidationError("no states to estimate priors for");
  if ((counts.array() < 0).any() || !counts.allFinite()) throw ValidationError("state counts must be finite and >= 0");
  if (!(floor >= 0.0) || floor * static_cast<double>(n) > 1.0) throw ValidationError("prior floor out of range");
  const double total = counts.sum();
  if (!(total > 0.0)) throw ValidationError("cannot estimate priors from an empty alignment set");

  std::vector<bool> floored(static_cast<std::size_t>(n), false);
  Eigen::VectorXd priors(n);
  // Water-filling: repeat until no unfloored state drops below the floor.
  for (;;) {
    double free_mass = 1.0;
    double free_count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (floored[static_cast<std::size_t>(i)]) free_mass -= floor;
      else free_count += counts[i];
    }
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (floored[static_cast<std::size_t>(i)]) {
        priors[i] = floor;
        continue;
      }
      priors[i] = free_count > 0.0 ? free_mass * counts[i] / free_count : 0.0;
      if (priors[i] < floor) {
        floored[static_cast<std::size_t>(i)] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return priors;
}

Eigen::VectorXd estimate_priors(std::span<const Alignment> alignments, int num_states, double floor) {
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(num_states);
  for (const auto& a : alignments)
    for (StateId s : a) {
      if (s < 0 || s >= num_states) throw ValidationError("alignment state out of range");
      counts[s] += 1.0;
    }
  if (counts.sum() == 0.0) throw ValidationError("cannot estimate priors from an empty alignment set");
  return priors_from_counts(counts, floor);
}

void save_model(const AcousticModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kModelMagic << '\n';
  binary::write<std::uint32_t>(out, kModelSchemaVersion);
  binary::write_string(out, arch_to_json(model.arch).dump());
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.layers.size()));
  for (const auto& l : model.params.layers) {
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows()));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) binary::write<double>(out, l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) binary::write<double>(out, l.bias[i]);
  }
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.state_priors.size()));
  for (Eigen::Index i = 0; i < model.state_priors.size(); ++i) binary::write<double>(out, model.state_priors[i]);
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

AcousticModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != kModelMagic) throw SchemaError(path.string() + " is not a model file");
  const auto version = binary::read<std::uint32_t>(in, "model schema version");
  if (version != kModelSchemaVersion) throw VersionError("model", static_cast<int>(version), kModelSchemaVersion);
  AcousticModel model;
  try {
    model.arch = arch_from_json(nlohmann::json::parse(binary::read_string(in, "arch description")));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad arch description: ") + e.what());
  }
  model.arch.validate();
  const auto layers = binary::read<std::uint32_t>(in, "layer count");
  if (layers != model.arch.hidden_sizes.size() + 1) throw SchemaError("layer count does not match arch");
  for (std::uint32_t k = 0; k < layers; ++k) {
    const auto rows = binary::read<std::uint32_t>(in, "layer rows");
    const auto cols = binary::read<std::uint32_t>(in, "layer cols");
    if (rows > (1u << 16) || cols > (1u << 16)) throw SchemaError("implausible layer size");
    DenseLayer<double> l;
    l.weight.resize(rows, cols);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = binary::read<double>(in, "weight");
    l.bias.resize(rows);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = binary::read<double>(in, "bias");
    model.params.layers.push_back(std::move(l));
  }
  const auto n = binary::read<std::uint32_t>(in, "prior count");
  if (static_cast<int>(n) != model.arch.num_states) throw SchemaError("prior count does not match arch");
  model.state_priors.resize(n);
  for (Eigen::Index i = 0; i < model.state_priors.size(); ++i)
    model.state_priors[i] = binary::read<double>(in, "prior");
  return model;
}

}  // namespace hypsel
