#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hypsel/error.hpp"
#include "hypsel/types.hpp"

namespace hypsel {

/// Shape of the state-posterior network: spliced input, sigmoid hidden
/// layers, softmax output over all HMM states.
struct ArchConfig {
  int feature_dim = 20;
  int splice = 5;  // context half-width in frames
  std::vector<int> hidden_sizes{128, 128};
  int num_states = 0;
  /// Weights ~ U(-a, a) with variance init_scale^2 / fan_in.
  double init_scale = 1.0;
  double prior_floor = 1e-8;
  /// Divide each request's gradient by its frame count.
  bool per_frame_normalization = false;

  int input_dim() const { return feature_dim * (2 * splice + 1); }
  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  Mat<Scalar> weight;  // out x in
  Vec<Scalar> bias;
};

/// The parameter set theta; also used as the gradient type since a gradient
/// has exactly the shape of the parameters.
template <typename Scalar>
struct NetworkParameters {
  std::vector<DenseLayer<Scalar>> layers;

  static NetworkParameters zeros_like(const NetworkParameters& p) {
    NetworkParameters z;
    for (const auto& l : p.layers)
      z.layers.push_back({Mat<Scalar>::Zero(l.weight.rows(), l.weight.cols()),
                          Vec<Scalar>::Zero(l.bias.size())});
    return z;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Flat view in layer order: weight (column-major) then bias.
  Scalar& coeff(std::size_t index) {
    for (auto& l : layers) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (index < nw) return l.weight.data()[index];
      index -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (index < nb) return l.bias.data()[index];
      index -= nb;
    }
    throw std::out_of_range("parameter index");
  }
  Scalar coeff(std::size_t index) const { return const_cast<NetworkParameters*>(this)->coeff(index); }

  Scalar squared_norm() const {
    Scalar s = 0;
    for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  NetworkParameters& add_scaled(const NetworkParameters& other, Scalar factor) {
    if (other.layers.size() != layers.size()) throw ShapeError("parameter layer count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (other.layers[i].weight.rows() != layers[i].weight.rows() ||
          other.layers[i].weight.cols() != layers[i].weight.cols())
        throw ShapeError("parameter layer shape mismatch");
      layers[i].weight += factor * other.layers[i].weight;
      layers[i].bias += factor * other.layers[i].bias;
    }
    return *this;
  }

  NetworkParameters& operator+=(const NetworkParameters& other) { return add_scaled(other, Scalar(1)); }
  NetworkParameters& operator*=(Scalar factor) {
    for (auto& l : layers) {
      l.weight *= factor;
      l.bias *= factor;
    }
    return *this;
  }

  bool operator==(const NetworkParameters& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& a = layers[i];
      const auto& b = other.layers[i];
      if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
          a.bias.size() != b.bias.size() || !(a.weight.array() == b.weight.array()).all() ||
          !(a.bias.array() == b.bias.array()).all())
        return false;
    }
    return true;
  }
};

template <typename Scalar>
struct BasicAcousticModel {
  ArchConfig arch;
  NetworkParameters<Scalar> params;
  Vec<Scalar> state_priors;  // floored, sums to 1

  bool operator==(const BasicAcousticModel& other) const {
    return arch == other.arch && params == other.params &&
           state_priors.size() == other.state_priors.size() &&
           (state_priors.array() == other.state_priors.array()).all();
  }
};

using AcousticModel = BasicAcousticModel<double>;
using Gradient = NetworkParameters<double>;

/// One utterance's contribution to the weighted cross-entropy gradient.
struct FrameGradientRequest {
  /// Non-owning; the features must outlive the request.
  const FeatureMatrix* frames = nullptr;
  Alignment labels;
  double weight = 1.0;
  std::string utterance_id;
};

AcousticModel init_model(const ArchConfig& arch, std::uint64_t seed);

/// Context window stacking with edge replication: column t holds frames
/// t-splice .. t+splice (clamped) concatenated.
template <typename Scalar>
Mat<Scalar> splice_frames(const FeatureMatrix& frames, int splice) {
  const Eigen::Index dim = frames.rows();
  const Eigen::Index T = frames.cols();
  const Eigen::Index width = 2 * splice + 1;
  Mat<Scalar> out(dim * width, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; k < width; ++k) {
      const Eigen::Index src = std::clamp<Eigen::Index>(t + k - splice, 0, T - 1);
      out.block(k * dim, t, dim, 1) = frames.col(src).template cast<Scalar>();
    }
  }
  return out;
}

namespace detail {

template <typename Scalar>
Mat<Scalar> sigmoid(const Mat<Scalar>& z) {
  return (Scalar(1) + (-z.array()).exp()).inverse().matrix();
}

/// Column-wise log-softmax.
template <typename Scalar>
Mat<Scalar> log_softmax(const Mat<Scalar>& logits) {
  Mat<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const Scalar m = logits.col(t).maxCoeff();
    const Scalar lse = m + std::log((logits.col(t).array() - m).exp().sum());
    out.col(t) = logits.col(t).array() - lse;
  }
  return out;
}

/// Forward pass over spliced input (input_dim x N). Fills hidden activations
/// (one matrix per hidden layer) and returns output logits (S x N).
template <typename Scalar>
Mat<Scalar> forward(const NetworkParameters<Scalar>& params, const Mat<Scalar>& input,
                    std::vector<Mat<Scalar>>* activations) {
  Mat<Scalar> a = input;
  const std::size_t L = params.layers.size();
  for (std::size_t i = 0; i + 1 < L; ++i) {
    const auto& layer = params.layers[i];
    Mat<Scalar> z = layer.weight * a;
    z.colwise() += layer.bias;
    a = sigmoid<Scalar>(z);
    if (activations) activations->push_back(a);
  }
  const auto& out = params.layers.back();
  Mat<Scalar> logits = out.weight * a;
  logits.colwise() += out.bias;
  return logits;
}

template <typename Scalar>
void check_input(const ArchConfig& arch, const FeatureMatrix& frames) {
  if (frames.rows() != arch.feature_dim)
    throw ShapeError("frame dimension " + std::to_string(frames.rows()) + " does not match model feature_dim " +
                     std::to_string(arch.feature_dim));
  if (frames.cols() < 1) throw ShapeError("utterance has no frames");
}

}  // namespace detail

/// Per-frame log posteriors, T x S.
template <typename Scalar>
Mat<Scalar> log_posteriors(const BasicAcousticModel<Scalar>& model, const FeatureMatrix& frames) {
  detail::check_input<Scalar>(model.arch, frames);
  const Mat<Scalar> logits =
      detail::forward<Scalar>(model.params, splice_frames<Scalar>(frames, model.arch.splice), nullptr);
  return detail::log_softmax<Scalar>(logits).transpose();
}

/// Per-frame state posteriors P(l_t | s_t), T x S; rows sum to 1.
template <typename Scalar>
Mat<Scalar> forward_posteriors(const BasicAcousticModel<Scalar>& model, const FeatureMatrix& frames) {
  return log_posteriors(model, frames).array().exp().matrix();
}

void validate_request(const FrameGradientRequest& request, int num_states);

/// Sum over requests of weight * sum_t log P(l_t | s_t).
template <typename Scalar>
Scalar weighted_log_likelihood(const BasicAcousticModel<Scalar>& model,
                               std::span<const FrameGradientRequest> requests) {
  Scalar total = 0;
  for (const auto& req : requests) {
    validate_request(req, model.arch.num_states);
    const Mat<Scalar> lp = log_posteriors(model, *req.frames);
    Scalar sum = 0;
    for (std::size_t t = 0; t < req.labels.size(); ++t) sum += lp(static_cast<Eigen::Index>(t), req.labels[t]);
    Scalar w = static_cast<Scalar>(req.weight);
    if (model.arch.per_frame_normalization) w /= static_cast<Scalar>(req.labels.size());
    total += w * sum;
  }
  return total;
}

/// Gradient (ascent orientation) of weighted_log_likelihood with respect to
/// the network parameters.
///
/// Requests are processed in the given order. Consecutive requests that point
/// at the same feature matrix are merged into one soft-target block so the
/// forward pass runs once per utterance; blocks are concatenated column-wise
/// and the whole set is back-propagated as one batch.
template <typename Scalar>
NetworkParameters<Scalar> weighted_ce_gradient(const BasicAcousticModel<Scalar>& model,
                                               std::span<const FrameGradientRequest> requests) {
  const int S = model.arch.num_states;
  struct Block {
    const FeatureMatrix* frames;
    Mat<Scalar> targets;  // S x T, weighted one-hot sums
    Vec<Scalar> total;    // per-frame sum of weights
  };
  std::vector<Block> blocks;
  Eigen::Index columns = 0;
  for (const auto& req : requests) {
    validate_request(req, S);
    detail::check_input<Scalar>(model.arch, *req.frames);
    const auto T = static_cast<Eigen::Index>(req.labels.size());
    if (blocks.empty() || blocks.back().frames != req.frames) {
      blocks.push_back({req.frames, Mat<Scalar>::Zero(S, T), Vec<Scalar>::Zero(T)});
      columns += T;
    }
    Scalar w = static_cast<Scalar>(req.weight);
    if (model.arch.per_frame_normalization) w /= static_cast<Scalar>(T);
    auto& block = blocks.back();
    for (Eigen::Index t = 0; t < T; ++t) {
      block.targets(req.labels[static_cast<std::size_t>(t)], t) += w;
      block.total[t] += w;
    }
  }

  auto grad = NetworkParameters<Scalar>::zeros_like(model.params);
  if (columns == 0) return grad;

  Mat<Scalar> input(model.arch.input_dim(), columns);
  Mat<Scalar> targets(S, columns);
  Vec<Scalar> total(columns);
  Eigen::Index offset = 0;
  for (const auto& b : blocks) {
    const Eigen::Index T = b.targets.cols();
    input.middleCols(offset, T) = splice_frames<Scalar>(*b.frames, model.arch.splice);
    targets.middleCols(offset, T) = b.targets;
    total.segment(offset, T) = b.total;
    offset += T;
  }

  std::vector<Mat<Scalar>> acts;
  const Mat<Scalar> logits = detail::forward(model.params, input, &acts);
  const Mat<Scalar> post = detail::log_softmax<Scalar>(logits).array().exp().matrix();

  // d/dz of sum_c target_c log softmax(z)_c = target - (sum target) * softmax
  Mat<Scalar> delta = targets - (post.array().rowwise() * total.transpose().array()).matrix();
  const std::size_t L = model.params.layers.size();
  for (std::size_t i = L; i-- > 0;) {
    const Mat<Scalar>& below = i == 0 ? input : acts[i - 1];
    grad.layers[i].weight.noalias() = delta * below.transpose();
    grad.layers[i].bias = delta.rowwise().sum();
    if (i > 0) {
      Mat<Scalar> back = model.params.layers[i].weight.transpose() * delta;
      delta = (back.array() * below.array() * (Scalar(1) - below.array())).matrix();
    }
  }
  return grad;
}

/// Mean negative log posterior of the labels over all frames (unweighted).
double cross_entropy(const AcousticModel& model, std::span<const FrameGradientRequest> requests);

/// theta <- theta + lr * clip(g). Refuses non-finite gradients (NumericError)
/// and leaves the model untouched in that case. clip_norm <= 0 disables
/// clipping. Returns the norm of the applied (post-clip) gradient.
double apply_sgd_step(AcousticModel& model, const Gradient& gradient, double learning_rate,
                      double clip_norm);
AcousticModel sgd_step(const AcousticModel& model, const Gradient& gradient, double learning_rate,
                       double clip_norm);

/// Floored, normalized state frequencies. States whose share falls below
/// `floor` get exactly `floor`; the rest share the remaining mass
/// proportionally to their counts.
Eigen::VectorXd priors_from_counts(const Eigen::VectorXd& counts, double floor);
Eigen::VectorXd estimate_priors(std::span<const Alignment> alignments, int num_states, double floor);

inline constexpr int kModelSchemaVersion = 1;

void save_model(const AcousticModel& model, const std::filesystem::path& path);
AcousticModel load_model(const std::filesystem::path& path);

}  // namespace hypsel
