#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "hypsel/acoustic_model.hpp"
#include "hypsel/error.hpp"
#include "oracles.hpp"

using namespace hypsel;

namespace {

AcousticModel zero_model(const ArchConfig& arch) {
  AcousticModel m = init_model(arch, 1);
  for (auto& l : m.params.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return m;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hypsel_am_" + name);
}

}  // namespace

TEST_CASE("init is deterministic in the seed") {
  const auto arch = fixtures::tiny_arch(3, 5);
  CHECK(init_model(arch, 7) == init_model(arch, 7));
  CHECK(!(init_model(arch, 7) == init_model(arch, 8)));
  const auto m = init_model(arch, 7);
  CHECK(m.state_priors.size() == 5);
  for (int s = 0; s < 5; ++s) CHECK(m.state_priors[s] == doctest::Approx(0.2));
}

TEST_CASE("doubling the fan-in halves the weight variance") {
  auto variance_of_output_layer = [](int hidden) {
    ArchConfig a;
    a.feature_dim = 4;
    a.splice = 0;
    a.hidden_sizes = {hidden};
    a.num_states = 100000 / hidden;
    const auto m = init_model(a, 3);
    const auto& w = m.params.layers.back().weight;
    return w.array().square().mean();
  };
  const double v400 = variance_of_output_layer(400);
  const double v800 = variance_of_output_layer(800);
  CHECK(v400 == doctest::Approx(1.0 / 400).epsilon(0.02));
  CHECK(v800 / v400 == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("posterior rows are distributions") {
  std::mt19937_64 rng(1);
  const auto arch = fixtures::tiny_arch(3, 7);
  const auto m = init_model(arch, 2);
  const auto frames = fixtures::random_frames(3, 9, rng);
  const Eigen::MatrixXd p = forward_posteriors(m, frames);
  CHECK(p.rows() == 9);
  CHECK(p.cols() == 7);
  for (int t = 0; t < 9; ++t) CHECK(std::abs(p.row(t).sum() - 1.0) < 1e-6);
  CHECK((p.array() > 0.0).all());
  CHECK((p.array() < 1.0).all());
}

TEST_CASE("zero-weight model gives uniform posteriors") {
  std::mt19937_64 rng(2);
  const auto m = zero_model(fixtures::tiny_arch(3, 4));
  const Eigen::MatrixXd p = forward_posteriors(m, fixtures::random_frames(3, 5, rng));
  CHECK((p.array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("forward pass matches a straight-line re-implementation") {
  std::mt19937_64 rng(3);
  ArchConfig arch = fixtures::tiny_arch(4, 6);
  arch.splice = 2;
  arch.hidden_sizes = {9, 5};
  const auto m = init_model(arch, 11);
  const auto frames = fixtures::random_frames(4, 6, rng);
  const Eigen::MatrixXd lp = log_posteriors(m, frames);
  for (int t : {0, 3, 5}) {
    const auto z = oracles::straight_line_logits(m, frames, t);
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double se = 0.0;
    for (double v : z) se += std::exp(v - mx);
    for (int s = 0; s < 6; ++s) CHECK(std::abs(lp(t, s) - (z[static_cast<std::size_t>(s)] - mx - std::log(se))) < 1e-10);
  }
}

TEST_CASE("dimension mismatch is a shape error") {
  std::mt19937_64 rng(4);
  const auto m = init_model(fixtures::tiny_arch(3, 4), 1);
  CHECK_THROWS_AS(forward_posteriors(m, fixtures::random_frames(5, 4, rng)), ShapeError);
}

TEST_CASE("zero weights give a zero gradient") {
  std::mt19937_64 rng(5);
  const auto m = init_model(fixtures::tiny_arch(3, 4), 1);
  std::vector<FeatureMatrix> frames{fixtures::random_frames(3, 5, rng)};
  auto reqs = fixtures::random_requests(rng, frames, 4);
  reqs[0].weight = 0.0;
  CHECK(weighted_ce_gradient<double>(m, reqs).squared_norm() == 0.0);
}

TEST_CASE("gradient is linear in the request weights") {
  std::mt19937_64 rng(6);
  const auto m = init_model(fixtures::tiny_arch(3, 4), 1);
  std::vector<FeatureMatrix> frames{fixtures::random_frames(3, 5, rng), fixtures::random_frames(3, 4, rng)};
  auto reqs = fixtures::random_requests(rng, frames, 4);

  auto plus = reqs, minus = reqs;
  plus[0].weight = 1.0;
  minus[0].weight = -1.0;
  auto g_plus = weighted_ce_gradient<double>(m, std::span(plus).first(1));
  auto g_minus = weighted_ce_gradient<double>(m, std::span(minus).first(1));
  g_plus += g_minus;
  CHECK(g_plus.squared_norm() == 0.0);

  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = coef(rng), b = coef(rng);
    auto mixed = reqs;
    mixed[0].weight = a;
    mixed[1].weight = b;
    auto unit = reqs;
    unit[0].weight = 1.0;
    unit[1].weight = 1.0;
    auto expected = weighted_ce_gradient<double>(m, std::span(unit).first(1));
    expected *= a;
    expected.add_scaled(weighted_ce_gradient<double>(m, std::span(unit).subspan(1, 1)), b);
    auto got = weighted_ce_gradient<double>(m, mixed);
    got.add_scaled(expected, -1.0);
    CHECK(std::sqrt(got.squared_norm()) <= 1e-9 * std::max(1.0, std::sqrt(expected.squared_norm())));
  }
}

TEST_CASE("gradient matches central finite differences") {
  std::mt19937_64 rng(7);
  SUBCASE("two states, three frames") {
    ArchConfig arch = fixtures::tiny_arch(2, 2);
    arch.hidden_sizes = {3};
    const auto m = init_model(arch, 5);
    std::vector<FeatureMatrix> frames{fixtures::random_frames(2, 3, rng)};
    const auto reqs = fixtures::random_requests(rng, frames, 2);
    CHECK(oracles::finite_difference_error(m, reqs, weighted_ce_gradient<double>(m, reqs)) <= 1e-4);
  }
  SUBCASE("random instances") {
    for (int i = 0; i < 20; ++i) {
      ArchConfig arch = fixtures::tiny_arch(2 + i % 3, 2 + i % 4);
      arch.splice = i % 2;
      arch.hidden_sizes = i % 3 == 0 ? std::vector<int>{4, 3} : std::vector<int>{5};
      arch.per_frame_normalization = i % 5 == 0;
      const auto m = init_model(arch, static_cast<std::uint64_t>(100 + i));
      // Two requests on the same frames exercise the merged soft-target path.
      std::vector<FeatureMatrix> frames{fixtures::random_frames(arch.feature_dim, 3 + i % 3, rng),
                                        fixtures::random_frames(arch.feature_dim, 4, rng)};
      auto reqs = fixtures::random_requests(rng, frames, arch.num_states);
      FrameGradientRequest again = reqs[0];
      std::uniform_int_distribution<int> label(0, arch.num_states - 1);
      for (auto& l : again.labels) l = label(rng);
      again.weight = -0.4;
      reqs.insert(reqs.begin() + 1, again);
      INFO("instance " << i);
      CHECK(oracles::finite_difference_error(m, reqs, weighted_ce_gradient<double>(m, reqs)) <= 1e-4);
    }
  }
}

TEST_CASE("invalid labels name the utterance and frame") {
  std::mt19937_64 rng(8);
  const auto m = init_model(fixtures::tiny_arch(3, 4), 1);
  std::vector<FeatureMatrix> frames{fixtures::random_frames(3, 5, rng)};
  auto reqs = fixtures::random_requests(rng, frames, 4);
  reqs[0].utterance_id = "utt-x";
  reqs[0].labels[2] = 9;
  try {
    weighted_ce_gradient<double>(m, reqs);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("utt-x") != std::string::npos);
    CHECK(msg.find("frame 2") != std::string::npos);
  }
  reqs[0].labels.pop_back();
  CHECK_THROWS_AS(weighted_ce_gradient<double>(m, reqs), ValidationError);
}

TEST_CASE("sgd step") {
  const auto arch = fixtures::tiny_arch(3, 4);
  const auto m = init_model(arch, 1);

  SUBCASE("zero gradient leaves the model unchanged") {
    CHECK(sgd_step(m, Gradient::zeros_like(m.params), 0.004, 5.0) == m);
  }
  SUBCASE("unit coordinate moves by the learning rate") {
    auto g = Gradient::zeros_like(m.params);
    g.coeff(3) = 1.0;
    const auto next = sgd_step(m, g, 0.004, 5.0);
    CHECK(next.params.coeff(3) - m.params.coeff(3) == doctest::Approx(0.004).epsilon(1e-12));
    CHECK(next.params.coeff(4) == m.params.coeff(4));
    CHECK(next.state_priors == m.state_priors);
  }
  SUBCASE("global norm clipping") {
    auto g = Gradient::zeros_like(m.params);
    g.coeff(0) = 6.0;
    g.coeff(7) = 8.0;
    auto next = m;
    const double applied = apply_sgd_step(next, g, 0.01, 1.0);
    CHECK(applied == doctest::Approx(1.0).epsilon(1e-12));
    auto delta = next.params;
    delta.add_scaled(m.params, -1.0);
    CHECK(std::abs(std::sqrt(delta.squared_norm()) - 0.01) <= 1e-9);
  }
  SUBCASE("non-finite gradient is refused") {
    auto g = Gradient::zeros_like(m.params);
    g.coeff(1) = std::nan("");
    auto next = m;
    CHECK_THROWS_AS(apply_sgd_step(next, g, 0.01, 0.0), NumericError);
    CHECK(next == m);
  }
}

TEST_CASE("a small positive step increases the weighted log-likelihood") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10; ++i) {
    const auto m = init_model(fixtures::tiny_arch(3, 5), static_cast<std::uint64_t>(i));
    std::vector<FeatureMatrix> frames{fixtures::random_frames(3, 6, rng)};
    auto reqs = fixtures::random_requests(rng, frames, 5);
    reqs[0].weight = 1.0;
    const auto next = sgd_step(m, weighted_ce_gradient<double>(m, reqs), 1e-4, 0.0);
    CHECK(weighted_log_likelihood<double>(next, reqs) > weighted_log_likelihood<double>(m, reqs));
  }
}

TEST_CASE("posteriors stay valid after many updates") {
  std::mt19937_64 rng(10);
  auto m = init_model(fixtures::tiny_arch(3, 5), 2);
  std::vector<FeatureMatrix> frames{fixtures::random_frames(3, 8, rng)};
  auto reqs = fixtures::random_requests(rng, frames, 5);
  for (int i = 0; i < 200; ++i) apply_sgd_step(m, weighted_ce_gradient<double>(m, reqs), 0.5, 5.0);
  const Eigen::MatrixXd p = forward_posteriors(m, frames[0]);
  for (int t = 0; t < p.rows(); ++t) CHECK(std::abs(p.row(t).sum() - 1.0) < 1e-6);
}

TEST_CASE("priors from counts") {
  const Eigen::VectorXd p = priors_from_counts(Eigen::Vector2d(3, 1), 0.0);
  CHECK(p[0] == doctest::Approx(0.75));
  CHECK(p[1] == doctest::Approx(0.25));

  const Eigen::VectorXd q = priors_from_counts(Eigen::Vector3d(5, 0, 5), 0.01);
  CHECK(q[1] == 0.01);
  CHECK(q.sum() == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> c(0, 20);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd counts(8);
    for (int i = 0; i < 8; ++i) counts[i] = c(rng);
    counts[0] += 1;
    const Eigen::VectorXd pr = priors_from_counts(counts, 0.02);
    CHECK(std::abs(pr.sum() - 1.0) <= 1e-9);
    CHECK((pr.array() >= 0.02 - 1e-15).all());
  }
  CHECK_THROWS_AS(estimate_priors(std::vector<Alignment>{}, 3, 1e-8), ValidationError);
  const Eigen::VectorXd e = estimate_priors(std::vector<Alignment>{{0, 0, 1}, {1, 2}}, 3, 0.0);
  CHECK(e[0] == doctest::Approx(0.4));
  CHECK(e[1] == doctest::Approx(0.4));
  CHECK(e[2] == doctest::Approx(0.2));
}

TEST_CASE("model files round-trip bit-exactly") {
  ArchConfig arch = fixtures::tiny_arch(3, 4);
  arch.hidden_sizes = {5, 6};
  auto m = init_model(arch, 4);
  m.state_priors = priors_from_counts(Eigen::Vector4d(1, 2, 3, 0), 1e-8);
  const auto path = temp_path("roundtrip.bin");
  save_model(m, path);
  CHECK(load_model(path) == m);

  SUBCASE("unknown version") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(std::string("HYPSEL-MODEL\n").size()));
    const std::uint32_t v = 99;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
    f.close();
    try {
      load_model(path);
      FAIL("expected a version error");
    } catch (const VersionError& e) {
      CHECK(e.found() == 99);
      CHECK(e.expected() == kModelSchemaVersion);
    }
  }
  SUBCASE("truncated file") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
    CHECK_THROWS_AS(load_model(path), SchemaError);
  }
  std::filesystem::remove(path);
}
