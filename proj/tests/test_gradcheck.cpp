#include <doctest.h>

#include <random>

#include "vhash/error.hpp"
#include "vhash/model.hpp"
#include "vhash/train.hpp"

using namespace vhash;

namespace {

// Central differences at h=1e-4 carry roughly 1e-11 of roundoff, so
// gradients below this floor are compared absolutely.
constexpr double kNoiseFloor = 1e-8;

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.encoder_dims = {6, 6, 4, 4};
  cfg.gamma_init = 1.0;
  return cfg;
}

std::vector<Eigen::MatrixXd> random_inputs(std::uint64_t seed, std::vector<Eigen::Index> lengths, Eigen::Index dim) {
  std::mt19937_64 rng(seed);
  std::vector<Eigen::MatrixXd> out;
  for (auto len : lengths) {
    Eigen::MatrixXd m(len, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -2.0, 2.0);
    out.push_back(m);
  }
  return out;
}

double min_distance_from_unit(const BatchForward& fwd) {
  double best = 1e300;
  for (const auto& e : fwd.encoded) best = std::min(best, (e.pre_binary.array().abs() - 1.0).abs().minCoeff());
  return best;
}

struct CheckOutcome {
  bool attempted = false;
  GradCheckResult result;
};

// Inference mode with the fresh model's unit running statistics; d series
// frozen at the base point so sign flips of near-zero codes cannot jump
// the memory term.
CheckOutcome check_seed(std::uint64_t seed, std::vector<Eigen::Index> lengths, int th) {
  Model model(tiny_config(), seed);
  const auto inputs = random_inputs(seed + 1000, lengths, 8);
  std::vector<const Eigen::MatrixXd*> ptrs;
  for (const auto& m : inputs) ptrs.push_back(&m);
  const auto base = evaluate_batch(model, ptrs, th, Mode::kInference, Binarize::kSurrogate, false);
  if (min_distance_from_unit(base.forward) < 1e-3) return {};
  std::vector<Eigen::VectorXi> d;
  for (const auto& e : base.forward.encoded) d.push_back(e.d_series);
  auto params = model.params();
  CheckOutcome out;
  out.attempted = true;
  out.result = grad_check(
      [&] { return evaluate_batch(model, ptrs, th, Mode::kInference, Binarize::kSurrogate, false, &d).loss.total; },
      [&] { evaluate_batch(model, ptrs, th, Mode::kInference, Binarize::kSurrogate, true, &d); }, params, 1e-4,
      kNoiseFloor);
  return out;
}

}  // namespace

TEST_CASE("full autoencoder gradient matches central differences") {
  int done = 0;
  for (std::uint64_t seed = 1; seed < 40 && done < 3; ++seed) {
    const auto r = check_seed(seed, {12, 12}, 2);
    if (!r.attempted) continue;
    ++done;
    INFO("seed " << seed << " worst " << r.result.worst_param << "[" << r.result.worst_index << "] analytic "
                 << r.result.analytic << " numeric " << r.result.numeric);
    CHECK(r.result.max_rel_error <= 1e-3);
    CHECK(r.result.checked > 0);
  }
  CHECK(done == 3);
}

TEST_CASE("ragged batch gradient matches central differences") {
  int done = 0;
  for (std::uint64_t seed = 50; seed < 90 && done < 2; ++seed) {
    const auto r = check_seed(seed, {13, 9, 6}, 1);
    if (!r.attempted) continue;
    ++done;
    INFO("seed " << seed << " worst " << r.result.worst_param << "[" << r.result.worst_index << "]");
    CHECK(r.result.max_rel_error <= 1e-3);
  }
  CHECK(done == 2);
}

TEST_CASE("fixed d series of the wrong size is rejected") {
  Model model(tiny_config(), 3);
  const auto inputs = random_inputs(3, {12, 12}, 8);
  std::vector<const Eigen::MatrixXd*> ptrs{&inputs[0], &inputs[1]};
  std::vector<Eigen::VectorXi> d{Eigen::VectorXi::Zero(2)};
  CHECK_THROWS_AS(evaluate_batch(model, ptrs, 2, Mode::kInference, Binarize::kSurrogate, false, &d), Error);
}
