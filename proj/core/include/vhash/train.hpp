#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "vhash/ingest.hpp"
#include "vhash/losses.hpp"
#include "vhash/model.hpp"
#include "vhash/numerics.hpp"

namespace vhash {

struct TrainConfig {
  std::size_t batch_size = 32;
  int epochs = 10;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int memory_threshold = 16;
  // Rescale the batch gradient to this global L2 norm when it is larger;
  // 0 disables clipping.
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  // 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
};

struct BatchLoss {
  LossBreakdown loss;
  BatchForward forward;
};

// Runs the autoencoder over one batch and evaluates the total loss. With
// `accumulate_grads`, adds dTotal/dtheta into every Param::grad (straight
// through the binarizer, d_t held constant). Running statistics are not
// touched. `fixed_d` (caller order) replaces the measured d series, which
// the gradient treats as constant anyway.
BatchLoss evaluate_batch(Model& model, std::span<const Eigen::MatrixXd* const> inputs, int memory_threshold,
                         Mode mode, Binarize binarize, bool accumulate_grads,
                         const std::vector<Eigen::VectorXi>* fixed_d = nullptr);

// Groups sequences of similar length into batches of `batch_size`; a
// single-item remainder joins the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::span<const FeatureSequence> set, std::size_t batch_size,
                                                   std::uint64_t& rng_state);

// Scales every gradient so their joint L2 norm is at most `max_norm`.
// Returns the norm before scaling.
double clip_gradients(std::span<Param* const> params, double max_norm);

using EpochCallback = std::function<void(int epoch, const LossBreakdown& loss, const Model& model)>;

// Mini-batch Adam training. Returns one averaged LossBreakdown per epoch.
std::vector<LossBreakdown> train(std::span<const FeatureSequence> set, const TrainConfig& cfg, Model& model,
                                 const EpochCallback& on_epoch = {});

void write_loss_log(std::ostream& out, std::span<const LossBreakdown> log);

}  // namespace vhash
