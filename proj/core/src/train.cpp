#include "vhash/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "vhash/checkpoint.hpp"
#include "vhash/error.hpp"

namespace vhash {

BatchLoss evaluate_batch(Model& model, std::span<const Eigen::MatrixXd* const> inputs, int memory_threshold,
                         Mode mode, Binarize binarize, bool accumulate_grads,
                         const std::vector<Eigen::VectorXi>* fixed_d) {
  BatchForwardOptions opts;
  opts.mode = mode;
  opts.binarize = binarize;
  opts.keep_cache = accumulate_grads;
  BatchLoss out{{}, forward_batch(model, inputs, opts)};
  const BatchForward& fwd = out.forward;

  const std::size_t n = inputs.size();
  if (fixed_d && fixed_d->size() != n) throw Error(ErrorCode::kLengthMismatch, "one d series per input expected");
  const Eigen::Index bits = model.hash_bits();
  std::vector<double> recon(n), memory(n);
  BatchOutputGrads grads;
  grads.recon.resize(n);
  grads.forget.resize(n);
  grads.input.resize(n);
  grads.output.resize(n);
  std::vector<Eigen::MatrixXd> codes(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    const EncodeResult& e = fwd.encoded[j];
    GateLossGrads gate_grads;
    recon[j] = recon_loss(fwd.recon[j], *inputs[j], bits, accumulate_grads ? &grads.recon[j] : nullptr);
    memory[j] = memory_loss(e.forget, e.input, e.output, fixed_d ? (*fixed_d)[j] : e.d_series, memory_threshold, bits,
                            accumulate_grads ? &gate_grads : nullptr);
    if (accumulate_grads) {
      grads.recon[j] *= inv_n;
      grads.forget[j] = inv_n * gate_grads.forget;
      grads.input[j] = inv_n * gate_grads.input;
      grads.output[j] = inv_n * gate_grads.output;
    }
    codes[j] = e.codes;
  }
  const double diversity = diversity_loss(codes, bits, accumulate_grads ? &grads.codes : nullptr);
  out.loss = total_loss(recon, memory, diversity);
  if (accumulate_grads) backward_batch(model, fwd, grads);
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const FeatureSequence> set, std::size_t batch_size,
                                                   std::uint64_t& rng_state) {
  if (set.size() < 2 || batch_size < 2) throw Error(ErrorCode::kBatchTooSmall, "need batches of at least two");
  std::mt19937_64 rng(rng_state);
  std::vector<std::size_t> idx(set.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[uniform_index(rng, k)]);
  // Coarse length buckets (25% wide) so batch composition still varies.
  auto bucket = [&](std::size_t i) {
    return static_cast<int>(std::floor(std::log(static_cast<double>(set[i].frame_count())) / std::log(1.25)));
  };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return bucket(a) > bucket(b); });

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < idx.size(); s += batch_size) {
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(s),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(s + batch_size, idx.size())));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  for (std::size_t k = batches.size(); k > 1; --k) std::swap(batches[k - 1], batches[uniform_index(rng, k)]);
  rng_state = rng();
  return batches;
}

double clip_gradients(std::span<Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (Param* p : params) p->grad *= scale;
  }
  return norm;
}

std::vector<LossBreakdown> train(std::span<const FeatureSequence> set, const TrainConfig& cfg, Model& model,
                                 const EpochCallback& on_epoch) {
  if (set.empty()) throw Error(ErrorCode::kEmptyTrainSet, "no training sequences");
  if (cfg.memory_threshold <= 0 || cfg.memory_threshold > model.hash_bits()) {
    throw Error(ErrorCode::kInvalidArgument, "memory threshold must lie in (0, L]");
  }
  for (const auto& seq : set) {
    if (!seq.normalized) throw Error(ErrorCode::kInvalidArgument, seq.video_id + " is not normalized");
    model.train_max_input_length =
        std::max(model.train_max_input_length, static_cast<std::uint32_t>(seq.frame_count()));
  }
  AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, 0};
  const std::vector<Param*> params = model.params();
  for (Param* p : params) p->zero_grad();

  std::uint64_t rng_state = cfg.seed;
  std::vector<LossBreakdown> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = make_batches(set, cfg.batch_size, rng_state);
    LossBreakdown sum;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Eigen::MatrixXd*> inputs;
      for (std::size_t i : batches[b]) inputs.push_back(&set[i].features);
      BatchLoss result = evaluate_batch(model, inputs, cfg.memory_threshold, Mode::kTraining, Binarize::kHard, true);
      if (!std::isfinite(result.loss.total)) {
        throw Error(ErrorCode::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      commit_running_stats(model, result.forward);
      clip_gradients(params, cfg.clip_norm);
      adam_step(params, adam);
      sum.recon += result.loss.recon;
      sum.memory += result.loss.memory;
      sum.diversity += result.loss.diversity;
      sum.total += result.loss.total;
    }
    const double nb = static_cast<double>(batches.size());
    LossBreakdown mean{sum.recon / nb, sum.memory / nb, sum.diversity / nb, sum.total / nb};
    log.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean, model);
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && !cfg.checkpoint_path.empty()) {
      save_checkpoint(model, cfg.checkpoint_path);
    }
  }
  return log;
}

void write_loss_log(std::ostream& out, std::span<const LossBreakdown> log) {
  out << "epoch,recon,memory,diversity,total\n";
  char line[256];
  for (std::size_t e = 0; e < log.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", e + 1, log[e].recon, log[e].memory,
                  log[e].diversity, log[e].total);
    out << line;
  }
}

}  // namespace vhash
