#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vhash/ingest.hpp"
#include "vhash/numerics.hpp"

namespace vhash {

inline constexpr int kStackDepth = 4;
inline constexpr double kArctanhClamp = 1.0 - 1e-6;

// Batch-normalized LSTM cell. Row-vector convention: pre-activations are
// h_prev * W_h + x * W_x, split into forget/input/candidate/output quarters.
struct BNLSTMCell {
  Eigen::Index d_x = 0;
  Eigen::Index d_h = 0;
  Param W_h;      // d_h x 4d_h
  Param W_x;      // d_x x 4d_h
  Param b;        // 1 x 4d_h
  Param gamma_h;  // 1 x 4d_h, shift fixed at zero
  Param gamma_x;  // 1 x 4d_h, shift fixed at zero
  Param gamma_c;  // 1 x d_h
  Param beta_c;   // 1 x d_h
  Param h0;       // 1 x d_h
  Param c0;       // 1 x d_h
  BNSiteStats stats_h;
  BNSiteStats stats_x;
  BNSiteStats stats_c;

  BNLSTMCell() = default;
  BNLSTMCell(Eigen::Index in_dim, Eigen::Index hidden_dim, double momentum, double eps);

  std::array<Param*, 9> params();
  std::array<const Param*, 9> params() const;
};

struct ModelConfig {
  Eigen::Index feature_dim = kDefaultDctBlock * kDefaultDctBlock;
  // Hidden sizes of encoder layers 1..4; the last one is the hash length L.
  std::array<Eigen::Index, kStackDepth> encoder_dims{256, 256, 64, 64};
  double bn_momentum = kDefaultBnMomentum;
  double bn_eps = kDefaultBnEps;
  double gamma_init = 0.1;

  Eigen::Index hash_bits() const { return encoder_dims.back(); }
  // Mirror of the encoder ending at the feature dimension.
  std::array<Eigen::Index, kStackDepth> decoder_dims() const {
    return {encoder_dims[2], encoder_dims[1], encoder_dims[0], feature_dim};
  }
};

struct Model {
  ModelConfig config;
  std::array<BNLSTMCell, kStackDepth> encoder;
  std::array<BNLSTMCell, kStackDepth> decoder;
  // Longest normalized input seen in training (frames after the drop).
  std::uint32_t train_max_input_length = 0;

  Model() = default;
  // Uniform(-k, k) weights with k = 1/sqrt(fan_in), gammas at
  // config.gamma_init, zero biases and initial states.
  Model(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::vector<BNLSTMCell*> cells();
  std::vector<const BNLSTMCell*> cells() const;
  Eigen::Index hash_bits() const { return config.hash_bits(); }
};

// Encoder steps produced from M input frames: ceil(ceil(M/2)/2).
constexpr Eigen::Index encoder_steps(Eigen::Index frames) { return ((frames + 1) / 2 + 1) / 2; }

struct CellStepResult {
  Eigen::MatrixXd h;
  Eigen::MatrixXd c;
  Eigen::MatrixXd f;
  Eigen::MatrixXd i;
  Eigen::MatrixXd o;
};

// One recurrence step for a batch of rows at timestep t (0-based).
// Training mode commits batch moments to the cell's running statistics.
CellStepResult bnlstm_cell_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                                const Eigen::MatrixXd& c_prev, BNLSTMCell& cell, std::size_t t, Mode mode);

// How the encoder head turns arctanh outputs into codes. kHard emits +-1
// (straight-through backward); kSurrogate emits the clipped identity whose
// true derivative equals the straight-through mask, for gradient checking.
enum class Binarize { kHard, kSurrogate };

// Per-video encoder output. `codes` holds the +-1 (or surrogate) values per
// encoder step; `bits()` gives the {0,1} view.
struct EncodeResult {
  Eigen::MatrixXd codes;       // M_e x L
  Eigen::MatrixXd pre_binary;  // M_e x L arctanh outputs fed to the binarizer
  Eigen::VectorXi d_series;    // M_e - 1 adjacent Hamming distances
  Eigen::MatrixXd forget;      // M_e x L, last encoder layer
  Eigen::MatrixXd input;
  Eigen::MatrixXd output;

  Eigen::Index steps() const { return codes.rows(); }
  Eigen::Index bits_per_step() const { return codes.cols(); }
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> bits() const;
};

// Hamming distance between the sign patterns of consecutive code rows.
Eigen::VectorXi adjacent_hamming(const Eigen::MatrixXd& codes);

struct ForwardResult {
  Eigen::MatrixXd reconstruction;  // M x D
  EncodeResult encoded;
};

EncodeResult encode(Model& model, const FeatureSequence& seq, Mode mode);
Eigen::MatrixXd decode(Model& model, const EncodeResult& codes, Eigen::Index target_len, Mode mode);
ForwardResult forward(Model& model, const FeatureSequence& seq, Mode mode);

// Inference-only encoder pass over a frozen model; safe to call
// concurrently.
EncodeResult encode_frozen(const Model& model, const Eigen::MatrixXd& features);

// ---------------------------------------------------------------------------
// Batched forward/backward used by training and gradient checks.

// Ragged batch over time: steps[t] holds one row per item whose sequence is
// longer than t. Items are ordered by non-increasing length, so the active
// rows at every step form a prefix.
struct SeqBatch {
  std::vector<Eigen::MatrixXd> steps;
  std::vector<Eigen::Index> lengths;

  std::size_t size() const { return steps.size(); }
};

struct StepCache {
  Eigen::MatrixXd h_prev, c_prev;
  BnCache bn_h, bn_x, bn_c;
  Eigen::MatrixXd f, i, g, o, c, tanh_c;
  BatchMoments mom_h, mom_x, mom_c;
};

struct LayerCache {
  SeqBatch input;
  std::vector<StepCache> steps;
};

struct GateGrads {
  std::vector<Eigen::MatrixXd> f, i, o;  // per step, same rows as the layer output
};

struct BatchForwardOptions {
  Mode mode = Mode::kTraining;
  Binarize binarize = Binarize::kHard;
  bool keep_cache = true;
  bool run_decoder = true;
};

struct BatchForward {
  std::vector<std::size_t> order;  // order[r] = caller index of row r
  std::vector<Eigen::Index> frames;
  std::array<LayerCache, kStackDepth> enc;
  std::array<LayerCache, kStackDepth> dec;
  SeqBatch enc_hidden;   // last encoder layer outputs
  SeqBatch pre_binary;   // arctanh of enc_hidden
  SeqBatch codes;
  SeqBatch dec_hidden;   // last decoder layer outputs, truncated to M
  SeqBatch reconstruction;

  // Per-caller-item views.
  std::vector<EncodeResult> encoded;
  std::vector<Eigen::MatrixXd> recon;
};

BatchForward forward_batch(const Model& model, std::span<const Eigen::MatrixXd* const> inputs,
                           const BatchForwardOptions& opts);

// Gradients w.r.t. per-item outputs, indexed like the caller's inputs.
// Empty matrices mean "no gradient".
struct BatchOutputGrads {
  std::vector<Eigen::MatrixXd> recon;   // M x D
  std::vector<Eigen::MatrixXd> codes;   // M_e x L
  std::vector<Eigen::MatrixXd> forget;  // M_e x L
  std::vector<Eigen::MatrixXd> input;
  std::vector<Eigen::MatrixXd> output;
};

// Accumulates parameter gradients into Param::grad.
void backward_batch(Model& model, const BatchForward& fwd, const BatchOutputGrads& grads);

// Folds the training-mode batch moments recorded in `fwd` into the running
// statistics.
void commit_running_stats(Model& model, const BatchForward& fwd);

// Layer-level helpers, exposed for tests.
SeqBatch stride2(const SeqBatch& in);
SeqBatch stride2_backward(const SeqBatch& d_out, const SeqBatch& in_shape);
SeqBatch upsample2(const SeqBatch& in);
SeqBatch upsample2_backward(const SeqBatch& d_out, const SeqBatch& in_shape);

}  // namespace vhash
