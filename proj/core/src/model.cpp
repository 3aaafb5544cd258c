#include "vhash/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vhash/error.hpp"

namespace vhash {
namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Eigen::MatrixXd clamped_arctanh(const Eigen::MatrixXd& h) {
  return h.unaryExpr([](double v) { return std::atanh(std::clamp(v, -kArctanhClamp, kArctanhClamp)); });
}

// d/dh arctanh(clamp(h)); zero where the clamp is active.
Eigen::MatrixXd clamped_arctanh_backward(const Eigen::MatrixXd& upstream, const Eigen::MatrixXd& h) {
  return upstream.binaryExpr(h, [](double g, double v) {
    return std::abs(v) < kArctanhClamp ? g / (1.0 - v * v) : 0.0;
  });
}

Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols, double k, std::mt19937_64& rng) {
  Eigen::MatrixXd m(rows, cols);
  // Fill row-major so the draw order does not depend on storage order.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = uniform(rng, -k, k);
  }
  return m;
}

Eigen::Index rows_longer_than(const std::vector<Eigen::Index>& lengths, Eigen::Index t) {
  // lengths are non-increasing
  return static_cast<Eigen::Index>(
      std::lower_bound(lengths.begin(), lengths.end(), t, std::greater<>()) - lengths.begin());
}

SeqBatch zeros_like(const SeqBatch& shape, Eigen::Index cols = -1) {
  SeqBatch out;
  out.lengths = shape.lengths;
  out.steps.reserve(shape.steps.size());
  for (const auto& s : shape.steps) out.steps.push_back(Eigen::MatrixXd::Zero(s.rows(), cols < 0 ? s.cols() : cols));
  return out;
}

void cell_forward(const BNLSTMCell& cell, const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                  const Eigen::MatrixXd& c_prev, std::size_t t, Mode mode, StepCache& sc) {
  if (x.cols() != cell.d_x || h_prev.cols() != cell.d_h || c_prev.cols() != cell.d_h ||
      h_prev.rows() != x.rows() || c_prev.rows() != x.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "cell expects d_x=" + std::to_string(cell.d_x) +
                                               ", d_h=" + std::to_string(cell.d_h));
  }
  const Eigen::Index dh = cell.d_h;
  const Eigen::RowVectorXd gamma_h = cell.gamma_h.value.row(0);
  const Eigen::RowVectorXd gamma_x = cell.gamma_x.value.row(0);
  const Eigen::RowVectorXd gamma_c = cell.gamma_c.value.row(0);
  const Eigen::RowVectorXd beta_c = cell.beta_c.value.row(0);

  Eigen::MatrixXd pre = bn_forward(h_prev * cell.W_h.value, gamma_h, nullptr, cell.stats_h, t, mode, &sc.bn_h,
                                   &sc.mom_h);
  pre += bn_forward(x * cell.W_x.value, gamma_x, nullptr, cell.stats_x, t, mode, &sc.bn_x, &sc.mom_x);
  pre.rowwise() += cell.b.value.row(0);

  sc.f = sigmoid(pre.leftCols(dh));
  sc.i = sigmoid(pre.middleCols(dh, dh));
  sc.g = pre.middleCols(2 * dh, dh).array().tanh().matrix();
  sc.o = sigmoid(pre.rightCols(dh));
  sc.c = (sc.f.array() * c_prev.array() + sc.i.array() * sc.g.array()).matrix();
  const Eigen::MatrixXd c_hat = bn_forward(sc.c, gamma_c, &beta_c, cell.stats_c, t, mode, &sc.bn_c, &sc.mom_c);
  sc.tanh_c = c_hat.array().tanh().matrix();
  sc.h_prev = h_prev;
  sc.c_prev = c_prev;
}

struct GateRecord {
  std::vector<Eigen::MatrixXd> f, i, o;
};

SeqBatch run_layer(const BNLSTMCell& cell, const SeqBatch& in, Mode mode, LayerCache* cache,
                   GateRecord* gates) {
  SeqBatch out;
  out.lengths = in.lengths;
  out.steps.reserve(in.size());
  if (cache) {
    cache->input = in;
    cache->steps.clear();
    cache->steps.reserve(in.size());
  }
  Eigen::MatrixXd c_last;
  for (std::size_t t = 0; t < in.size(); ++t) {
    const Eigen::Index n = in.steps[t].rows();
    Eigen::MatrixXd h_prev, c_prev;
    if (t == 0) {
      h_prev = cell.h0.value.replicate(n, 1);
      c_prev = cell.c0.value.replicate(n, 1);
    } else {
      h_prev = out.steps[t - 1].topRows(n);
      c_prev = c_last.topRows(n);
    }
    StepCache sc;
    cell_forward(cell, in.steps[t], h_prev, c_prev, t, mode, sc);
    out.steps.push_back((sc.o.array() * sc.tanh_c.array()).matrix());
    if (gates) {
      gates->f.push_back(sc.f);
      gates->i.push_back(sc.i);
      gates->o.push_back(sc.o);
    }
    c_last = sc.c;
    if (cache) cache->steps.push_back(std::move(sc));
  }
  return out;
}

SeqBatch layer_backward(BNLSTMCell& cell, const LayerCache& cache, const SeqBatch& d_out,
                        const GateGrads* gate_grads) {
  const Eigen::Index dh = cell.d_h;
  const Eigen::RowVectorXd gamma_h = cell.gamma_h.value.row(0);
  const Eigen::RowVectorXd gamma_x = cell.gamma_x.value.row(0);
  const Eigen::RowVectorXd gamma_c = cell.gamma_c.value.row(0);
  Eigen::RowVectorXd d_gamma_h = Eigen::RowVectorXd::Zero(4 * dh);
  Eigen::RowVectorXd d_gamma_x = Eigen::RowVectorXd::Zero(4 * dh);
  Eigen::RowVectorXd d_gamma_c = Eigen::RowVectorXd::Zero(dh);
  Eigen::RowVectorXd d_beta_c = Eigen::RowVectorXd::Zero(dh);

  SeqBatch d_in = zeros_like(cache.input);
  Eigen::MatrixXd dh_carry, dc_carry;
  for (std::size_t step = cache.steps.size(); step-- > 0;) {
    const StepCache& sc = cache.steps[step];
    const Eigen::Index n = sc.f.rows();
    Eigen::MatrixXd dh_t = d_out.steps[step];
    Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(n, dh);
    if (dh_carry.size() > 0) {
      dh_t.topRows(dh_carry.rows()) += dh_carry;
      dc.topRows(dc_carry.rows()) += dc_carry;
    }

    Eigen::MatrixXd d_o = (dh_t.array() * sc.tanh_c.array()).matrix();
    const Eigen::MatrixXd d_chat =
        (dh_t.array() * sc.o.array() * (1.0 - sc.tanh_c.array().square())).matrix();
    dc += bn_backward(d_chat, gamma_c, sc.bn_c, d_gamma_c, &d_beta_c);

    Eigen::MatrixXd d_f = (dc.array() * sc.c_prev.array()).matrix();
    Eigen::MatrixXd d_i = (dc.array() * sc.g.array()).matrix();
    const Eigen::MatrixXd d_g = (dc.array() * sc.i.array()).matrix();
    if (gate_grads) {
      if (gate_grads->f[step].size() > 0) d_f += gate_grads->f[step];
      if (gate_grads->i[step].size() > 0) d_i += gate_grads->i[step];
      if (gate_grads->o[step].size() > 0) d_o += gate_grads->o[step];
    }

    Eigen::MatrixXd d_pre(n, 4 * dh);
    d_pre.leftCols(dh) = (d_f.array() * sc.f.array() * (1.0 - sc.f.array())).matrix();
    d_pre.middleCols(dh, dh) = (d_i.array() * sc.i.array() * (1.0 - sc.i.array())).matrix();
    d_pre.middleCols(2 * dh, dh) = (d_g.array() * (1.0 - sc.g.array().square())).matrix();
    d_pre.rightCols(dh) = (d_o.array() * sc.o.array() * (1.0 - sc.o.array())).matrix();

    cell.b.grad.row(0) += d_pre.colwise().sum();
    const Eigen::MatrixXd d_ah = bn_backward(d_pre, gamma_h, sc.bn_h, d_gamma_h, nullptr);
    const Eigen::MatrixXd d_ax = bn_backward(d_pre, gamma_x, sc.bn_x, d_gamma_x, nullptr);

    cell.W_h.grad.noalias() += sc.h_prev.transpose() * d_ah;
    cell.W_x.grad.noalias() += cache.input.steps[step].transpose() * d_ax;
    d_in.steps[step].noalias() += d_ax * cell.W_x.value.transpose();

    dh_carry = d_ah * cell.W_h.value.transpose();
    dc_carry = (dc.array() * sc.f.array()).matrix();
    if (step == 0) {
      cell.h0.grad.row(0) += dh_carry.colwise().sum();
      cell.c0.grad.row(0) += dc_carry.colwise().sum();
    }
  }
  cell.gamma_h.grad.row(0) += d_gamma_h;
  cell.gamma_x.grad.row(0) += d_gamma_x;
  cell.gamma_c.grad.row(0) += d_gamma_c;
  cell.beta_c.grad.row(0) += d_beta_c;
  return d_in;
}

SeqBatch truncate_to(const SeqBatch& in, const std::vector<Eigen::Index>& targets) {
  SeqBatch out;
  out.lengths = targets;
  const Eigen::Index longest = targets.empty() ? 0 : targets.front();
  for (Eigen::Index t = 0; t < longest; ++t) {
    const Eigen::Index n = rows_longer_than(targets, t);
    if (static_cast<std::size_t>(t) >= in.size() || in.steps[t].rows() < n) {
      throw Error(ErrorCode::kShapeMismatch, "decoder output shorter than target length");
    }
    out.steps.push_back(in.steps[t].topRows(n));
  }
  return out;
}

SeqBatch truncate_backward(const SeqBatch& d_out, const SeqBatch& in_shape) {
  SeqBatch d_in = zeros_like(in_shape);
  for (std::size_t t = 0; t < d_out.size(); ++t) d_in.steps[t].topRows(d_out.steps[t].rows()) = d_out.steps[t];
  return d_in;
}

Eigen::MatrixXd gather(const SeqBatch& batch, Eigen::Index row) {
  const Eigen::Index len = batch.lengths[row];
  Eigen::MatrixXd out(len, batch.steps.empty() ? 0 : batch.steps.front().cols());
  for (Eigen::Index t = 0; t < len; ++t) out.row(t) = batch.steps[t].row(row);
  return out;
}

Eigen::MatrixXd gather_steps(const std::vector<Eigen::MatrixXd>& steps, const std::vector<Eigen::Index>& lengths,
                             Eigen::Index row) {
  const Eigen::Index len = lengths[row];
  Eigen::MatrixXd out(len, steps.empty() ? 0 : steps.front().cols());
  for (Eigen::Index t = 0; t < len; ++t) out.row(t) = steps[t].row(row);
  return out;
}

// Adds per-item gradient matrices (caller order) into a batch-shaped zero
// tensor. Returns false if every item's gradient is empty.
bool scatter(const std::vector<Eigen::MatrixXd>& per_item, const std::vector<std::size_t>& order,
             SeqBatch& dest) {
  bool any = false;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (order[r] >= per_item.size()) continue;
    const Eigen::MatrixXd& g = per_item[order[r]];
    if (g.size() == 0) continue;
    if (g.rows() != dest.lengths[r] || g.cols() != dest.steps.front().cols()) {
      throw Error(ErrorCode::kShapeMismatch, "output gradient has wrong shape");
    }
    any = true;
    for (Eigen::Index t = 0; t < g.rows(); ++t) dest.steps[t].row(static_cast<Eigen::Index>(r)) += g.row(t);
  }
  return any;
}

void commit_layer(BNLSTMCell& cell, const LayerCache& cache) {
  for (std::size_t t = 0; t < cache.steps.size(); ++t) {
    const StepCache& sc = cache.steps[t];
    cell.stats_h.update(t, sc.mom_h.mean, sc.mom_h.var, sc.mom_h.rows);
    cell.stats_x.update(t, sc.mom_x.mean, sc.mom_x.var, sc.mom_x.rows);
    cell.stats_c.update(t, sc.mom_c.mean, sc.mom_c.var, sc.mom_c.rows);
  }
}

struct DecoderPass {
  std::array<LayerCache, kStackDepth> caches;
  SeqBatch upsampled2;
  SeqBatch hidden;
  SeqBatch reconstruction;
};

void run_decoder(const Model& model, const SeqBatch& codes, const std::vector<Eigen::Index>& targets, Mode mode,
                 bool keep, DecoderPass& pass) {
  auto cache = [&](int k) { return keep ? &pass.caches[k] : nullptr; };
  const SeqBatch d1 = run_layer(model.decoder[0], codes, mode, cache(0), nullptr);
  const SeqBatch d2 = run_layer(model.decoder[1], upsample2(d1), mode, cache(1), nullptr);
  pass.upsampled2 = upsample2(d2);
  const SeqBatch d3 = run_layer(model.decoder[2], truncate_to(pass.upsampled2, targets), mode, cache(2), nullptr);
  pass.hidden = run_layer(model.decoder[3], d3, mode, cache(3), nullptr);
  pass.reconstruction.lengths = pass.hidden.lengths;
  pass.reconstruction.steps.clear();
  for (const auto& s : pass.hidden.steps) pass.reconstruction.steps.push_back(clamped_arctanh(s));
  if (!keep) pass.upsampled2 = SeqBatch{};
}

}  // namespace

BNLSTMCell::BNLSTMCell(Eigen::Index in_dim, Eigen::Index hidden_dim, double momentum, double eps)
    : d_x(in_dim),
      d_h(hidden_dim),
      W_h("W_h", Eigen::MatrixXd::Zero(hidden_dim, 4 * hidden_dim)),
      W_x("W_x", Eigen::MatrixXd::Zero(in_dim, 4 * hidden_dim)),
      b("b", Eigen::MatrixXd::Zero(1, 4 * hidden_dim)),
      gamma_h("gamma_h", Eigen::MatrixXd::Ones(1, 4 * hidden_dim)),
      gamma_x("gamma_x", Eigen::MatrixXd::Ones(1, 4 * hidden_dim)),
      gamma_c("gamma_c", Eigen::MatrixXd::Ones(1, hidden_dim)),
      beta_c("beta_c", Eigen::MatrixXd::Zero(1, hidden_dim)),
      h0("h0", Eigen::MatrixXd::Zero(1, hidden_dim)),
      c0("c0", Eigen::MatrixXd::Zero(1, hidden_dim)),
      stats_h(4 * hidden_dim, momentum, eps),
      stats_x(4 * hidden_dim, momentum, eps),
      stats_c(hidden_dim, momentum, eps) {}

std::array<Param*, 9> BNLSTMCell::params() {
  return {&W_h, &W_x, &b, &gamma_h, &gamma_x, &gamma_c, &beta_c, &h0, &c0};
}

std::array<const Param*, 9> BNLSTMCell::params() const {
  return {&W_h, &W_x, &b, &gamma_h, &gamma_x, &gamma_c, &beta_c, &h0, &c0};
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.feature_dim < 1 || std::any_of(cfg.encoder_dims.begin(), cfg.encoder_dims.end(),
                                         [](Eigen::Index d) { return d < 1; })) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  auto build = [&](std::array<BNLSTMCell, kStackDepth>& stack, Eigen::Index in_dim,
                   const std::array<Eigen::Index, kStackDepth>& dims, const char* prefix) {
    for (int k = 0; k < kStackDepth; ++k) {
      BNLSTMCell cell(in_dim, dims[k], cfg.bn_momentum, cfg.bn_eps);
      cell.W_h.value = uniform_matrix(dims[k], 4 * dims[k], 1.0 / std::sqrt(double(dims[k])), rng);
      cell.W_x.value = uniform_matrix(in_dim, 4 * dims[k], 1.0 / std::sqrt(double(in_dim)), rng);
      cell.gamma_h.value.setConstant(cfg.gamma_init);
      cell.gamma_x.value.setConstant(cfg.gamma_init);
      cell.gamma_c.value.setConstant(cfg.gamma_init);
      for (Param* p : cell.params()) p->name = std::string(prefix) + std::to_string(k + 1) + "." + p->name;
      stack[k] = std::move(cell);
      in_dim = dims[k];
    }
  };
  build(encoder, cfg.feature_dim, cfg.encoder_dims, "enc");
  build(decoder, cfg.hash_bits(), cfg.decoder_dims(), "dec");
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  for (BNLSTMCell* c : cells()) {
    for (Param* p : c->params()) out.push_back(p);
  }
  return out;
}

std::vector<const Param*> Model::params() const {
  std::vector<const Param*> out;
  for (const BNLSTMCell* c : cells()) {
    for (const Param* p : c->params()) out.push_back(p);
  }
  return out;
}

std::vector<BNLSTMCell*> Model::cells() {
  std::vector<BNLSTMCell*> out;
  for (auto& c : encoder) out.push_back(&c);
  for (auto& c : decoder) out.push_back(&c);
  return out;
}

std::vector<const BNLSTMCell*> Model::cells() const {
  std::vector<const BNLSTMCell*> out;
  for (const auto& c : encoder) out.push_back(&c);
  for (const auto& c : decoder) out.push_back(&c);
  return out;
}

CellStepResult bnlstm_cell_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h_prev,
                                const Eigen::MatrixXd& c_prev, BNLSTMCell& cell, std::size_t t, Mode mode) {
  StepCache sc;
  cell_forward(cell, x, h_prev, c_prev, t, mode, sc);
  if (mode == Mode::kTraining) {
    cell.stats_h.update(t, sc.mom_h.mean, sc.mom_h.var, sc.mom_h.rows);
    cell.stats_x.update(t, sc.mom_x.mean, sc.mom_x.var, sc.mom_x.rows);
    cell.stats_c.update(t, sc.mom_c.mean, sc.mom_c.var, sc.mom_c.rows);
  }
  CellStepResult r;
  r.h = (sc.o.array() * sc.tanh_c.array()).matrix();
  r.c = sc.c;
  r.f = sc.f;
  r.i = sc.i;
  r.o = sc.o;
  return r;
}

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> EncodeResult::bits() const {
  return codes.unaryExpr([](double v) -> std::uint8_t { return v >= 0.0 ? 1 : 0; });
}

Eigen::VectorXi adjacent_hamming(const Eigen::MatrixXd& codes) {
  const Eigen::Index steps = codes.rows();
  Eigen::VectorXi d = Eigen::VectorXi::Zero(std::max<Eigen::Index>(steps - 1, 0));
  for (Eigen::Index t = 0; t + 1 < steps; ++t) {
    int count = 0;
    for (Eigen::Index u = 0; u < codes.cols(); ++u) count += (codes(t, u) >= 0.0) != (codes(t + 1, u) >= 0.0);
    d(t) = count;
  }
  return d;
}

SeqBatch stride2(const SeqBatch& in) {
  SeqBatch out;
  for (Eigen::Index len : in.lengths) out.lengths.push_back((len + 1) / 2);
  const Eigen::Index longest = out.lengths.empty() ? 0 : out.lengths.front();
  const auto t_in = static_cast<Eigen::Index>(in.size());
  for (Eigen::Index k = 0; k < longest; ++k) {
    const Eigen::Index rows = rows_longer_than(out.lengths, k);
    const Eigen::Index from_odd = 2 * k + 1 < t_in ? in.steps[2 * k + 1].rows() : 0;
    Eigen::MatrixXd m(rows, in.steps[2 * k].cols());
    if (from_odd > 0) m.topRows(from_odd) = in.steps[2 * k + 1];
    // Odd-length items end at step 2k; their leftover state is kept.
    m.bottomRows(rows - from_odd) = in.steps[2 * k].middleRows(from_odd, rows - from_odd);
    out.steps.push_back(std::move(m));
  }
  return out;
}

SeqBatch stride2_backward(const SeqBatch& d_out, const SeqBatch& in_shape) {
  SeqBatch d_in = zeros_like(in_shape);
  const auto t_in = static_cast<Eigen::Index>(in_shape.size());
  for (std::size_t k = 0; k < d_out.size(); ++k) {
    const Eigen::Index ki = static_cast<Eigen::Index>(k);
    const Eigen::Index rows = d_out.steps[k].rows();
    const Eigen::Index from_odd = 2 * ki + 1 < t_in ? in_shape.steps[2 * ki + 1].rows() : 0;
    if (from_odd > 0) d_in.steps[2 * ki + 1] += d_out.steps[k].topRows(from_odd);
    d_in.steps[2 * ki].middleRows(from_odd, rows - from_odd) += d_out.steps[k].bottomRows(rows - from_odd);
  }
  return d_in;
}

SeqBatch upsample2(const SeqBatch& in) {
  SeqBatch out;
  for (Eigen::Index len : in.lengths) out.lengths.push_back(2 * len);
  for (std::size_t k = 0; k < in.size(); ++k) {
    out.steps.push_back(in.steps[k]);
    Eigen::MatrixXd mid = in.steps[k];
    if (k + 1 < in.size()) {
      const Eigen::Index n = in.steps[k + 1].rows();
      mid.topRows(n) = 0.5 * (in.steps[k].topRows(n) + in.steps[k + 1]);
    }
    out.steps.push_back(std::move(mid));
  }
  return out;
}

SeqBatch upsample2_backward(const SeqBatch& d_out, const SeqBatch& in_shape) {
  SeqBatch d_in = zeros_like(in_shape);
  for (std::size_t k = 0; k < in_shape.size(); ++k) {
    d_in.steps[k] += d_out.steps[2 * k];
    const Eigen::MatrixXd& d_mid = d_out.steps[2 * k + 1];
    const Eigen::Index n = k + 1 < in_shape.size() ? in_shape.steps[k + 1].rows() : 0;
    d_in.steps[k].topRows(n) += 0.5 * d_mid.topRows(n);
    if (n > 0) d_in.steps[k + 1] += 0.5 * d_mid.topRows(n);
    d_in.steps[k].bottomRows(d_mid.rows() - n) += d_mid.bottomRows(d_mid.rows() - n);
  }
  return d_in;
}

BatchForward forward_batch(const Model& model, std::span<const Eigen::MatrixXd* const> inputs,
                           const BatchForwardOptions& opts) {
  if (inputs.empty()) throw Error(ErrorCode::kEmptySequence, "empty batch");
  BatchForward fwd;
  fwd.order.resize(inputs.size());
  std::iota(fwd.order.begin(), fwd.order.end(), 0);
  std::stable_sort(fwd.order.begin(), fwd.order.end(),
                   [&](std::size_t a, std::size_t b) { return inputs[a]->rows() > inputs[b]->rows(); });

  SeqBatch x;
  for (std::size_t idx : fwd.order) {
    if (inputs[idx]->rows() < 1) throw Error(ErrorCode::kEmptySequence, "sequence with no frames");
    if (inputs[idx]->cols() != model.config.feature_dim) {
      throw Error(ErrorCode::kDimensionMismatch, "input dim " + std::to_string(inputs[idx]->cols()) +
                                                     " vs model " + std::to_string(model.config.feature_dim));
    }
    x.lengths.push_back(inputs[idx]->rows());
    fwd.frames.push_back(inputs[idx]->rows());
  }
  for (Eigen::Index t = 0; t < x.lengths.front(); ++t) {
    const Eigen::Index n = rows_longer_than(x.lengths, t);
    Eigen::MatrixXd m(n, model.config.feature_dim);
    for (Eigen::Index r = 0; r < n; ++r) m.row(r) = inputs[fwd.order[r]]->row(t);
    x.steps.push_back(std::move(m));
  }

  const bool keep = opts.keep_cache || opts.mode == Mode::kTraining;
  auto cache = [&](std::array<LayerCache, kStackDepth>& c, int k) { return keep ? &c[k] : nullptr; };
  GateRecord gates;
  const SeqBatch h1 = run_layer(model.encoder[0], x, opts.mode, cache(fwd.enc, 0), nullptr);
  const SeqBatch h2 = run_layer(model.encoder[1], h1, opts.mode, cache(fwd.enc, 1), nullptr);
  const SeqBatch h3 = run_layer(model.encoder[2], stride2(h2), opts.mode, cache(fwd.enc, 2), nullptr);
  fwd.enc_hidden = run_layer(model.encoder[3], stride2(h3), opts.mode, cache(fwd.enc, 3), &gates);

  fwd.pre_binary.lengths = fwd.codes.lengths = fwd.enc_hidden.lengths;
  for (const auto& h : fwd.enc_hidden.steps) {
    fwd.pre_binary.steps.push_back(clamped_arctanh(h));
    const Eigen::MatrixXd& z = fwd.pre_binary.steps.back();
    fwd.codes.steps.push_back(opts.binarize == Binarize::kHard ? sgn_forward(z)
                                                              : Eigen::MatrixXd(z.cwiseMax(-1.0).cwiseMin(1.0)));
  }

  if (opts.run_decoder) {
    DecoderPass pass;
    run_decoder(model, fwd.codes, fwd.frames, opts.mode, keep, pass);
    fwd.dec = std::move(pass.caches);
    fwd.dec_hidden = std::move(pass.hidden);
    fwd.reconstruction = std::move(pass.reconstruction);
    fwd.recon.resize(inputs.size());
  }

  fwd.encoded.resize(inputs.size());
  for (std::size_t r = 0; r < fwd.order.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    EncodeResult& e = fwd.encoded[fwd.order[r]];
    e.codes = gather(fwd.codes, row);
    e.pre_binary = gather(fwd.pre_binary, row);
    e.d_series = adjacent_hamming(e.codes);
    e.forget = gather_steps(gates.f, fwd.codes.lengths, row);
    e.input = gather_steps(gates.i, fwd.codes.lengths, row);
    e.output = gather_steps(gates.o, fwd.codes.lengths, row);
    if (opts.run_decoder) fwd.recon[fwd.order[r]] = gather(fwd.reconstruction, row);
  }
  return fwd;
}

void backward_batch(Model& model, const BatchForward& fwd, const BatchOutputGrads& grads) {
  SeqBatch d_codes = zeros_like(fwd.codes);

  if (!fwd.dec[0].steps.empty()) {
    SeqBatch d_recon = zeros_like(fwd.reconstruction);
    if (scatter(grads.recon, fwd.order, d_recon)) {
      SeqBatch d_hidden = zeros_like(fwd.dec_hidden);
      for (std::size_t t = 0; t < d_hidden.size(); ++t) {
        d_hidden.steps[t] = clamped_arctanh_backward(d_recon.steps[t], fwd.dec_hidden.steps[t]);
      }
      const SeqBatch d3 = layer_backward(model.decoder[3], fwd.dec[3], d_hidden, nullptr);
      const SeqBatch d_trunc = layer_backward(model.decoder[2], fwd.dec[2], d3, nullptr);
      // Layer outputs share their input's steps but have d_h columns.
      const SeqBatch h2_shape = zeros_like(fwd.dec[1].input, model.decoder[1].d_h);
      const SeqBatch d_up2 = truncate_backward(d_trunc, upsample2(h2_shape));
      const SeqBatch d_h2 = upsample2_backward(d_up2, h2_shape);
      const SeqBatch d_up1 = layer_backward(model.decoder[1], fwd.dec[1], d_h2, nullptr);
      const SeqBatch d_h1 = upsample2_backward(d_up1, zeros_like(fwd.dec[0].input, model.decoder[0].d_h));
      d_codes = layer_backward(model.decoder[0], fwd.dec[0], d_h1, nullptr);
    }
  }
  scatter(grads.codes, fwd.order, d_codes);

  GateGrads gate_grads;
  SeqBatch df = zeros_like(fwd.codes), di = zeros_like(fwd.codes), d_o = zeros_like(fwd.codes);
  const bool any_gate = scatter(grads.forget, fwd.order, df) | scatter(grads.input, fwd.order, di) |
                        scatter(grads.output, fwd.order, d_o);
  if (any_gate) {
    gate_grads.f = std::move(df.steps);
    gate_grads.i = std::move(di.steps);
    gate_grads.o = std::move(d_o.steps);
  }

  SeqBatch d_h4 = zeros_like(fwd.enc_hidden);
  for (std::size_t t = 0; t < d_h4.size(); ++t) {
    const Eigen::MatrixXd d_z = sgn_backward(d_codes.steps[t], fwd.pre_binary.steps[t]);
    d_h4.steps[t] = clamped_arctanh_backward(d_z, fwd.enc_hidden.steps[t]);
  }
  const SeqBatch d_s3 = layer_backward(model.encoder[3], fwd.enc[3], d_h4, any_gate ? &gate_grads : nullptr);
  const SeqBatch d_h3 = stride2_backward(d_s3, zeros_like(fwd.enc[2].input, model.encoder[2].d_h));
  const SeqBatch d_s2 = layer_backward(model.encoder[2], fwd.enc[2], d_h3, nullptr);
  const SeqBatch d_h2 = stride2_backward(d_s2, zeros_like(fwd.enc[1].input, model.encoder[1].d_h));
  const SeqBatch d_h1 = layer_backward(model.encoder[1], fwd.enc[1], d_h2, nullptr);
  layer_backward(model.encoder[0], fwd.enc[0], d_h1, nullptr);
}

void commit_running_stats(Model& model, const BatchForward& fwd) {
  for (int k = 0; k < kStackDepth; ++k) {
    commit_layer(model.encoder[k], fwd.enc[k]);
    commit_layer(model.decoder[k], fwd.dec[k]);
  }
}

EncodeResult encode(Model& model, const FeatureSequence& seq, Mode mode) {
  if (seq.frame_count() < 1) throw Error(ErrorCode::kEmptySequence, seq.video_id);
  const Eigen::MatrixXd* input = &seq.features;
  BatchForwardOptions opts;
  opts.mode = mode;
  opts.keep_cache = false;
  opts.run_decoder = false;
  BatchForward fwd = forward_batch(model, std::span(&input, 1), opts);
  if (mode == Mode::kTraining) commit_running_stats(model, fwd);
  return std::move(fwd.encoded.front());
}

EncodeResult encode_frozen(const Model& model, const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw Error(ErrorCode::kEmptySequence, "no frames");
  const Eigen::MatrixXd* input = &features;
  BatchForwardOptions opts;
  opts.mode = Mode::kInference;
  opts.keep_cache = false;
  opts.run_decoder = false;
  BatchForward fwd = forward_batch(model, std::span(&input, 1), opts);
  return std::move(fwd.encoded.front());
}

Eigen::MatrixXd decode(Model& model, const EncodeResult& codes, Eigen::Index target_len, Mode mode) {
  if (codes.steps() < 1) throw Error(ErrorCode::kEmptyCodes, "nothing to decode");
  if (codes.bits_per_step() != model.hash_bits()) {
    throw Error(ErrorCode::kShapeMismatch, "code width does not match the model hash length");
  }
  if (target_len < 1) throw Error(ErrorCode::kInvalidArgument, "target length must be positive");
  SeqBatch in;
  in.lengths = {codes.steps()};
  for (Eigen::Index t = 0; t < codes.steps(); ++t) in.steps.push_back(codes.codes.row(t));
  const Eigen::Index produced = std::min(target_len, 4 * codes.steps());
  DecoderPass pass;
  run_decoder(model, in, {produced}, mode, mode == Mode::kTraining, pass);
  if (mode == Mode::kTraining) {
    for (int k = 0; k < kStackDepth; ++k) commit_layer(model.decoder[k], pass.caches[k]);
  }
  Eigen::MatrixXd out(target_len, model.config.feature_dim);
  for (Eigen::Index t = 0; t < target_len; ++t) {
    out.row(t) = pass.reconstruction.steps[std::min(t, produced - 1)].row(0);
  }
  return out;
}

ForwardResult forward(Model& model, const FeatureSequence& seq, Mode mode) {
  if (seq.frame_count() < 1) throw Error(ErrorCode::kEmptySequence, seq.video_id);
  const Eigen::MatrixXd* input = &seq.features;
  BatchForwardOptions opts;
  opts.mode = mode;
  opts.keep_cache = false;
  BatchForward fwd = forward_batch(model, std::span(&input, 1), opts);
  if (mode == Mode::kTraining) commit_running_stats(model, fwd);
  return {std::move(fwd.recon.front()), std::move(fwd.encoded.front())};
}

}  // namespace vhash
