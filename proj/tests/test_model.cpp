#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "vhash/error.hpp"
#include "vhash/model.hpp"

using namespace vhash;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.encoder_dims = {6, 6, 4, 4};
  return cfg;
}

FeatureSequence random_seq(std::uint64_t seed, Eigen::Index frames, Eigen::Index dim) {
  std::mt19937_64 rng(seed);
  FeatureSequence s;
  s.video_id = "v";
  s.features = oracle::random_matrix(rng, frames, dim, -2, 2);
  s.normalized = true;
  return s;
}

BNLSTMCell unit_cell(Eigen::Index dx, Eigen::Index dh) { return BNLSTMCell(dx, dh, 0.1, 0.0); }

SeqBatch single(std::initializer_list<double> values) {
  SeqBatch b;
  b.lengths = {static_cast<Eigen::Index>(values.size())};
  for (double v : values) b.steps.push_back(Eigen::MatrixXd::Constant(1, 2, v));
  return b;
}

}  // namespace

TEST_CASE("zero cell gives zero state and half-open gates") {
  auto cell = unit_cell(8, 6);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(1, 8);
  const auto r = bnlstm_cell_step(x, Eigen::MatrixXd::Zero(1, 6), Eigen::MatrixXd::Zero(1, 6), cell, 0,
                                  Mode::kInference);
  CHECK(r.h.isZero());
  CHECK(r.c.isZero());
  CHECK((r.f.array() == 0.5).all());
  CHECK((r.i.array() == 0.5).all());
  CHECK((r.o.array() == 0.5).all());
}

TEST_CASE("cell with identity normalization matches a textbook LSTM") {
  std::mt19937_64 rng(17);
  auto cell = unit_cell(5, 3);
  cell.W_h.value = oracle::random_matrix(rng, 3, 12);
  cell.W_x.value = oracle::random_matrix(rng, 5, 12);
  cell.b.value = oracle::random_matrix(rng, 1, 12);
  const Eigen::MatrixXd xs = oracle::random_matrix(rng, 7, 5, -2, 2);
  const Eigen::RowVectorXd h0 = oracle::random_matrix(rng, 1, 3);
  const Eigen::RowVectorXd c0 = oracle::random_matrix(rng, 1, 3);
  const Eigen::MatrixXd expected = oracle::plain_lstm({cell.W_h.value, cell.W_x.value, cell.b.value, h0, c0}, xs);

  Eigen::MatrixXd h = h0, c = c0;
  for (Eigen::Index t = 0; t < xs.rows(); ++t) {
    const auto r = bnlstm_cell_step(xs.row(t), h, c, cell, static_cast<std::size_t>(t), Mode::kInference);
    h = r.h;
    c = r.c;
    CHECK((h - expected.row(t)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("cell weight shapes and shape errors") {
  auto cell = unit_cell(8, 6);
  CHECK(cell.W_x.value.rows() == 8);
  CHECK(cell.W_x.value.cols() == 24);
  CHECK(cell.W_h.value.rows() == 6);
  CHECK(cell.W_h.value.cols() == 24);
  CHECK_THROWS_AS(bnlstm_cell_step(Eigen::MatrixXd::Zero(1, 7), Eigen::MatrixXd::Zero(1, 6),
                                   Eigen::MatrixXd::Zero(1, 6), cell, 0, Mode::kInference),
                  Error);
}

TEST_CASE("encoder step count") {
  CHECK(encoder_steps(100) == 25);
  CHECK(encoder_steps(1) == 1);
  CHECK(encoder_steps(5) == 2);
  CHECK(encoder_steps(7) == 2);
  CHECK(encoder_steps(9) == 3);
  Model model(small_config(), 1);
  const auto e = encode(model, random_seq(2, 100, 8), Mode::kInference);
  CHECK(e.steps() == 25);
  CHECK(e.bits_per_step() == 4);
  CHECK(e.d_series.size() == 24);
  CHECK(e.forget.rows() == 25);
  const auto one = encode(model, random_seq(3, 1, 8), Mode::kInference);
  CHECK(one.steps() == 1);
  CHECK(one.d_series.size() == 0);
}

TEST_CASE("codes are +-1 with matching d series and gates in (0, 1)") {
  Model model(small_config(), 4);
  const auto e = encode(model, random_seq(5, 40, 8), Mode::kInference);
  CHECK((e.codes.array().abs() == 1.0).all());
  CHECK(e.d_series == adjacent_hamming(e.codes));
  for (const auto* g : {&e.forget, &e.input, &e.output}) {
    CHECK((g->array() > 0.0).all());
    CHECK((g->array() < 1.0).all());
  }
  CHECK(((e.codes.array() >= 0) == (e.pre_binary.array() >= 0)).all());
}

TEST_CASE("adjacent hamming by hand") {
  Eigen::MatrixXd c(3, 4);
  c << 1, 1, -1, -1,  //
      1, -1, -1, 1,   //
      1, -1, -1, 1;
  Eigen::VectorXi d = adjacent_hamming(c);
  REQUIRE(d.size() == 2);
  CHECK(d(0) == 2);
  CHECK(d(1) == 0);
}

TEST_CASE("stride keeps 1-based even steps plus an odd tail") {
  const auto out = stride2(single({0, 1, 2, 3, 4}));
  REQUIRE(out.size() == 3);
  CHECK(out.lengths.front() == 3);
  CHECK(out.steps[0](0, 0) == 1);
  CHECK(out.steps[1](0, 0) == 3);
  CHECK(out.steps[2](0, 0) == 4);
}

TEST_CASE("average upsampling of [a, b] is [a, (a+b)/2, b, b]") {
  const auto out = upsample2(single({2, 6}));
  REQUIRE(out.size() == 4);
  CHECK(out.steps[0](0, 0) == 2);
  CHECK(out.steps[1](0, 0) == 4);
  CHECK(out.steps[2](0, 0) == 6);
  CHECK(out.steps[3](0, 0) == 6);
  CHECK(out.lengths.front() == 4);
}

TEST_CASE("ragged upsampling replicates each item's own last step") {
  SeqBatch b;
  b.lengths = {2, 1};
  Eigen::MatrixXd s0(2, 1), s1(1, 1);
  s0 << 2, 10;
  s1 << 6;
  b.steps = {s0, s1};
  const auto out = upsample2(b);
  REQUIRE(out.size() == 4);
  CHECK(out.steps[1](0, 0) == 4);
  CHECK(out.steps[1](1, 0) == 10);
  CHECK(out.steps[3].rows() == 1);
}

TEST_CASE("stride and upsample backward are adjoints of the forward maps") {
  std::mt19937_64 rng(8);
  SeqBatch in;
  in.lengths = {7, 5, 2};
  for (Eigen::Index t = 0; t < 7; ++t) {
    const Eigen::Index rows = (t < 2) ? 3 : (t < 5 ? 2 : 1);
    in.steps.push_back(oracle::random_matrix(rng, rows, 3));
  }
  auto dot = [](const SeqBatch& a, const SeqBatch& b) {
    double s = 0;
    for (std::size_t t = 0; t < a.size(); ++t) s += (a.steps[t].array() * b.steps[t].array()).sum();
    return s;
  };
  auto random_like = [&](const SeqBatch& shape) {
    SeqBatch r = shape;
    for (auto& m : r.steps) m = oracle::random_matrix(rng, m.rows(), m.cols());
    return r;
  };
  const auto s = stride2(in);
  const auto gs = random_like(s);
  CHECK(std::abs(dot(s, gs) - dot(in, stride2_backward(gs, in))) < 1e-12);
  const auto u = upsample2(in);
  const auto gu = random_like(u);
  CHECK(std::abs(dot(u, gu) - dot(in, upsample2_backward(gu, in))) < 1e-12);
}

TEST_CASE("decode returns exactly the target length") {
  Model model(small_config(), 6);
  const auto e = encode(model, random_seq(7, 100, 8), Mode::kInference);
  CHECK(decode(model, e, 100, Mode::kInference).rows() == 100);
  CHECK(decode(model, e, 97, Mode::kInference).rows() == 97);
  const auto longer = decode(model, e, 103, Mode::kInference);
  CHECK(longer.rows() == 103);
  CHECK(longer.row(102) == longer.row(99));
  CHECK(longer.cols() == 8);
  CHECK_THROWS_AS(decode(model, EncodeResult{}, 4, Mode::kInference), Error);
}

TEST_CASE("zero-weight decoder reconstructs zeros") {
  Model model(small_config(), 6);
  for (auto& cell : model.decoder) {
    for (Param* p : cell.params()) p->value.setZero();
    cell.gamma_h.value.setOnes();
    cell.gamma_x.value.setOnes();
    cell.gamma_c.value.setOnes();
  }
  const auto e = encode(model, random_seq(9, 20, 8), Mode::kInference);
  CHECK(decode(model, e, 20, Mode::kInference).isZero());
}

TEST_CASE("forward shapes and determinism") {
  Model a(small_config(), 11), b(small_config(), 11);
  const auto seq = random_seq(12, 37, 8);
  const auto ra = forward(a, seq, Mode::kInference);
  const auto rb = forward(b, seq, Mode::kInference);
  CHECK(ra.reconstruction.rows() == 37);
  CHECK(ra.reconstruction.cols() == 8);
  CHECK(ra.reconstruction == rb.reconstruction);
  CHECK(ra.encoded.codes == rb.encoded.codes);
  Model c(small_config(), 12);
  CHECK(forward(c, seq, Mode::kInference).reconstruction != ra.reconstruction);
  CHECK_THROWS_AS(forward(a, FeatureSequence{}, Mode::kInference), Error);
}

TEST_CASE("inference codes are prefix stable") {
  Model model(small_config(), 13);
  const auto full = random_seq(14, 60, 8);
  FeatureSequence prefix = full;
  prefix.features = full.features.topRows(23);
  const auto ef = encode(model, full, Mode::kInference);
  const auto ep = encode(model, prefix, Mode::kInference);
  // the last prefix step may come from an odd tail, so compare whole steps only
  const Eigen::Index shared = 23 / 4;
  CHECK(ep.codes.topRows(shared) == ef.codes.topRows(shared));
}

TEST_CASE("training-mode batch statistics depend on batch company") {
  Model model(small_config(), 15);
  const auto a = random_seq(16, 12, 8).features;
  const auto b = random_seq(17, 12, 8).features;
  const auto c = random_seq(18, 12, 8).features;
  BatchForwardOptions opts;
  opts.mode = Mode::kTraining;
  opts.binarize = Binarize::kSurrogate;
  const Eigen::MatrixXd* ab[] = {&a, &b};
  const Eigen::MatrixXd* ac[] = {&a, &c};
  const auto fab = forward_batch(model, ab, opts);
  const auto fac = forward_batch(model, ac, opts);
  CHECK(fab.recon[0] != fac.recon[0]);
}

TEST_CASE("training encode records running statistics") {
  Model model(small_config(), 19);
  CHECK(model.encoder[0].stats_x.max_train_timestep() == 0);
  FeatureSequence seq = random_seq(20, 9, 8);
  encode(model, seq, Mode::kTraining);
  // single-row batches only extend the table
  CHECK(model.encoder[0].stats_x.max_train_timestep() == 9);
  CHECK(model.encoder[3].stats_x.max_train_timestep() == 3);
}
