#include <benchmark/benchmark.h>

#include <random>

#include "vhash/index.hpp"
#include "vhash/ingest.hpp"
#include "vhash/model.hpp"

using namespace vhash;

namespace {

BitCode random_code(std::mt19937_64& rng, Eigen::Index bits) {
  BitCode c(words_for_bits(bits));
  for (auto& w : c) w = rng();
  if (bits % 64) c.back() &= (std::uint64_t{1} << (bits % 64)) - 1;
  return c;
}

VideoHash random_hash(std::mt19937_64& rng, const std::string& id, int events, Eigen::Index bits) {
  VideoHash vh;
  vh.video_id = id;
  vh.bits = bits;
  for (int e = 0; e < events; ++e) {
    vh.events.push_back(random_code(rng, bits));
    vh.end_steps.push_back(4 * (e + 1));
  }
  vh.duration_seconds = events * 1.28;
  return vh;
}

void BM_Hamming(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto a = random_code(rng, state.range(0));
  const auto b = random_code(rng, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(hamming(a, b));
}
BENCHMARK(BM_Hamming)->Arg(64)->Arg(256);

void BM_QueryTopk(benchmark::State& state) {
  std::mt19937_64 rng(2);
  HashDatabase db(64, HashMode::kEvents);
  for (int v = 0; v < state.range(0); ++v) db.add(random_hash(rng, "v" + std::to_string(v), 40, 64));
  const auto q = random_hash(rng, "q", 10, 64);
  for (auto _ : state) benchmark::DoNotOptimize(query_topk(db, q, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_QueryTopk)->Arg(100)->Arg(1000);

void BM_DctFeatures(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<std::uint8_t> frame(kFrameSide * kFrameSide);
  for (auto& p : frame) p = static_cast<std::uint8_t>(rng());
  const int block = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dct_features(frame, block));
}
BENCHMARK(BM_DctFeatures)->Arg(8)->Arg(32);

void BM_CellStep(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  std::mt19937_64 rng(4);
  BNLSTMCell cell(d, d, 0.1, 1e-5);
  cell.W_h.value = Eigen::MatrixXd::Random(d, 4 * d);
  cell.W_x.value = Eigen::MatrixXd::Random(d, 4 * d);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(32, d);
  const Eigen::MatrixXd h = Eigen::MatrixXd::Zero(32, d);
  for (auto _ : state) benchmark::DoNotOptimize(bnlstm_cell_step(x, h, h, cell, 0, Mode::kInference));
}
BENCHMARK(BM_CellStep)->Arg(64)->Arg(256);

}  // namespace
