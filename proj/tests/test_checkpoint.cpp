#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "vhash/binary_io.hpp"
#include "vhash/checkpoint.hpp"
#include "vhash/error.hpp"

using namespace vhash;

namespace {

Model trained_like_model() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.encoder_dims = {6, 5, 4, 3};
  cfg.bn_eps = 1e-3;
  Model model(cfg, 9);
  std::mt19937_64 rng(9);
  FeatureSequence seq;
  seq.features = oracle::random_matrix(rng, 17, 8);
  seq.normalized = true;
  forward(model, seq, Mode::kTraining);
  model.train_max_input_length = 17;
  return model;
}

}  // namespace

TEST_CASE("checkpoint roundtrip preserves tensors at float precision") {
  const Model model = trained_like_model();
  oracle::TempDir dir("ckpt");
  save_checkpoint(model, dir / "m.mcbn");
  const Model back = load_checkpoint(dir / "m.mcbn");
  CHECK(back.config.feature_dim == 8);
  CHECK(back.config.encoder_dims == model.config.encoder_dims);
  CHECK(back.train_max_input_length == 17);
  CHECK(back.config.bn_eps == doctest::Approx(1e-3));
  const auto a = model.params();
  const auto b = back.params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->name == b[i]->name);
    CHECK((a[i]->value - b[i]->value).cwiseAbs().maxCoeff() <= 1e-6 * (1 + a[i]->value.cwiseAbs().maxCoeff()));
  }
  CHECK(back.encoder[0].stats_x.max_train_timestep() == 17);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(model));
}

TEST_CASE("loaded model hashes like the float-rounded original") {
  const Model model = trained_like_model();
  const Model back = deserialize_checkpoint(serialize_checkpoint(model));
  const Model again = deserialize_checkpoint(serialize_checkpoint(back));
  std::mt19937_64 rng(10);
  const auto x = oracle::random_matrix(rng, 30, 8);
  CHECK(encode_frozen(back, x).codes == encode_frozen(again, x).codes);
}

TEST_CASE("checkpoint format errors") {
  auto bytes = serialize_checkpoint(trained_like_model());
  auto bad = bytes;
  bad[1] = 'X';
  try {
    deserialize_checkpoint(bad);
    FAIL("bad magic accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBadMagic);
  }
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  try {
    deserialize_checkpoint(cut);
    FAIL("truncated checkpoint accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTruncatedFile);
  }
}
