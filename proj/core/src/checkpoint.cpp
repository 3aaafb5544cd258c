#include "vhash/checkpoint.hpp"

#include "vhash/binary_io.hpp"
#include "vhash/error.hpp"

namespace vhash {
namespace {

constexpr std::uint8_t kVersion = 1;

void write_tensor(ByteWriter& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.f32(static_cast<float>(m(r, c)));
  }
}

void read_tensor(ByteReader& in, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.f32();
  }
}

void write_site(ByteWriter& out, const BNSiteStats& s) {
  out.u32(static_cast<std::uint32_t>(s.max_train_timestep()));
  for (std::size_t t = 0; t < s.max_train_timestep(); ++t) {
    write_tensor(out, s.mean[t]);
    write_tensor(out, s.var[t]);
  }
}

void read_site(ByteReader& in, BNSiteStats& s) {
  const std::uint32_t steps = in.u32();
  if (in.remaining() < static_cast<std::size_t>(steps) * 2 * s.dim * 4) {
    throw Error(ErrorCode::kTruncatedFile, "running statistics table");
  }
  s.mean.assign(steps, Eigen::RowVectorXd(s.dim));
  s.var.assign(steps, Eigen::RowVectorXd(s.dim));
  for (std::uint32_t t = 0; t < steps; ++t) {
    Eigen::MatrixXd m(1, s.dim), v(1, s.dim);
    read_tensor(in, m);
    read_tensor(in, v);
    s.mean[t] = m.row(0);
    s.var[t] = v.row(0);
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  ByteWriter out;
  out.magic("MCBN");
  out.u8(kVersion);
  const auto cells = model.cells();
  out.u8(static_cast<std::uint8_t>(cells.size()));
  for (const BNLSTMCell* cell : cells) {
    out.u32(static_cast<std::uint32_t>(cell->d_x));
    out.u32(static_cast<std::uint32_t>(cell->d_h));
    for (const Param* p : cell->params()) write_tensor(out, p->value);
    write_site(out, cell->stats_h);
    write_site(out, cell->stats_x);
    write_site(out, cell->stats_c);
  }
  out.u32(static_cast<std::uint32_t>(model.config.feature_dim));
  out.u32(static_cast<std::uint32_t>(model.config.hash_bits()));
  out.f32(static_cast<float>(model.config.bn_momentum));
  out.f32(static_cast<float>(model.config.bn_eps));
  out.u32(model.train_max_input_length);
  return out.buffer();
}

Model deserialize_checkpoint(std::vector<std::uint8_t> bytes) {
  ByteReader in(std::move(bytes));
  in.expect_magic("MCBN");
  if (auto v = in.u8(); v != kVersion) throw Error(ErrorCode::kUnsupportedVersion, "MCBN version " + std::to_string(v));
  const std::uint8_t layer_count = in.u8();
  if (layer_count != 2 * kStackDepth) {
    throw Error(ErrorCode::kShapeMismatch, "expected " + std::to_string(2 * kStackDepth) + " layers, file has " +
                                               std::to_string(layer_count));
  }
  std::vector<BNLSTMCell> cells;
  for (int k = 0; k < layer_count; ++k) {
    const std::uint32_t d_x = in.u32();
    const std::uint32_t d_h = in.u32();
    BNLSTMCell cell(d_x, d_h, kDefaultBnMomentum, kDefaultBnEps);
    if (in.remaining() < (static_cast<std::size_t>(d_x + d_h) * 4 * d_h + 11 * d_h) * 4) {
      throw Error(ErrorCode::kTruncatedFile, "layer " + std::to_string(k + 1) + " tensors");
    }
    const char* prefix = k < kStackDepth ? "enc" : "dec";
    for (Param* p : cell.params()) {
      read_tensor(in, p->value);
      p->name = prefix + std::to_string(k % kStackDepth + 1) + "." + p->name;
    }
    read_site(in, cell.stats_h);
    read_site(in, cell.stats_x);
    read_site(in, cell.stats_c);
    cells.push_back(std::move(cell));
  }
  Model model;
  model.config.feature_dim = in.u32();
  const std::uint32_t hash_bits = in.u32();
  model.config.bn_momentum = in.f32();
  model.config.bn_eps = in.f32();
  model.train_max_input_length = in.u32();
  for (int k = 0; k < kStackDepth; ++k) model.config.encoder_dims[k] = cells[k].d_h;
  if (model.config.hash_bits() != hash_bits || cells[0].d_x != model.config.feature_dim ||
      cells[kStackDepth].d_x != hash_bits || model.config.decoder_dims() !=
          std::array<Eigen::Index, kStackDepth>{cells[4].d_h, cells[5].d_h, cells[6].d_h, cells[7].d_h}) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint layer dimensions are inconsistent");
  }
  for (int k = 1; k < 2 * kStackDepth; ++k) {
    if (k != kStackDepth && cells[k].d_x != cells[k - 1].d_h) {
      throw Error(ErrorCode::kShapeMismatch, "layer " + std::to_string(k + 1) + " input width mismatch");
    }
  }
  for (int k = 0; k < 2 * kStackDepth; ++k) {
    for (BNSiteStats* s : {&cells[k].stats_h, &cells[k].stats_x, &cells[k].stats_c}) {
      s->momentum = model.config.bn_momentum;
      s->eps = model.config.bn_eps;
    }
    (k < kStackDepth ? model.encoder[k] : model.decoder[k - kStackDepth]) = std::move(cells[k]);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  ByteWriter out;
  out.bytes(serialize_checkpoint(model));
  out.save(path);
}

Model load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace vhash
