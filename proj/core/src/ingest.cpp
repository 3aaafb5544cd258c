#include "vhash/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vhash/binary_io.hpp"
#include "vhash/error.hpp"

namespace vhash {
namespace {

constexpr std::uint8_t kFormatVersion = 1;

// round(a / b) for non-negative integers, halves rounded up.
std::uint64_t round_div(std::uint64_t a, std::uint64_t b) { return (2 * a + b) / (2 * b); }

std::uint8_t round_to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// Rows are frequencies: basis(k, n) = s_k cos(pi (2n+1) k / 2N).
const Eigen::MatrixXd& dct_basis() {
  static const Eigen::MatrixXd basis = [] {
    const int n = kFrameSide;
    Eigen::MatrixXd c(n, n);
    for (int k = 0; k < n; ++k) {
      const double s = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
      for (int i = 0; i < n; ++i) {
        c(k, i) = s * std::cos(std::numbers::pi * (2.0 * i + 1.0) * k / (2.0 * n));
      }
    }
    return c;
  }();
  return basis;
}

void check_block(int block) {
  if (block < 1 || block > kFrameSide) {
    throw Error(ErrorCode::kInvalidArgument, "DCT block must be in [1, 64], got " +
                                                 std::to_string(block));
  }
}

}  // namespace

FrameSequence load_fseq(const std::filesystem::path& path) {
  auto in = ByteReader::from_file(path);
  in.expect_magic("FSEQ");
  if (auto v = in.u8(); v != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "FSEQ version " + std::to_string(v));
  }
  FrameSequence seq;
  seq.width = in.u16();
  seq.height = in.u16();
  seq.fps.num = in.u32();
  seq.fps.den = in.u32();
  const std::uint32_t count = in.u32();
  const std::size_t frame_bytes = static_cast<std::size_t>(seq.width) * seq.height;
  if (in.remaining() < frame_bytes * count) {
    throw Error(ErrorCode::kTruncatedFile, path.string() + ": header declares " +
                                               std::to_string(count) + " frames");
  }
  seq.frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto px = in.bytes(frame_bytes);
    seq.frames.emplace_back(px.begin(), px.end());
  }
  return seq;
}

void save_fseq(const FrameSequence& seq, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("FSEQ");
  out.u8(kFormatVersion);
  out.u16(static_cast<std::uint16_t>(seq.width));
  out.u16(static_cast<std::uint16_t>(seq.height));
  out.u32(seq.fps.num);
  out.u32(seq.fps.den);
  out.u32(static_cast<std::uint32_t>(seq.frames.size()));
  for (const auto& f : seq.frames) out.bytes(f);
  out.save(path);
}

FrameSequence resample_to_25fps(const FrameSequence& seq) {
  if (seq.frames.empty()) throw Error(ErrorCode::kEmptySequence, "resample of empty sequence");
  if (seq.fps.num == 0 || seq.fps.den == 0) {
    throw Error(ErrorCode::kInvalidArgument, "frame rate must be positive");
  }
  FrameSequence out;
  out.width = seq.width;
  out.height = seq.height;
  out.fps = Fps{kTargetFps, 1};
  const std::uint64_t in_count = seq.frames.size();
  // in_count * 25 / (num/den)
  std::uint64_t out_count = round_div(in_count * kTargetFps * seq.fps.den, seq.fps.num);
  out_count = std::max<std::uint64_t>(out_count, 1);
  out.frames.reserve(out_count);
  for (std::uint64_t n = 0; n < out_count; ++n) {
    // n * (num/den) / 25
    std::uint64_t src = round_div(n * seq.fps.num, static_cast<std::uint64_t>(kTargetFps) * seq.fps.den);
    out.frames.push_back(seq.frames[std::min(src, in_count - 1)]);
  }
  return out;
}

GrayFrame downscale_gray64(const RawFrame& frame) {
  if (frame.width < 1 || frame.height < 1) throw Error(ErrorCode::kEmptyFrame, "frame has no pixels");
  if (frame.channels != 1 && frame.channels != 3) {
    throw Error(ErrorCode::kWrongDimensions, "expected 1 or 3 channels");
  }
  const auto pixel_count = static_cast<std::size_t>(frame.width) * frame.height;
  if (frame.data.size() != pixel_count * frame.channels) {
    throw Error(ErrorCode::kWrongDimensions, "pixel buffer does not match dimensions");
  }

  std::vector<double> luma(pixel_count);
  for (std::size_t i = 0; i < pixel_count; ++i) {
    if (frame.channels == 1) {
      luma[i] = frame.data[i];
    } else {
      const double r = frame.data[3 * i], g = frame.data[3 * i + 1], b = frame.data[3 * i + 2];
      luma[i] = round_to_u8(0.299 * r + 0.587 * g + 0.114 * b);
    }
  }

  // Exact box filter: each destination pixel averages the source area it
  // covers, weighting partially covered source pixels by overlap.
  const double sy = static_cast<double>(frame.height) / kFrameSide;
  const double sx = static_cast<double>(frame.width) / kFrameSide;
  GrayFrame out(kFrameSide * kFrameSide);
  for (int oy = 0; oy < kFrameSide; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < kFrameSide; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0, area = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < std::min<double>(std::ceil(y1), frame.height); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0) continue;
        for (int x = static_cast<int>(std::floor(x0)); x < std::min<double>(std::ceil(x1), frame.width); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0) continue;
          acc += wy * wx * luma[static_cast<std::size_t>(y) * frame.width + x];
          area += wy * wx;
        }
      }
      out[static_cast<std::size_t>(oy) * kFrameSide + ox] = round_to_u8(acc / area);
    }
  }
  return out;
}

Eigen::RowVectorXd dct_lowfreq(const Eigen::MatrixXd& image, int block) {
  check_block(block);
  if (image.rows() != kFrameSide || image.cols() != kFrameSide) {
    throw Error(ErrorCode::kWrongDimensions, "DCT input must be 64x64");
  }
  const auto low = dct_basis().topRows(block);
  const Eigen::MatrixXd coeffs = low * image * low.transpose();
  Eigen::RowVectorXd out(static_cast<Eigen::Index>(block) * block);
  for (int u = 0; u < block; ++u) {
    for (int v = 0; v < block; ++v) out(u * block + v) = coeffs(u, v);
  }
  out(0) = 0.0;
  return out;
}

Eigen::RowVectorXd dct_features(std::span<const std::uint8_t> frame, int block) {
  if (frame.size() != static_cast<std::size_t>(kFrameSide * kFrameSide)) {
    throw Error(ErrorCode::kWrongDimensions, "frame must be 64x64, got " +
                                                 std::to_string(frame.size()) + " pixels");
  }
  Eigen::MatrixXd image(kFrameSide, kFrameSide);
  for (int y = 0; y < kFrameSide; ++y) {
    for (int x = 0; x < kFrameSide; ++x) image(y, x) = frame[y * kFrameSide + x] / 255.0;
  }
  return dct_lowfreq(image, block);
}

Eigen::MatrixXd frame_features(const FrameSequence& seq, int block) {
  check_block(block);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(seq.frames.size()), block * block);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    if (seq.width == kFrameSide && seq.height == kFrameSide) {
      out.row(static_cast<Eigen::Index>(i)) = dct_features(seq.frames[i], block);
    } else {
      RawFrame raw{seq.width, seq.height, 1, seq.frames[i]};
      out.row(static_cast<Eigen::Index>(i)) = dct_features(downscale_gray64(raw), block);
    }
  }
  return out;
}

FeatureSequence drop_alternate(const Eigen::MatrixXd& full_rate, std::string video_id) {
  if (full_rate.rows() == 0) throw Error(ErrorCode::kEmptySequence, "no frames to drop from");
  const Eigen::Index kept = (full_rate.rows() + 1) / 2;
  FeatureSequence out;
  out.video_id = std::move(video_id);
  out.features.resize(kept, full_rate.cols());
  for (Eigen::Index i = 0; i < kept; ++i) out.features.row(i) = full_rate.row(2 * i);
  return out;
}

FeatureSequence extract_features(const FrameSequence& seq, std::string video_id, int block) {
  return drop_alternate(frame_features(resample_to_25fps(seq), block), std::move(video_id));
}

NormStats compute_norm_stats(std::span<const FeatureSequence> train) {
  if (train.empty()) throw Error(ErrorCode::kEmptyTrainSet, "no training sequences");
  const Eigen::Index dim = train.front().dim();
  // Welford accumulation over every frame of every sequence.
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(dim);
  Eigen::RowVectorXd m2 = Eigen::RowVectorXd::Zero(dim);
  double count = 0.0;
  for (const auto& seq : train) {
    if (seq.normalized) throw Error(ErrorCode::kDoubleNormalize, seq.video_id + " is already normalized");
    if (seq.dim() != dim) throw Error(ErrorCode::kDimensionMismatch, seq.video_id);
    for (Eigen::Index r = 0; r < seq.frame_count(); ++r) {
      count += 1.0;
      const Eigen::RowVectorXd delta = seq.features.row(r) - mean;
      mean += delta / count;
      m2.array() += delta.array() * (seq.features.row(r) - mean).array();
    }
  }
  if (count == 0.0) throw Error(ErrorCode::kEmptyTrainSet, "training sequences have no frames");
  NormStats stats;
  stats.mean = mean;
  stats.std = (m2.array() / count).sqrt().max(kStdFloor).matrix();
  return stats;
}

FeatureSequence normalize(const FeatureSequence& seq, const NormStats& stats) {
  if (seq.dim() != stats.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature dim " + std::to_string(seq.dim()) +
                                                   " vs stats dim " + std::to_string(stats.dim()));
  }
  if (seq.normalized) throw Error(ErrorCode::kDoubleNormalize, seq.video_id);
  FeatureSequence out = seq;
  out.features = ((seq.features.rowwise() - stats.mean).array().rowwise() / stats.std.array()).matrix();
  out.normalized = true;
  return out;
}

FeatureSequence denormalize(const FeatureSequence& seq, const NormStats& stats) {
  if (seq.dim() != stats.dim()) throw Error(ErrorCode::kDimensionMismatch, seq.video_id);
  FeatureSequence out = seq;
  out.features = ((seq.features.array().rowwise() * stats.std.array()).rowwise() + stats.mean.array()).matrix();
  out.normalized = false;
  return out;
}

FeatureSequence load_feat(const std::filesystem::path& path) {
  auto in = ByteReader::from_file(path);
  in.expect_magic("FEAT");
  if (auto v = in.u8(); v != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "FEAT version " + std::to_string(v));
  }
  FeatureSequence seq;
  seq.video_id = path.stem().string();
  seq.normalized = in.u8() != 0;
  const std::uint32_t dim = in.u32();
  const std::uint32_t rows = in.u32();
  if (in.remaining() < static_cast<std::size_t>(dim) * rows * 4) {
    throw Error(ErrorCode::kTruncatedFile, path.string());
  }
  seq.features.resize(rows, dim);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < dim; ++c) seq.features(r, c) = in.f32();
  }
  return seq;
}

void save_feat(const FeatureSequence& seq, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("FEAT");
  out.u8(kFormatVersion);
  out.u8(seq.normalized ? 1 : 0);
  out.u32(static_cast<std::uint32_t>(seq.dim()));
  out.u32(static_cast<std::uint32_t>(seq.frame_count()));
  for (Eigen::Index r = 0; r < seq.frame_count(); ++r) {
    for (Eigen::Index c = 0; c < seq.dim(); ++c) out.f32(static_cast<float>(seq.features(r, c)));
  }
  out.save(path);
}

NormStats load_nrm(const std::filesystem::path& path) {
  auto in = ByteReader::from_file(path);
  in.expect_magic("NRM1");
  if (auto v = in.u8(); v != kFormatVersion) {
    throw Error(ErrorCode::kUnsupportedVersion, "NRM1 version " + std::to_string(v));
  }
  const std::uint32_t dim = in.u32();
  NormStats stats;
  stats.mean.resize(dim);
  stats.std.resize(dim);
  for (std::uint32_t i = 0; i < dim; ++i) stats.mean(i) = in.f32();
  for (std::uint32_t i = 0; i < dim; ++i) stats.std(i) = in.f32();
  return stats;
}

void save_nrm(const NormStats& stats, const std::filesystem::path& path) {
  ByteWriter out;
  out.magic("NRM1");
  out.u8(kFormatVersion);
  out.u32(static_cast<std::uint32_t>(stats.dim()));
  for (Eigen::Index i = 0; i < stats.dim(); ++i) out.f32(static_cast<float>(stats.mean(i)));
  for (Eigen::Index i = 0; i < stats.dim(); ++i) out.f32(static_cast<float>(stats.std(i)));
  out.save(path);
}

}  // namespace vhash
