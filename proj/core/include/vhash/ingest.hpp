#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vhash {

inline constexpr int kFrameSide = 64;
inline constexpr int kTargetFps = 25;
inline constexpr int kDefaultDctBlock = 32;

struct Fps {
  std::uint32_t num = kTargetFps;
  std::uint32_t den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Grayscale (1 channel) or interleaved RGB (3 channel) 8-bit image.
struct RawFrame {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

using GrayFrame = std::vector<std::uint8_t>;

struct FrameSequence {
  int width = kFrameSide;
  int height = kFrameSide;
  Fps fps;
  std::vector<GrayFrame> frames;

  double duration_seconds() const { return static_cast<double>(frames.size()) / fps.value(); }
};

// One row per frame, D columns.
struct FeatureSequence {
  std::string video_id;
  Eigen::MatrixXd features;
  bool normalized = false;

  Eigen::Index frame_count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;
  Eigen::Index dim() const { return mean.size(); }
};

inline constexpr double kStdFloor = 1e-8;

FrameSequence load_fseq(const std::filesystem::path& path);
void save_fseq(const FrameSequence& seq, const std::filesystem::path& path);

// Nearest-index frame-rate conversion to 25 fps.
FrameSequence resample_to_25fps(const FrameSequence& seq);

GrayFrame downscale_gray64(const RawFrame& frame);

// Orthonormal 2-D DCT-II of a 64x64 real image; returns the top-left
// block x block coefficients row-major with the DC term zeroed.
Eigen::RowVectorXd dct_lowfreq(const Eigen::MatrixXd& image, int block = kDefaultDctBlock);
// Maps pixels to [0,1] and applies dct_lowfreq.
Eigen::RowVectorXd dct_features(std::span<const std::uint8_t> frame, int block = kDefaultDctBlock);

// Per-frame features at the stored frame rate (no frame drop). Frames that
// are not 64x64 are box-downscaled first.
Eigen::MatrixXd frame_features(const FrameSequence& seq, int block = kDefaultDctBlock);

FeatureSequence drop_alternate(const Eigen::MatrixXd& full_rate, std::string video_id = {});

// resample -> per-frame DCT -> alternate-frame drop.
FeatureSequence extract_features(const FrameSequence& seq, std::string video_id,
                                 int block = kDefaultDctBlock);

NormStats compute_norm_stats(std::span<const FeatureSequence> train);
FeatureSequence normalize(const FeatureSequence& seq, const NormStats& stats);
FeatureSequence denormalize(const FeatureSequence& seq, const NormStats& stats);

FeatureSequence load_feat(const std::filesystem::path& path);
void save_feat(const FeatureSequence& seq, const std::filesystem::path& path);
NormStats load_nrm(const std::filesystem::path& path);
void save_nrm(const NormStats& stats, const std::filesystem::path& path);

}  // namespace vhash
