#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "vhash/hashing.hpp"
#include "vhash/index.hpp"
#include "vhash/ingest.hpp"
#include "vhash/model.hpp"

namespace vhash {

// Deterministic procedural video: consecutive 2-8 s shots, each a moving
// pattern (drifting gradient, translating rectangles or oscillating
// sinusoids) with seeded parameters.
FrameSequence synth_video(std::uint64_t seed, double duration_seconds, int fps = kTargetFps);

struct SynthVideo {
  std::string id;
  std::uint64_t seed = 0;
  int duration_seconds = 0;
};

// `count` videos with integer durations drawn from [min_seconds, max_seconds].
std::vector<SynthVideo> synth_corpus_plan(std::uint64_t seed, int count, int min_seconds, int max_seconds);

struct CopySpec {
  std::string source_id;
  double slide = 0.0;
  double start = 0.0;
  double duration = 0.0;         // T_c
  double source_duration = 0.0;  // T_fv

  bool operator==(const CopySpec&) const = default;
};

// Every copy duration T_c in {min_copy, 2 min_copy, ...} and slide s in
// {0, min_slide, ...} with s + T_c <= T_fv; copies tile the video from s.
std::vector<CopySpec> make_copies(double source_duration, double min_copy = 4.0, double min_slide = 2.0,
                                  const std::string& source_id = {});

FrameSequence crop_frames(const FrameSequence& seq, const CopySpec& spec);

struct RankedResult {
  std::string true_id;
  std::vector<std::string> ranked;
};

double topk_accuracy(const std::vector<RankedResult>& results, std::size_t k);

// Hash bits per 5 seconds of video.
double ahl(const VideoHash& vh);

inline constexpr std::array<const char*, 10> kDurationBuckets = {"<10",   "10-15", "15-20", "20-25", "25-30",
                                                                  "30-35", "35-40", "40-45", "45-50", ">50"};
std::size_t duration_bucket(double seconds);

struct BucketRow {
  double ahl = 0.0;
  double top5 = 0.0;
  std::size_t queries = 0;
};

struct ModeReport {
  HashMode mode = HashMode::kEvents;
  std::vector<double> topk;               // k = 1..k_max
  std::vector<double> topk_slide2mod4;
  std::vector<BucketRow> buckets;
  std::vector<BucketRow> buckets_slide2mod4;
};

struct EvalReport {
  std::vector<ModeReport> modes;
  std::size_t queries = 0;
  std::size_t queries_slide2mod4 = 0;
};

struct EvalVideo {
  std::string id;
  Eigen::MatrixXd frame_features;  // per frame at 25 fps, not normalized
  double duration_seconds = 0.0;
};

struct EvalConfig {
  double sample_seconds = 4.0;
  std::size_t k_max = 10;
  EventDetectConfig detect;
  std::vector<HashMode> modes{HashMode::kSample, HashMode::kEvents, HashMode::kSampleAndEvents};
};

// Hashes each database video and each query copy (copies are cut from the
// source's per-frame features, which equals cropping the frames first since
// features are per frame), queries every mode's database and aggregates
// top-k accuracy and per-duration AHL / top-5.
EvalReport run_eval(const std::vector<EvalVideo>& videos, const std::vector<CopySpec>& queries, const Model& model,
                    const NormStats& stats, const EvalConfig& cfg);

void write_topk_csv(std::ostream& out, const EvalReport& report, bool slide2mod4);
void write_bucket_csv(std::ostream& out, const EvalReport& report, bool slide2mod4);

// Database-side hashes for one mode.
HashDatabase build_database(const std::vector<EvalVideo>& videos, const Model& model, const NormStats& stats,
                            HashMode mode, const EvalConfig& cfg);

// Normalized, alternate-dropped features for frames [first, first + count).
FeatureSequence features_for_range(const EvalVideo& video, Eigen::Index first, Eigen::Index count,
                                   const NormStats& stats);

}  // namespace vhash
