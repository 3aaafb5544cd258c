#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "vhash/model.hpp"

namespace vhash {

// L bits packed least-significant-bit first into 64-bit words.
using BitCode = std::vector<std::uint64_t>;

inline std::size_t words_for_bits(Eigen::Index bits) { return static_cast<std::size_t>((bits + 63) / 64); }
inline bool bit_at(const BitCode& code, Eigen::Index u) { return (code[u / 64] >> (u % 64)) & 1u; }
int hamming(const BitCode& a, const BitCode& b);

enum class HashMode : std::uint8_t { kEvents = 0, kSample = 1, kSampleAndEvents = 2 };

std::string_view to_string(HashMode mode);
HashMode parse_hash_mode(std::string_view name);

struct EventDetectConfig {
  int threshold = 16;
  int window = 8;
  double multiplier = 2.0;
  int min_event_length = 3;
  int pool_size = 4;
};

struct VideoHash {
  std::string video_id;
  Eigen::Index bits = 0;
  std::vector<BitCode> events;
  std::vector<Eigen::Index> end_steps;  // 1-based encoder steps
  HashMode mode = HashMode::kEvents;
  double duration_seconds = 0.0;

  bool operator==(const VideoHash&) const = default;
};

inline constexpr double kEncoderStepFrames = 8.0;  // alternate drop x two strides of 2

// Event ends (1-based encoder steps) from the adjacent Hamming series.
// Strictly causal: each decision looks only at d values up to its step.
std::vector<Eigen::Index> detect_event_ends(const Eigen::VectorXi& d_series, const EventDetectConfig& cfg,
                                            Eigen::Index encoder_steps);

// Bitwise majority over the trailing min(P, event length) code rows that end
// at `event_end` (1-based); an even split votes 1.
BitCode pool_event_hash(const Eigen::MatrixXd& codes, Eigen::Index event_end, Eigen::Index prev_end, int pool_size);

double encoder_step_time(Eigen::Index step, double fps = kTargetFps);
// Sampling interval in encoder steps, rounded half away from zero.
Eigen::Index sample_interval_steps(double sample_seconds, double fps = kTargetFps);
std::vector<Eigen::Index> sample_ends(Eigen::Index encoder_steps, double sample_seconds);
std::vector<Eigen::Index> densify_ends(const std::vector<Eigen::Index>& event_ends, Eigen::Index interval);

VideoHash hash_video(const EncodeResult& encoded, HashMode mode, const EventDetectConfig& cfg, double sample_seconds,
                     std::string video_id, double duration_seconds);

// CSV "step,d_t,is_event_end", one row per transition.
void emit_d_series(std::ostream& out, const EncodeResult& encoded, const EventDetectConfig& cfg);

// Debug/interchange text form: a header line then "<end_step> <hex>" per event.
void write_video_hash(std::ostream& out, const VideoHash& vh);
VideoHash read_video_hash(std::istream& in);
std::string to_hex(const BitCode& code, Eigen::Index bits);
BitCode from_hex(std::string_view hex, Eigen::Index bits);

}  // namespace vhash
