#include "vhash/hashing.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "vhash/error.hpp"

namespace vhash {

int hamming(const BitCode& a, const BitCode& b) {
  int d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

std::string_view to_string(HashMode mode) {
  switch (mode) {
    case HashMode::kEvents: return "events";
    case HashMode::kSample: return "sample";
    case HashMode::kSampleAndEvents: return "sample_and_events";
  }
  return "unknown";
}

HashMode parse_hash_mode(std::string_view name) {
  if (name == "events") return HashMode::kEvents;
  if (name == "sample") return HashMode::kSample;
  if (name == "sample_and_events") return HashMode::kSampleAndEvents;
  throw Error(ErrorCode::kInvalidArgument, "unknown hash mode '" + std::string(name) + "'");
}

std::vector<Eigen::Index> detect_event_ends(const Eigen::VectorXi& d_series, const EventDetectConfig& cfg,
                                            Eigen::Index encoder_steps) {
  if (encoder_steps < 1 || d_series.size() != encoder_steps - 1) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(d_series.size()) + " transitions for " +
                                                std::to_string(encoder_steps) + " steps");
  }
  std::vector<Eigen::Index> ends;
  Eigen::Index last_end = 0;
  double window_sum = 0.0;
  for (Eigen::Index t = 1; t < encoder_steps; ++t) {
    const int d = d_series(t - 1);
    bool is_end = d >= cfg.threshold;
    if (!is_end && t - 1 >= cfg.window) {
      is_end = d > cfg.multiplier * (window_sum / cfg.window);
    }
    if (is_end && t - last_end >= cfg.min_event_length) {
      ends.push_back(t);
      last_end = t;
    }
    window_sum += d;
    if (t - 1 >= cfg.window) window_sum -= d_series(t - 1 - cfg.window);
  }
  ends.push_back(encoder_steps);
  return ends;
}

BitCode pool_event_hash(const Eigen::MatrixXd& codes, Eigen::Index event_end, Eigen::Index prev_end, int pool_size) {
  if (prev_end < 0 || prev_end >= event_end || event_end > codes.rows() || pool_size < 1) {
    throw Error(ErrorCode::kBadRange, "event (" + std::to_string(prev_end) + ", " + std::to_string(event_end) +
                                          "] outside " + std::to_string(codes.rows()) + " steps");
  }
  const Eigen::Index rows = std::min<Eigen::Index>(pool_size, event_end - prev_end);
  const Eigen::Index first = event_end - rows;
  BitCode out(words_for_bits(codes.cols()), 0);
  for (Eigen::Index u = 0; u < codes.cols(); ++u) {
    Eigen::Index ones = 0;
    for (Eigen::Index r = first; r < event_end; ++r) ones += codes(r, u) >= 0.0;
    if (2 * ones >= rows) out[u / 64] |= std::uint64_t{1} << (u % 64);
  }
  return out;
}

double encoder_step_time(Eigen::Index step, double fps) { return kEncoderStepFrames * step / fps; }

Eigen::Index sample_interval_steps(double sample_seconds, double fps) {
  return static_cast<Eigen::Index>(std::llround(sample_seconds * fps / kEncoderStepFrames));
}

std::vector<Eigen::Index> sample_ends(Eigen::Index encoder_steps, double sample_seconds) {
  if (sample_seconds <= 0) throw Error(ErrorCode::kInvalidArgument, "sampling interval must be positive");
  std::vector<Eigen::Index> ends;
  // The n-th sampling instant n*T_s converted to encoder steps; rounding each
  // instant (rather than accumulating a rounded interval) keeps exactly one
  // code per T_s on long videos.
  for (long n = 1;; ++n) {
    const Eigen::Index step = sample_interval_steps(n * sample_seconds);
    if (step >= encoder_steps) break;
    if (step >= 1 && (ends.empty() || step > ends.back())) ends.push_back(step);
  }
  ends.push_back(encoder_steps);
  return ends;
}

std::vector<Eigen::Index> densify_ends(const std::vector<Eigen::Index>& event_ends, Eigen::Index interval) {
  if (interval < 1) throw Error(ErrorCode::kInvalidArgument, "sampling interval below one encoder step");
  std::vector<Eigen::Index> out;
  Eigen::Index prev = 0;
  for (Eigen::Index end : event_ends) {
    while (end - prev >= 2 * interval) {
      prev += interval;
      out.push_back(prev);
    }
    out.push_back(end);
    prev = end;
  }
  return out;
}

VideoHash hash_video(const EncodeResult& encoded, HashMode mode, const EventDetectConfig& cfg, double sample_seconds,
                     std::string video_id, double duration_seconds) {
  const Eigen::Index steps = encoded.steps();
  if (steps < 1) throw Error(ErrorCode::kEmptyCodes, video_id);
  VideoHash vh;
  vh.video_id = std::move(video_id);
  vh.bits = encoded.bits_per_step();
  vh.mode = mode;
  vh.duration_seconds = duration_seconds;
  switch (mode) {
    case HashMode::kEvents:
      vh.end_steps = detect_event_ends(encoded.d_series, cfg, steps);
      break;
    case HashMode::kSample:
      vh.end_steps = sample_ends(steps, sample_seconds);
      break;
    case HashMode::kSampleAndEvents:
      vh.end_steps = densify_ends(detect_event_ends(encoded.d_series, cfg, steps),
                                  sample_interval_steps(sample_seconds));
      break;
  }
  Eigen::Index prev = 0;
  for (Eigen::Index end : vh.end_steps) {
    vh.events.push_back(pool_event_hash(encoded.codes, end, prev, cfg.pool_size));
    prev = end;
  }
  return vh;
}

void emit_d_series(std::ostream& out, const EncodeResult& encoded, const EventDetectConfig& cfg) {
  const auto ends = detect_event_ends(encoded.d_series, cfg, encoded.steps());
  out << "step,d_t,is_event_end\n";
  for (Eigen::Index t = 1; t < encoded.steps(); ++t) {
    const bool flagged = std::binary_search(ends.begin(), ends.end(), t);
    out << t << ',' << encoded.d_series(t - 1) << ',' << (flagged ? 1 : 0) << '\n';
  }
}

std::string to_hex(const BitCode& code, Eigen::Index bits) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  for (Eigen::Index byte = 0; byte < (bits + 7) / 8; ++byte) {
    const auto v = static_cast<unsigned>((code[byte / 8] >> (8 * (byte % 8))) & 0xffu);
    out.push_back(kDigits[v >> 4]);
    out.push_back(kDigits[v & 0xf]);
  }
  return out;
}

BitCode from_hex(std::string_view hex, Eigen::Index bits) {
  if (static_cast<Eigen::Index>(hex.size()) != 2 * ((bits + 7) / 8)) {
    throw Error(ErrorCode::kLengthMismatch, "hex code '" + std::string(hex) + "' is not " + std::to_string(bits) +
                                                " bits");
  }
  auto nibble = [&](char c) -> std::uint64_t {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw Error(ErrorCode::kInvalidArgument, "bad hex digit");
  };
  BitCode code(words_for_bits(bits), 0);
  for (std::size_t byte = 0; byte < hex.size() / 2; ++byte) {
    const std::uint64_t v = nibble(hex[2 * byte]) << 4 | nibble(hex[2 * byte + 1]);
    code[byte / 8] |= v << (8 * (byte % 8));
  }
  return code;
}

void write_video_hash(std::ostream& out, const VideoHash& vh) {
  char duration[64];
  std::snprintf(duration, sizeof duration, "%.17g", vh.duration_seconds);
  out << "# vhash id=" << vh.video_id << " L=" << vh.bits << " mode=" << to_string(vh.mode)
      << " duration=" << duration << '\n';
  for (std::size_t e = 0; e < vh.events.size(); ++e) {
    out << vh.end_steps[e] << ' ' << to_hex(vh.events[e], vh.bits) << '\n';
  }
}

VideoHash read_video_hash(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("# vhash ", 0) != 0) {
    throw Error(ErrorCode::kBadMagic, "missing '# vhash' header line");
  }
  VideoHash vh;
  std::istringstream fields(header.substr(8));
  std::string kv;
  while (fields >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "bad header field " + kv);
    const std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key == "id") vh.video_id = value;
    else if (key == "L") vh.bits = std::stol(value);
    else if (key == "mode") vh.mode = parse_hash_mode(value);
    else if (key == "duration") vh.duration_seconds = std::stod(value);
  }
  if (vh.bits < 1) throw Error(ErrorCode::kInvalidArgument, "header lacks L");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    Eigen::Index end = 0;
    std::string hex;
    if (!(row >> end >> hex)) throw Error(ErrorCode::kInvalidArgument, "bad event line '" + line + "'");
    vh.end_steps.push_back(end);
    vh.events.push_back(from_hex(hex, vh.bits));
  }
  if (vh.events.empty()) throw Error(ErrorCode::kEmptyCodes, "hash file has no events");
  return vh;
}

}  // namespace vhash
