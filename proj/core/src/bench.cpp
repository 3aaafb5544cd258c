#include "vhash/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <mutex>
#include <thread>

#include "vhash/error.hpp"

namespace vhash {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Rect {
  double x, y, w, h, vx, vy, level;
};

struct Shot {
  int kind = 0;
  double base = 0, contrast = 0;
  double angle = 0, freq = 0, velocity = 0;  // gradient
  std::vector<Rect> rects;                   // rectangles
  double fx[2]{}, fy[2]{}, omega[2]{}, phase[2]{}, amp[2]{};  // sinusoids
};

Shot random_shot(std::mt19937_64& rng) {
  Shot s;
  s.kind = static_cast<int>(uniform_index(rng, 3));
  s.base = uniform(rng, 50.0, 200.0);
  s.contrast = uniform(rng, 25.0, 70.0);
  switch (s.kind) {
    case 0:
      s.angle = uniform(rng, 0.0, kTwoPi);
      s.freq = uniform(rng, 0.5, 3.0);
      s.velocity = uniform(rng, -1.0, 1.0);
      break;
    case 1: {
      const auto n = 1 + uniform_index(rng, 4);
      for (std::uint64_t k = 0; k < n; ++k) {
        s.rects.push_back({uniform(rng, 0.0, 64.0), uniform(rng, 0.0, 64.0), uniform(rng, 8.0, 32.0),
                           uniform(rng, 8.0, 32.0), uniform(rng, -20.0, 20.0), uniform(rng, -20.0, 20.0),
                           uniform(rng, 0.0, 255.0)});
      }
      break;
    }
    default:
      for (int k = 0; k < 2; ++k) {
        s.fx[k] = uniform(rng, 0.5, 4.0);
        s.fy[k] = uniform(rng, 0.5, 4.0);
        s.omega[k] = uniform(rng, 0.2, 2.0);
        s.phase[k] = uniform(rng, 0.0, kTwoPi);
        s.amp[k] = uniform(rng, 0.4, 1.0);
      }
      break;
  }
  return s;
}

double shot_pixel(const Shot& s, double x, double y, double t) {
  switch (s.kind) {
    case 0: {
      const double u = (x * std::cos(s.angle) + y * std::sin(s.angle)) / kFrameSide;
      return s.base + s.contrast * std::sin(kTwoPi * (s.freq * u - s.velocity * t));
    }
    case 1: {
      double v = s.base;
      for (const Rect& r : s.rects) {
        const double rx = std::fmod(std::fmod(r.x + r.vx * t, kFrameSide) + kFrameSide, kFrameSide);
        const double ry = std::fmod(std::fmod(r.y + r.vy * t, kFrameSide) + kFrameSide, kFrameSide);
        const double dx = std::fmod(x - rx + kFrameSide, kFrameSide);
        const double dy = std::fmod(y - ry + kFrameSide, kFrameSide);
        if (dx < r.w && dy < r.h) v = r.level;
      }
      return v;
    }
    default: {
      double v = s.base;
      for (int k = 0; k < 2; ++k) {
        v += s.contrast * s.amp[k] *
             std::sin(kTwoPi * (s.fx[k] * x / kFrameSide + s.fy[k] * y / kFrameSide + s.omega[k] * t) + s.phase[k]);
      }
      return v;
    }
  }
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

void write_value(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
    return;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out << buf;
}

}  // namespace

FrameSequence synth_video(std::uint64_t seed, double duration_seconds, int fps) {
  if (duration_seconds < 4.0) throw Error(ErrorCode::kTooShort, "synthetic videos last at least 4 s");
  if (fps < 1) throw Error(ErrorCode::kInvalidArgument, "fps must be positive");
  std::mt19937_64 rng(seed);
  FrameSequence seq;
  seq.fps = Fps{static_cast<std::uint32_t>(fps), 1};
  const auto total = static_cast<long>(std::llround(duration_seconds * fps));
  seq.frames.reserve(total);
  long frame = 0;
  while (frame < total) {
    const Shot shot = random_shot(rng);
    const auto length = static_cast<long>(std::llround(uniform(rng, 2.0, 8.0) * fps));
    for (long k = 0; k < length && frame < total; ++k, ++frame) {
      const double t = static_cast<double>(k) / fps;
      GrayFrame img(kFrameSide * kFrameSide);
      for (int y = 0; y < kFrameSide; ++y) {
        for (int x = 0; x < kFrameSide; ++x) {
          const double v = std::clamp(std::floor(shot_pixel(shot, x, y, t) + 0.5), 0.0, 255.0);
          img[y * kFrameSide + x] = static_cast<std::uint8_t>(v);
        }
      }
      seq.frames.push_back(std::move(img));
    }
  }
  return seq;
}

std::vector<SynthVideo> synth_corpus_plan(std::uint64_t seed, int count, int min_seconds, int max_seconds) {
  if (min_seconds < 4 || max_seconds < min_seconds) {
    throw Error(ErrorCode::kTooShort, "durations must satisfy 4 <= min <= max");
  }
  std::mt19937_64 rng(seed);
  std::vector<SynthVideo> plan;
  for (int i = 0; i < count; ++i) {
    SynthVideo v;
    char id[32];
    std::snprintf(id, sizeof id, "vid%04d", i);
    v.id = id;
    v.seed = rng();
    v.duration_seconds =
        min_seconds + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_seconds - min_seconds + 1)));
    plan.push_back(std::move(v));
  }
  return plan;
}

std::vector<CopySpec> make_copies(double source_duration, double min_copy, double min_slide,
                                  const std::string& source_id) {
  if (min_copy <= 0 || min_slide <= 0) throw Error(ErrorCode::kInvalidArgument, "copy grid must be positive");
  if (source_duration < min_copy) throw Error(ErrorCode::kTooShort, "video shorter than the minimum copy");
  std::vector<CopySpec> out;
  for (int c = 1; c * min_copy <= source_duration; ++c) {
    const double length = c * min_copy;
    for (int s = 0; s * min_slide + length <= source_duration; ++s) {
      const double slide = s * min_slide;
      for (int m = 0; slide + m * length + length <= source_duration; ++m) {
        out.push_back({source_id, slide, slide + m * length, length, source_duration});
      }
    }
  }
  return out;
}

FrameSequence crop_frames(const FrameSequence& seq, const CopySpec& spec) {
  const double fps = seq.fps.value();
  const auto first = static_cast<long>(std::llround(spec.start * fps));
  const auto last = static_cast<long>(std::llround((spec.start + spec.duration) * fps));
  if (spec.start < 0 || first >= last || last > static_cast<long>(seq.frames.size())) {
    throw Error(ErrorCode::kOutOfRange, "copy [" + std::to_string(spec.start) + ", " +
                                            std::to_string(spec.start + spec.duration) + ") s outside video");
  }
  FrameSequence out;
  out.width = seq.width;
  out.height = seq.height;
  out.fps = seq.fps;
  out.frames.assign(seq.frames.begin() + first, seq.frames.begin() + last);
  return out;
}

double topk_accuracy(const std::vector<RankedResult>& results, std::size_t k) {
  if (results.empty()) return nan();
  std::size_t hits = 0;
  for (const auto& r : results) {
    const auto end = r.ranked.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.ranked.size()));
    hits += std::find(r.ranked.begin(), end, r.true_id) != end;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double ahl(const VideoHash& vh) {
  if (!(vh.duration_seconds > 0)) throw Error(ErrorCode::kZeroDuration, vh.video_id);
  return static_cast<double>(vh.events.size()) * static_cast<double>(vh.bits) * 5.0 / vh.duration_seconds;
}

std::size_t duration_bucket(double seconds) {
  if (seconds < 10.0) return 0;
  if (seconds >= 50.0) return kDurationBuckets.size() - 1;
  return static_cast<std::size_t>((seconds - 10.0) / 5.0) + 1;
}

FeatureSequence features_for_range(const EvalVideo& video, Eigen::Index first, Eigen::Index count,
                                   const NormStats& stats) {
  if (first < 0 || count < 1 || first + count > video.frame_features.rows()) {
    throw Error(ErrorCode::kOutOfRange, video.id + ": frame range outside video");
  }
  return normalize(drop_alternate(video.frame_features.middleRows(first, count), video.id), stats);
}

HashDatabase build_database(const std::vector<EvalVideo>& videos, const Model& model, const NormStats& stats,
                            HashMode mode, const EvalConfig& cfg) {
  HashDatabase db(model.hash_bits(), mode);
  for (const auto& v : videos) {
    const auto feats = features_for_range(v, 0, v.frame_features.rows(), stats);
    db.add(hash_video(encode_frozen(model, feats.features), mode, cfg.detect, cfg.sample_seconds, v.id,
                      v.duration_seconds));
  }
  return db;
}

EvalReport run_eval(const std::vector<EvalVideo>& videos, const std::vector<CopySpec>& queries, const Model& model,
                    const NormStats& stats, const EvalConfig& cfg) {
  EvalReport report;
  std::vector<HashDatabase> dbs;
  for (HashMode mode : cfg.modes) dbs.push_back(build_database(videos, model, stats, mode, cfg));

  // results[q][m]: ranked ids and the query's hash AHL.
  struct QueryOutcome {
    std::vector<std::string> ranked;
    double ahl = 0.0;
  };
  std::vector<std::vector<QueryOutcome>> outcomes(queries.size(), std::vector<QueryOutcome>(cfg.modes.size()));
  auto work = [&](std::size_t q) {
    const CopySpec& spec = queries[q];
    const auto src = std::find_if(videos.begin(), videos.end(), [&](const EvalVideo& v) { return v.id == spec.source_id; });
    if (src == videos.end()) throw Error(ErrorCode::kInvalidArgument, "copy of unknown video " + spec.source_id);
    const auto first = static_cast<Eigen::Index>(std::llround(spec.start * kTargetFps));
    const auto count = static_cast<Eigen::Index>(std::llround(spec.duration * kTargetFps));
    const auto feats = features_for_range(*src, first, count, stats);
    const EncodeResult enc = encode_frozen(model, feats.features);
    for (std::size_t m = 0; m < cfg.modes.size(); ++m) {
      const VideoHash vh = hash_video(enc, cfg.modes[m], cfg.detect, cfg.sample_seconds, spec.source_id, spec.duration);
      for (const Match& match : query_topk(dbs[m], vh, cfg.k_max)) outcomes[q][m].ranked.push_back(match.video_id);
      outcomes[q][m].ahl = ahl(vh);
    }
  };
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers == 1 || queries.size() < 2) {
    for (std::size_t q = 0; q < queries.size(); ++q) work(q);
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t q = w; q < queries.size(); q += workers) {
          try {
            work(q);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  report.queries = queries.size();
  for (const auto& spec : queries) report.queries_slide2mod4 += std::fmod(spec.slide, 4.0) == 2.0;
  for (std::size_t m = 0; m < cfg.modes.size(); ++m) {
    ModeReport mr;
    mr.mode = cfg.modes[m];
    std::vector<RankedResult> all, restricted;
    std::vector<std::vector<RankedResult>> by_bucket(kDurationBuckets.size()), by_bucket_r(kDurationBuckets.size());
    std::vector<double> ahl_sum(kDurationBuckets.size(), 0.0), ahl_sum_r(kDurationBuckets.size(), 0.0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      RankedResult r{queries[q].source_id, outcomes[q][m].ranked};
      const std::size_t b = duration_bucket(queries[q].duration);
      all.push_back(r);
      by_bucket[b].push_back(r);
      ahl_sum[b] += outcomes[q][m].ahl;
      if (std::fmod(queries[q].slide, 4.0) == 2.0) {
        restricted.push_back(r);
        by_bucket_r[b].push_back(r);
        ahl_sum_r[b] += outcomes[q][m].ahl;
      }
    }
    for (std::size_t k = 1; k <= cfg.k_max; ++k) {
      mr.topk.push_back(topk_accuracy(all, k));
      mr.topk_slide2mod4.push_back(topk_accuracy(restricted, k));
    }
    for (std::size_t b = 0; b < kDurationBuckets.size(); ++b) {
      const auto n = by_bucket[b].size(), nr = by_bucket_r[b].size();
      mr.buckets.push_back({n ? ahl_sum[b] / n : nan(), topk_accuracy(by_bucket[b], 5), n});
      mr.buckets_slide2mod4.push_back({nr ? ahl_sum_r[b] / nr : nan(), topk_accuracy(by_bucket_r[b], 5), nr});
    }
    report.modes.push_back(std::move(mr));
  }
  return report;
}

void write_topk_csv(std::ostream& out, const EvalReport& report, bool slide2mod4) {
  out << "mode,k,accuracy\n";
  for (const auto& mr : report.modes) {
    const auto& values = slide2mod4 ? mr.topk_slide2mod4 : mr.topk;
    for (std::size_t k = 0; k < values.size(); ++k) {
      out << to_string(mr.mode) << ',' << k + 1 << ',';
      write_value(out, values[k]);
      out << '\n';
    }
  }
}

void write_bucket_csv(std::ostream& out, const EvalReport& report, bool slide2mod4) {
  out << "mode,bucket,ahl,top5\n";
  for (const auto& mr : report.modes) {
    const auto& rows = slide2mod4 ? mr.buckets_slide2mod4 : mr.buckets;
    for (std::size_t b = 0; b < rows.size(); ++b) {
      out << to_string(mr.mode) << ',' << kDurationBuckets[b] << ',';
      write_value(out, rows[b].ahl);
      out << ',';
      write_value(out, rows[b].top5);
      out << '\n';
    }
  }
}

}  // namespace vhash
