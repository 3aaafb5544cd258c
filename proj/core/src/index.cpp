#include "vhash/index.hpp"

#include <algorithm>
#include <limits>

#include "vhash/binary_io.hpp"
#include "vhash/error.hpp"

namespace vhash {
namespace {

constexpr std::uint8_t kVersion = 1;

std::size_t packed_bytes(Eigen::Index bits) { return static_cast<std::size_t>((bits + 7) / 8); }

}  // namespace

HashDatabase::HashDatabase(Eigen::Index bits, HashMode mode) : bits_(bits), mode_(mode) {
  if (bits < 1) throw Error(ErrorCode::kInvalidArgument, "code length must be positive");
}

void HashDatabase::add(const VideoHash& vh) {
  if (vh.bits != bits_) {
    throw Error(ErrorCode::kLengthMismatch, vh.video_id + " has L=" + std::to_string(vh.bits) + ", database L=" +
                                                std::to_string(bits_));
  }
  if (vh.mode != mode_) {
    throw Error(ErrorCode::kModeMismatch, vh.video_id + " is " + std::string(to_string(vh.mode)) + ", database is " +
                                              std::string(to_string(mode_)));
  }
  if (vh.events.empty()) throw Error(ErrorCode::kEmptyEntry, vh.video_id);
  if (entries_.contains(vh.video_id)) throw Error(ErrorCode::kDuplicateId, vh.video_id);
  entries_.emplace(vh.video_id, DbEntry{vh.events, static_cast<float>(vh.duration_seconds)});
}

std::vector<std::uint8_t> serialize_db(const HashDatabase& db) {
  ByteWriter out;
  out.magic("VHDB");
  out.u8(kVersion);
  out.u8(static_cast<std::uint8_t>(db.mode()));
  out.u32(static_cast<std::uint32_t>(db.bits()));
  out.u32(static_cast<std::uint32_t>(db.size()));
  const std::size_t nbytes = packed_bytes(db.bits());
  std::vector<std::uint8_t> packed(nbytes);
  for (const auto& [id, entry] : db.entries()) {
    out.u16(static_cast<std::uint16_t>(id.size()));
    out.bytes(std::span(reinterpret_cast<const std::uint8_t*>(id.data()), id.size()));
    out.f32(entry.duration_seconds);
    out.u32(static_cast<std::uint32_t>(entry.events.size()));
    for (const BitCode& code : entry.events) {
      for (std::size_t b = 0; b < nbytes; ++b) packed[b] = static_cast<std::uint8_t>(code[b / 8] >> (8 * (b % 8)));
      out.bytes(packed);
    }
  }
  return out.buffer();
}

HashDatabase deserialize_db(std::vector<std::uint8_t> bytes) {
  ByteReader in(std::move(bytes));
  in.expect_magic("VHDB");
  if (auto v = in.u8(); v != kVersion) throw Error(ErrorCode::kUnsupportedVersion, "VHDB version " + std::to_string(v));
  const std::uint8_t mode = in.u8();
  if (mode > 2) throw Error(ErrorCode::kInvalidArgument, "unknown hash mode " + std::to_string(mode));
  const std::uint32_t bits = in.u32();
  const std::uint32_t count = in.u32();
  HashDatabase db(bits, static_cast<HashMode>(mode));
  const std::size_t nbytes = packed_bytes(bits);
  for (std::uint32_t v = 0; v < count; ++v) {
    VideoHash vh;
    vh.bits = bits;
    vh.mode = db.mode();
    const std::uint16_t id_len = in.u16();
    const auto id = in.bytes(id_len);
    vh.video_id.assign(id.begin(), id.end());
    vh.duration_seconds = in.f32();
    const std::uint32_t events = in.u32();
    if (in.remaining() < static_cast<std::size_t>(events) * nbytes) throw Error(ErrorCode::kTruncatedFile, vh.video_id);
    for (std::uint32_t e = 0; e < events; ++e) {
      const auto packed = in.bytes(nbytes);
      BitCode code(words_for_bits(bits), 0);
      for (std::size_t b = 0; b < nbytes; ++b) code[b / 8] |= std::uint64_t{packed[b]} << (8 * (b % 8));
      vh.events.push_back(std::move(code));
      vh.end_steps.push_back(e + 1);
    }
    db.add(vh);
  }
  return db;
}

void db_save(const HashDatabase& db, const std::filesystem::path& path) {
  ByteWriter out;
  out.bytes(serialize_db(db));
  out.save(path);
}

HashDatabase db_load(const std::filesystem::path& path) { return deserialize_db(read_file_bytes(path)); }

int event_min_distance(const BitCode& query_event, const DbEntry& entry) {
  if (entry.events.empty()) throw Error(ErrorCode::kEmptyEntry, "database video has no events");
  int best = std::numeric_limits<int>::max();
  for (const BitCode& code : entry.events) best = std::min(best, hamming(query_event, code));
  return best;
}

double video_distance(const VideoHash& query, const DbEntry& entry) {
  if (query.events.empty()) throw Error(ErrorCode::kEmptyQuery, query.video_id);
  long sum = 0;
  for (const BitCode& q : query.events) sum += event_min_distance(q, entry);
  return static_cast<double>(sum) / static_cast<double>(query.events.size());
}

std::vector<Match> query_topk(const HashDatabase& db, const VideoHash& query, std::size_t k) {
  if (db.empty()) throw Error(ErrorCode::kEmptyDatabase, "query against empty database");
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (query.bits != db.bits()) throw Error(ErrorCode::kLengthMismatch, "query code length differs from database");
  std::vector<Match> all;
  all.reserve(db.size());
  for (const auto& [id, entry] : db.entries()) all.push_back({id, video_distance(query, entry)});
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                    [](const Match& a, const Match& b) {
                      return a.distance != b.distance ? a.distance < b.distance : a.video_id < b.video_id;
                    });
  all.resize(keep);
  return all;
}

}  // namespace vhash
