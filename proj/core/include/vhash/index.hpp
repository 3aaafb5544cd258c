#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vhash/hashing.hpp"

namespace vhash {

struct DbEntry {
  std::vector<BitCode> events;
  float duration_seconds = 0.0f;

  bool operator==(const DbEntry&) const = default;
};

// Persistent store of video hashes sharing one code length and mode.
class HashDatabase {
 public:
  HashDatabase(Eigen::Index bits, HashMode mode);

  Eigen::Index bits() const { return bits_; }
  HashMode mode() const { return mode_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, DbEntry>& entries() const { return entries_; }

  void add(const VideoHash& vh);

  bool operator==(const HashDatabase&) const = default;

 private:
  Eigen::Index bits_;
  HashMode mode_;
  std::map<std::string, DbEntry> entries_;
};

inline void db_add(HashDatabase& db, const VideoHash& vh) { db.add(vh); }

std::vector<std::uint8_t> serialize_db(const HashDatabase& db);
HashDatabase deserialize_db(std::vector<std::uint8_t> bytes);
void db_save(const HashDatabase& db, const std::filesystem::path& path);
HashDatabase db_load(const std::filesystem::path& path);

// Smallest Hamming distance from `query_event` to any of the entry's events.
int event_min_distance(const BitCode& query_event, const DbEntry& entry);

// Mean over query events of event_min_distance.
double video_distance(const VideoHash& query, const DbEntry& entry);

struct Match {
  std::string video_id;
  double distance = 0.0;
};

// Up to k entries ordered by distance, ties broken by id.
std::vector<Match> query_topk(const HashDatabase& db, const VideoHash& query, std::size_t k);

}  // namespace vhash
