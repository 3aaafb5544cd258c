#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "vhash/binary_io.hpp"
#include "vhash/error.hpp"
#include "vhash/index.hpp"

using namespace vhash;

namespace {

BitCode from_string(const std::string& bits) {
  BitCode c(words_for_bits(static_cast<Eigen::Index>(bits.size())), 0);
  for (std::size_t u = 0; u < bits.size(); ++u) {
    if (bits[u] == '1') c[u / 64] |= std::uint64_t{1} << (u % 64);
  }
  return c;
}

BitCode random_code(std::mt19937_64& rng, Eigen::Index bits) {
  BitCode c(words_for_bits(bits), 0);
  for (Eigen::Index u = 0; u < bits; ++u) c[u / 64] |= (rng() & 1u) << (u % 64);
  return c;
}

VideoHash random_hash(std::mt19937_64& rng, const std::string& id, Eigen::Index bits, HashMode mode = HashMode::kEvents) {
  VideoHash vh;
  vh.video_id = id;
  vh.bits = bits;
  vh.mode = mode;
  const int events = 1 + static_cast<int>(uniform_index(rng, 6));
  for (int e = 0; e < events; ++e) {
    vh.events.push_back(random_code(rng, bits));
    vh.end_steps.push_back(e + 1);
  }
  vh.duration_seconds = static_cast<float>(0.32 * events);
  return vh;
}

int brute_hamming(const BitCode& a, const BitCode& b, Eigen::Index bits) {
  int d = 0;
  for (Eigen::Index u = 0; u < bits; ++u) d += bit_at(a, u) != bit_at(b, u);
  return d;
}

double brute_distance(const VideoHash& q, const DbEntry& e, Eigen::Index bits) {
  double sum = 0;
  for (const auto& qe : q.events) {
    int best = 1 << 30;
    for (const auto& de : e.events) best = std::min(best, brute_hamming(qe, de, bits));
    sum += best;
  }
  return sum / static_cast<double>(q.events.size());
}

}  // namespace

TEST_CASE("adding entries") {
  std::mt19937_64 rng(1);
  HashDatabase db(64, HashMode::kEvents);
  db_add(db, random_hash(rng, "a", 64));
  CHECK(db.size() == 1);
  CHECK_THROWS_AS(db_add(db, random_hash(rng, "a", 64)), Error);
  CHECK_THROWS_AS(db_add(db, random_hash(rng, "b", 32)), Error);
  CHECK_THROWS_AS(db_add(db, random_hash(rng, "c", 64, HashMode::kSample)), Error);
  VideoHash empty;
  empty.video_id = "d";
  empty.bits = 64;
  CHECK_THROWS_AS(db_add(db, empty), Error);
  CHECK(db.size() == 1);
}

TEST_CASE("database save and load roundtrip") {
  oracle::TempDir dir("db");
  HashDatabase empty(32, HashMode::kSample);
  db_save(empty, dir / "empty.vhdb");
  CHECK(db_load(dir / "empty.vhdb") == empty);

  std::mt19937_64 rng(2);
  HashDatabase db(70, HashMode::kSampleAndEvents);
  for (int v = 0; v < 100; ++v) db.add(random_hash(rng, "vid" + std::to_string(v), 70, HashMode::kSampleAndEvents));
  db_save(db, dir / "db.vhdb");
  CHECK(db_load(dir / "db.vhdb") == db);

  auto bytes = read_file_bytes(dir / "db.vhdb");
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_db(bytes), Error);
  try {
    deserialize_db(bytes);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBadMagic);
  }
  auto cut = read_file_bytes(dir / "db.vhdb");
  cut.resize(cut.size() - 3);
  try {
    deserialize_db(cut);
    FAIL("truncated database loaded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTruncatedFile);
  }
}

TEST_CASE("event minimum distance") {
  DbEntry entry{{from_string("0110"), from_string("1111")}, 1.0f};
  CHECK(event_min_distance(from_string("1010"), entry) == 2);
  CHECK(event_min_distance(from_string("1111"), entry) == 0);
  CHECK_THROWS_AS(event_min_distance(from_string("1111"), DbEntry{}), Error);
}

TEST_CASE("video distance is the mean of per-event minima") {
  DbEntry entry{{from_string("0000")}, 1.0f};
  VideoHash q;
  q.bits = 4;
  q.events = {from_string("1100"), from_string("1111")};
  CHECK(video_distance(q, entry) == 3.0);
  VideoHash none;
  CHECK_THROWS_AS(video_distance(none, entry), Error);
}

TEST_CASE("distances match brute-force oracles") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index bits = 1 + static_cast<Eigen::Index>(uniform_index(rng, 130));
    const auto q = random_hash(rng, "q", bits);
    const auto d = random_hash(rng, "d", bits);
    const DbEntry entry{d.events, 0.0f};
    REQUIRE(event_min_distance(q.events[0], entry) == brute_distance({"", bits, {q.events[0]}}, entry, bits));
    REQUIRE(video_distance(q, entry) == brute_distance(q, entry, bits));
  }
}

TEST_CASE("top-k ordering, ties and self-retrieval") {
  HashDatabase db(4, HashMode::kEvents);
  auto add = [&](const std::string& id, std::vector<std::string> codes) {
    VideoHash vh;
    vh.video_id = id;
    vh.bits = 4;
    for (const auto& c : codes) vh.events.push_back(from_string(c));
    db.add(vh);
  };
  add("v1", {"1100"});
  add("v2", {"0000"});
  add("v3", {"1111"});
  add("v0", {"1100"});
  VideoHash q;
  q.bits = 4;
  q.events = {from_string("0000"), from_string("1000")};
  const auto r = query_topk(db, q, 2);
  REQUIRE(r.size() == 2);
  CHECK(r[0].video_id == "v2");
  CHECK(r[0].distance == 0.5);
  CHECK(r[1].video_id == "v0");
  CHECK(query_topk(db, q, 10).size() == 4);
  CHECK_THROWS_AS(query_topk(HashDatabase(4, HashMode::kEvents), q, 1), Error);

  q.events = {from_string("1111")};
  const auto self = query_topk(db, q, 1);
  CHECK(self[0].video_id == "v3");
  CHECK(self[0].distance == 0.0);
}

TEST_CASE("top-k equals a naive full scan") {
  std::mt19937_64 rng(4);
  HashDatabase db(16, HashMode::kEvents);
  std::vector<VideoHash> all;
  for (int v = 0; v < 50; ++v) {
    all.push_back(random_hash(rng, "v" + std::to_string(v), 16));
    db.add(all.back());
  }
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = random_hash(rng, "q", 16);
    std::vector<std::pair<double, std::string>> ref;
    for (const auto& vh : all) ref.emplace_back(brute_distance(q, DbEntry{vh.events, 0.0f}, 16), vh.video_id);
    std::sort(ref.begin(), ref.end());
    const auto got = query_topk(db, q, 50);
    REQUIRE(got.size() == 50);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(got[i].video_id == ref[i].second);
      REQUIRE(got[i].distance == ref[i].first);
    }
  }
}
