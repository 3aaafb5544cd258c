#include "vhash/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vhash/error.hpp"

namespace vhash {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kEmptyFrame: return "EmptyFrame";
    case ErrorCode::kWrongDimensions: return "WrongDimensions";
    case ErrorCode::kEmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDoubleNormalize: return "DoubleNormalize";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUnseenTimestepInTraining: return "UnseenTimestepInTraining";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNonDeterministicLoss: return "NonDeterministicLoss";
    case ErrorCode::kEmptyCodes: return "EmptyCodes";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kBatchTooSmall: return "BatchTooSmall";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kBadRange: return "BadRange";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kModeMismatch: return "ModeMismatch";
    case ErrorCode::kEmptyEntry: return "EmptyEntry";
    case ErrorCode::kEmptyQuery: return "EmptyQuery";
    case ErrorCode::kEmptyDatabase: return "EmptyDatabase";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kZeroDuration: return "ZeroDuration";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

void ByteWriter::magic(std::string_view tag) {
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<std::uint8_t>(v >> s));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::bytes(std::span<const std::uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

void ByteWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  return ByteReader(read_file_bytes(path));
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(ErrorCode::kTruncatedFile, "need " + std::to_string(n) + " bytes, have " +
                                               std::to_string(remaining()));
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  if (remaining() < tag.size() || std::memcmp(buf_.data() + pos_, tag.data(), tag.size()) != 0) {
    throw Error(ErrorCode::kBadMagic, "expected magic " + std::string(tag));
  }
  pos_ += tag.size();
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  auto v = static_cast<std::uint16_t>(buf_[pos_] | (buf_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  std::span<const std::uint8_t> out(buf_.data() + pos_, n);
  pos_ += n;
  return out;
}

}  // namespace vhash
