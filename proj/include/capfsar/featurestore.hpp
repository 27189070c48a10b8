#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "capfsar/tensor.hpp"

namespace capfsar {

// CAPF v1 layout. Every integer is a little-endian uint32, every value a
// little-endian IEEE-754 float32.
//
//   header (32 bytes)
//     "CAPF" | version | T | S | C | record_count | class_count | flags
//   record_count x record
//     id_len | id bytes (UTF-8) | class_id
//     T x (caption_len | caption bytes (UTF-8))
//     visual: T*S*C floats, index (t, s, c)
//     text:   T*C floats,   index (t, c)
//
// class_count is the number of distinct class ids. flags bit 0 marks a
// synthetic store; other bits must be zero.

inline constexpr char kStoreMagic[4] = {'C', 'A', 'P', 'F'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::uint32_t kFlagSynthetic = 1u;
inline constexpr std::size_t kStoreHeaderBytes = 32;

struct StoreHeader {
  std::uint32_t version = kStoreVersion;
  std::uint32_t frames = 0;    // T
  std::uint32_t tokens = 0;    // S
  std::uint32_t channels = 0;  // C
  std::uint32_t record_count = 0;
  std::uint32_t class_count = 0;
  std::uint32_t flags = 0;

  bool synthetic() const { return (flags & kFlagSynthetic) != 0; }
  bool operator==(const StoreHeader&) const = default;
};

/// One video: visual tokens T x S x C, one caption embedding per frame
/// (T x C) and the caption strings those embeddings came from.
struct FeatureRecord {
  std::string video_id;
  std::uint32_t class_id = 0;
  std::uint32_t frames = 0;
  std::uint32_t tokens = 0;
  std::uint32_t channels = 0;
  std::vector<double> visual;
  std::vector<double> text;
  std::vector<std::string> captions;

  Tensor visual_tensor() const;
  Tensor text_tensor() const;
  bool operator==(const FeatureRecord&) const = default;
};

/// An in-memory store with a per-class index over its records.
class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(StoreHeader header, std::vector<FeatureRecord> records);

  const StoreHeader& header() const noexcept { return header_; }
  const std::vector<FeatureRecord>& records() const noexcept { return records_; }
  const FeatureRecord& record(std::size_t i) const { return records_.at(i); }
  std::size_t size() const noexcept { return records_.size(); }

  /// Record indices per class id, in store order.
  const std::map<std::uint32_t, std::vector<std::size_t>>& by_class() const noexcept {
    return by_class_;
  }
  std::vector<std::uint32_t> class_ids() const;

 private:
  StoreHeader header_;
  std::vector<FeatureRecord> records_;
  std::map<std::uint32_t, std::vector<std::size_t>> by_class_;
};

/// Checks that records can form a store (non-empty, homogeneous, finite,
/// unique ids) and returns the header they would be written with.
StoreHeader validate_records(std::span<const FeatureRecord> records, std::uint32_t flags = 0);
/// In-memory store with the same validation as encode_store.
FeatureStore make_store(std::vector<FeatureRecord> records, std::uint32_t flags = 0);

/// Serializes records in CAPF v1. Throws FormatError on an empty or
/// heterogeneous record list.
std::vector<std::uint8_t> encode_store(std::span<const FeatureRecord> records, std::uint32_t flags = 0);
/// Parses and validates a CAPF v1 image. All-or-nothing: either every record
/// is returned or an error is thrown.
FeatureStore decode_store(std::span<const std::uint8_t> bytes);

/// Writes the store and returns the number of bytes written.
std::size_t write_store(std::span<const FeatureRecord> records, const std::filesystem::path& path,
                        std::uint32_t flags = 0);
FeatureStore read_store(const std::filesystem::path& path);

/// Keeps `frames` frames per record using indices floor(k (F - 1) / (frames - 1))
/// (the middle frame when frames == 1).
FeatureStore subsample_frames(const FeatureStore& store, std::uint32_t frames);
std::vector<std::size_t> uniform_frame_indices(std::size_t available, std::size_t frames);

/// Plain-text split file: one class id per line; blank lines and lines
/// starting with '#' are ignored.
std::vector<std::uint32_t> read_split(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, std::span<const std::uint32_t> classes);

/// Raw file contents.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace capfsar
