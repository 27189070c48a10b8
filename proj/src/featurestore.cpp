#include "capfsar/featurestore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "capfsar/error.hpp"

namespace capfsar {

namespace {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw CorruptionError(std::string("truncated store while reading ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32(const char* what) {
    const std::size_t at = pos_;
    const float f = std::bit_cast<float>(u32(what));
    if (!std::isfinite(f)) throw FormatError("non-finite value at byte offset " + std::to_string(at));
    return static_cast<double>(f);
  }
  std::string text(const char* what) {
    const std::uint32_t len = u32(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  void read_floats(std::vector<double>& out, std::size_t n, const char* what) {
    need(4 * n, what);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f32(what);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::size_t checked_product(std::uint64_t a, std::uint64_t b, std::uint64_t c = 1) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b * c;
  if (p > (std::uint64_t{1} << 40)) throw FormatError("declared shape is implausibly large");
  return static_cast<std::size_t>(p);
}

// Smallest possible encoded record for the given dimensions.
std::size_t min_record_bytes(const StoreHeader& h) {
  return 4 + 4 + 4 * static_cast<std::size_t>(h.frames) +
         4 * checked_product(h.frames, h.tokens, h.channels) + 4 * checked_product(h.frames, h.channels);
}

}  // namespace

Tensor FeatureRecord::visual_tensor() const {
  return Tensor({frames, tokens, channels}, visual);
}

Tensor FeatureRecord::text_tensor() const { return Tensor({frames, channels}, text); }

FeatureStore::FeatureStore(StoreHeader header, std::vector<FeatureRecord> records)
    : header_(header), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) by_class_[records_[i].class_id].push_back(i);
}

std::vector<std::uint32_t> FeatureStore::class_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(by_class_.size());
  for (const auto& [id, _] : by_class_) ids.push_back(id);
  return ids;
}

StoreHeader validate_records(std::span<const FeatureRecord> records, std::uint32_t flags) {
  if (records.empty()) throw FormatError("cannot write an empty store");
  if ((flags & ~kFlagSynthetic) != 0) throw FormatError("unknown flag bits");
  const FeatureRecord& ref = records.front();
  if (ref.frames == 0 || ref.tokens == 0 || ref.channels == 0) {
    throw FormatError("record dimensions must be positive");
  }
  std::set<std::uint32_t> classes;
  std::set<std::string_view> ids;
  for (const FeatureRecord& r : records) {
    if (r.frames != ref.frames || r.tokens != ref.tokens || r.channels != ref.channels) {
      throw FormatError("heterogeneous shapes: record '" + r.video_id + "' differs from '" +
                        ref.video_id + "'");
    }
    if (r.visual.size() != std::size_t{r.frames} * r.tokens * r.channels ||
        r.text.size() != std::size_t{r.frames} * r.channels || r.captions.size() != r.frames) {
      throw FormatError("record '" + r.video_id + "' payload does not match its dimensions");
    }
    const auto finite = [](double v) {
      return std::isfinite(v) && std::isfinite(static_cast<float>(v));
    };
    if (!std::all_of(r.visual.begin(), r.visual.end(), finite) ||
        !std::all_of(r.text.begin(), r.text.end(), finite)) {
      throw FormatError("record '" + r.video_id + "' holds a non-finite value");
    }
    if (!ids.insert(r.video_id).second) throw FormatError("duplicate video id '" + r.video_id + "'");
    classes.insert(r.class_id);
  }
  StoreHeader h;
  h.frames = ref.frames;
  h.tokens = ref.tokens;
  h.channels = ref.channels;
  h.record_count = static_cast<std::uint32_t>(records.size());
  h.class_count = static_cast<std::uint32_t>(classes.size());
  h.flags = flags;
  return h;
}

FeatureStore make_store(std::vector<FeatureRecord> records, std::uint32_t flags) {
  const StoreHeader h = validate_records(records, flags);
  return FeatureStore(h, std::move(records));
}

std::vector<std::uint8_t> encode_store(std::span<const FeatureRecord> records, std::uint32_t flags) {
  const StoreHeader h = validate_records(records, flags);
  ByteWriter w;
  w.raw(kStoreMagic, 4);
  w.u32(kStoreVersion);
  w.u32(h.frames);
  w.u32(h.tokens);
  w.u32(h.channels);
  w.u32(h.record_count);
  w.u32(h.class_count);
  w.u32(h.flags);
  for (const FeatureRecord& r : records) {
    w.text(r.video_id);
    w.u32(r.class_id);
    for (const std::string& c : r.captions) w.text(c);
    for (double v : r.visual) w.f32(v);
    for (double v : r.text) w.f32(v);
  }
  return w.take();
}

FeatureStore decode_store(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.need(4, "magic");
  if (std::memcmp(bytes.data(), kStoreMagic, 4) != 0) throw FormatError("bad magic: not a CAPF store");
  in.u32("magic");
  StoreHeader h;
  h.version = in.u32("version");
  if (h.version != kStoreVersion) {
    throw FormatError("unsupported CAPF version " + std::to_string(h.version));
  }
  h.frames = in.u32("header");
  h.tokens = in.u32("header");
  h.channels = in.u32("header");
  h.record_count = in.u32("header");
  h.class_count = in.u32("header");
  h.flags = in.u32("header");
  if (h.frames == 0 || h.tokens == 0 || h.channels == 0) {
    throw FormatError("header dimensions must be positive");
  }
  if (h.record_count == 0) throw FormatError("store declares zero records");
  if ((h.flags & ~kFlagSynthetic) != 0) throw FormatError("unknown flag bits set");

  // The header's record count is not trusted for allocation.
  const std::size_t plausible = in.remaining() / min_record_bytes(h);
  std::vector<FeatureRecord> records;
  records.reserve(std::min<std::size_t>(h.record_count, plausible));
  std::set<std::uint32_t> classes;
  std::set<std::string> ids;
  for (std::uint32_t i = 0; i < h.record_count; ++i) {
    FeatureRecord r;
    r.frames = h.frames;
    r.tokens = h.tokens;
    r.channels = h.channels;
    r.video_id = in.text("video id");
    if (!ids.insert(r.video_id).second) throw FormatError("duplicate video id '" + r.video_id + "'");
    r.class_id = in.u32("class id");
    r.captions.reserve(h.frames);
    for (std::uint32_t t = 0; t < h.frames; ++t) r.captions.push_back(in.text("caption"));
    in.read_floats(r.visual, checked_product(h.frames, h.tokens, h.channels), "visual tokens");
    in.read_floats(r.text, checked_product(h.frames, h.channels), "text tokens");
    classes.insert(r.class_id);
    records.push_back(std::move(r));
  }
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after last record");
  }
  if (classes.size() != h.class_count) {
    throw FormatError("header declares " + std::to_string(h.class_count) + " classes, found " +
                      std::to_string(classes.size()));
  }
  return FeatureStore(h, std::move(records));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::size_t write_store(std::span<const FeatureRecord> records, const std::filesystem::path& path,
                        std::uint32_t flags) {
  const auto bytes = encode_store(records, flags);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
  return bytes.size();
}

FeatureStore read_store(const std::filesystem::path& path) { return decode_store(read_file_bytes(path)); }

std::vector<std::size_t> uniform_frame_indices(std::size_t available, std::size_t frames) {
  if (frames == 0 || frames > available) {
    throw ConfigError("cannot sample " + std::to_string(frames) + " frames from " +
                      std::to_string(available));
  }
  std::vector<std::size_t> idx(frames);
  if (frames == 1) {
    idx[0] = (available - 1) / 2;
    return idx;
  }
  for (std::size_t k = 0; k < frames; ++k) idx[k] = k * (available - 1) / (frames - 1);
  return idx;
}

FeatureStore subsample_frames(const FeatureStore& store, std::uint32_t frames) {
  const StoreHeader& h = store.header();
  if (frames == h.frames) return store;
  const auto idx = uniform_frame_indices(h.frames, frames);
  const std::size_t sc = std::size_t{h.tokens} * h.channels;
  std::vector<FeatureRecord> out;
  out.reserve(store.size());
  for (const FeatureRecord& r : store.records()) {
    FeatureRecord s = r;
    s.frames = frames;
    s.visual.clear();
    s.text.clear();
    s.captions.clear();
    for (std::size_t t : idx) {
      s.visual.insert(s.visual.end(), r.visual.begin() + t * sc, r.visual.begin() + (t + 1) * sc);
      s.text.insert(s.text.end(), r.text.begin() + t * h.channels, r.text.begin() + (t + 1) * h.channels);
      s.captions.push_back(r.captions[t]);
    }
    out.push_back(std::move(s));
  }
  StoreHeader nh = h;
  nh.frames = frames;
  return FeatureStore(nh, std::move(out));
}

std::vector<std::uint32_t> read_split(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open split file " + path.string());
  std::vector<std::uint32_t> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line.substr(first));
    long long v = -1;
    std::string rest;
    if (!(ss >> v) || v < 0 || v > 0xFFFFFFFFLL || (ss >> rest)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected a class id");
    }
    ids.push_back(static_cast<std::uint32_t>(v));
  }
  return ids;
}

void write_split(const std::filesystem::path& path, std::span<const std::uint32_t> classes) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (std::uint32_t c : classes) f << c << '\n';
}

}  // namespace capfsar
