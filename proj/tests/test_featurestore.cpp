#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "capfsar/error.hpp"
#include "capfsar/featurestore.hpp"
#include "support.hpp"

using namespace capfsar;

namespace {

FeatureRecord random_record(CounterRng& rng, std::uint32_t t, std::uint32_t s, std::uint32_t c, std::string id,
                            std::uint32_t cls) {
  FeatureRecord r;
  r.video_id = std::move(id);
  r.class_id = cls;
  r.frames = t;
  r.tokens = s;
  r.channels = c;
  r.visual.resize(std::size_t{t} * s * c);
  r.text.resize(std::size_t{t} * c);
  for (double& v : r.visual) v = static_cast<float>(rng.normal());
  for (double& v : r.text) v = static_cast<float>(rng.normal());
  for (std::uint32_t i = 0; i < t; ++i) {
    std::string cap;
    const std::size_t len = rng.uniform_int(12);
    for (std::size_t k = 0; k < len; ++k) cap.push_back(static_cast<char>('a' + rng.uniform_int(26)));
    r.captions.push_back(cap);
  }
  return r;
}

std::vector<FeatureRecord> random_records(std::uint64_t seed) {
  CounterRng rng(seed, 9);
  const auto t = static_cast<std::uint32_t>(testsupport::between(rng, 1, 8));
  const auto s = static_cast<std::uint32_t>(testsupport::between(rng, 1, 9));
  const auto c = static_cast<std::uint32_t>(testsupport::between(rng, 2, 16));
  const std::size_t n = testsupport::between(rng, 1, 6);
  std::vector<FeatureRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(random_record(rng, t, s, c, "vid_" + std::to_string(i) + "_\xc3\xa9",
                                static_cast<std::uint32_t>(rng.uniform_int(4))));
  }
  return out;
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

TEST_CASE("byte count for one small record follows the layout") {
  FeatureRecord r;
  r.video_id = "abc";
  r.class_id = 3;
  r.frames = 2;
  r.tokens = 1;
  r.channels = 2;
  r.visual = {1, 2, 3, 4};
  r.text = {5, 6, 7, 8};
  r.captions = {"hi", "there"};
  testsupport::TempDir dir;
  const std::size_t written = write_store(std::span<const FeatureRecord>(&r, 1), dir / "one.capf");
  const std::size_t header = 32;
  const std::size_t id = 4 + 3;
  const std::size_t cls = 4;
  const std::size_t captions = (4 + 2) + (4 + 5);
  CHECK(written == header + id + cls + captions + 4 * (2 * 1 * 2) + 4 * (2 * 2));
  CHECK(std::filesystem::file_size(dir / "one.capf") == written);
}

TEST_CASE("header fields are little-endian at fixed offsets") {
  const auto records = random_records(3);
  const auto bytes = encode_store(records, kFlagSynthetic);
  CHECK(std::memcmp(bytes.data(), "CAPF", 4) == 0);
  auto u32 = [&](std::size_t at) {
    return std::uint32_t{bytes[at]} | std::uint32_t{bytes[at + 1]} << 8 | std::uint32_t{bytes[at + 2]} << 16 |
           std::uint32_t{bytes[at + 3]} << 24;
  };
  CHECK(u32(4) == 1);
  CHECK(u32(8) == records[0].frames);
  CHECK(u32(12) == records[0].tokens);
  CHECK(u32(16) == records[0].channels);
  CHECK(u32(20) == records.size());
  CHECK(u32(28) == kFlagSynthetic);
  // First record starts with the id length.
  CHECK(u32(32) == records[0].video_id.size());
}

TEST_CASE("round trip is exact for random shapes") {
  testsupport::TempDir dir;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto records = random_records(seed);
    const auto path = dir / ("s" + std::to_string(seed) + ".capf");
    write_store(records, path, seed % 2 ? kFlagSynthetic : 0);
    const FeatureStore back = read_store(path);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(back.record(i) == records[i]);
    CHECK(back.header().synthetic() == (seed % 2 == 1));
    CHECK(back.header().record_count == records.size());
  }
}

TEST_CASE("values are stored as float32") {
  CounterRng rng(1, 1);
  FeatureRecord r = random_record(rng, 1, 1, 2, "x", 0);
  r.visual[0] = 0.1;  // not representable in float32
  const FeatureStore back = decode_store(encode_store(std::span<const FeatureRecord>(&r, 1)));
  CHECK(back.record(0).visual[0] == static_cast<double>(0.1f));
}

TEST_CASE("write rejects empty, heterogeneous and malformed record lists") {
  CHECK_THROWS_AS(encode_store({}), FormatError);
  CounterRng rng(2, 1);
  std::vector<FeatureRecord> mixed{random_record(rng, 2, 1, 2, "a", 0), random_record(rng, 3, 1, 2, "b", 0)};
  try {
    encode_store(mixed);
    FAIL("expected an error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("heterogeneous shapes") != std::string::npos);
  }
  std::vector<FeatureRecord> dup{random_record(rng, 2, 1, 2, "a", 0), random_record(rng, 2, 1, 2, "a", 1)};
  CHECK_THROWS_AS(encode_store(dup), FormatError);
  std::vector<FeatureRecord> nan{random_record(rng, 2, 1, 2, "a", 0)};
  nan[0].text[1] = std::nan("");
  CHECK_THROWS_AS(encode_store(nan), FormatError);
  std::vector<FeatureRecord> huge{random_record(rng, 2, 1, 2, "a", 0)};
  huge[0].visual[0] = 1e300;
  CHECK_THROWS_AS(encode_store(huge), FormatError);
  std::vector<FeatureRecord> short_payload{random_record(rng, 2, 1, 2, "a", 0)};
  short_payload[0].captions.pop_back();
  CHECK_THROWS_AS(encode_store(short_payload), FormatError);
}

TEST_CASE("bad magic and version are format errors") {
  auto bytes = encode_store(random_records(4));
  auto bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  CHECK_THROWS_AS(decode_store(bad), FormatError);
  bad = bytes;
  put_u32(bad, 4, 2);
  CHECK_THROWS_AS(decode_store(bad), FormatError);
  bad = bytes;
  put_u32(bad, 28, 6);
  CHECK_THROWS_AS(decode_store(bad), FormatError);
}

TEST_CASE("every truncation is a corruption error with an offset") {
  const auto bytes = encode_store(random_records(5));
  for (std::size_t cut = 4; cut < bytes.size(); cut += 1 + cut / 16) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode_store(part);
      FAIL("truncated store accepted at " << cut);
    } catch (const CorruptionError& e) {
      CHECK(e.offset() <= cut);
    } catch (const FormatError&) {
      FAIL("truncation reported as a format error at " << cut);
    }
  }
}

TEST_CASE("trailing bytes and inconsistent header counts are rejected") {
  auto bytes = encode_store(random_records(6));
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_store(extra), FormatError);
  auto wrong_classes = bytes;
  put_u32(wrong_classes, 24, 99);
  CHECK_THROWS_AS(decode_store(wrong_classes), FormatError);
}

TEST_CASE("a huge declared record count is not trusted") {
  auto bytes = encode_store(random_records(7));
  put_u32(bytes, 20, 0xFFFFFFFFu);
  CHECK_THROWS_AS(decode_store(bytes), CorruptionError);
  // Huge dimensions must not trigger a giant allocation either.
  auto dims = encode_store(random_records(7));
  put_u32(dims, 8, 0xFFFFFFFFu);
  put_u32(dims, 12, 0xFFFFFFFFu);
  CHECK_THROWS_AS(decode_store(dims), Error);
}

TEST_CASE("non-finite floats in a file are rejected") {
  CounterRng rng(8, 1);
  FeatureRecord r = random_record(rng, 1, 1, 2, "v", 0);
  auto bytes = encode_store(std::span<const FeatureRecord>(&r, 1));
  // The last four bytes are the final text float.
  const float inf = INFINITY;
  std::uint32_t bits;
  std::memcpy(&bits, &inf, 4);
  put_u32(bytes, bytes.size() - 4, bits);
  CHECK_THROWS_AS(decode_store(bytes), FormatError);
}

TEST_CASE("missing file is an io error") {
  CHECK_THROWS_AS(read_store("/nonexistent/dir/x.capf"), IoError);
}

TEST_CASE("store index groups records by class") {
  std::vector<FeatureRecord> records;
  CounterRng rng(9, 1);
  for (int i = 0; i < 6; ++i) records.push_back(random_record(rng, 1, 1, 2, "v" + std::to_string(i), i % 3 == 0 ? 7 : 2));
  const FeatureStore store = make_store(records);
  CHECK(store.class_ids() == std::vector<std::uint32_t>{2, 7});
  CHECK(store.by_class().at(7) == std::vector<std::size_t>{0, 3});
  CHECK(store.header().class_count == 2);
  CHECK(records[0].visual_tensor().shape() == Shape{1, 1, 2});
  CHECK(records[0].text_tensor().shape() == Shape{1, 2});
}

TEST_CASE("uniform frame indices") {
  CHECK(uniform_frame_indices(8, 8) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(uniform_frame_indices(8, 4) == std::vector<std::size_t>{0, 2, 4, 7});
  CHECK(uniform_frame_indices(8, 1) == std::vector<std::size_t>{3});
  CHECK(uniform_frame_indices(8, 2) == std::vector<std::size_t>{0, 7});
  CHECK_THROWS_AS(uniform_frame_indices(4, 5), ConfigError);
}

TEST_CASE("frame subsampling keeps the selected frames") {
  const auto records = random_records(11);
  const FeatureStore store = make_store(records);
  const std::uint32_t t = store.header().frames;
  const FeatureStore one = subsample_frames(store, 1);
  CHECK(one.header().frames == 1);
  const std::size_t mid = uniform_frame_indices(t, 1)[0];
  const std::size_t s = store.header().tokens, c = store.header().channels;
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(one.record(i).captions[0] == store.record(i).captions[mid]);
    for (std::size_t k = 0; k < c; ++k) CHECK(one.record(i).text[k] == store.record(i).text[mid * c + k]);
    for (std::size_t k = 0; k < s * c; ++k) CHECK(one.record(i).visual[k] == store.record(i).visual[mid * s * c + k]);
  }
}

TEST_CASE("split files round trip and skip comments") {
  testsupport::TempDir dir;
  const std::uint32_t ids[] = {4, 0, 17};
  write_split(dir / "train.txt", ids);
  CHECK(read_split(dir / "train.txt") == std::vector<std::uint32_t>{4, 0, 17});
  {
    std::ofstream f(dir / "hand.txt");
    f << "# test classes\n\n3\n  5 \n";
  }
  CHECK(read_split(dir / "hand.txt") == std::vector<std::uint32_t>{3, 5});
  {
    std::ofstream f(dir / "bad.txt");
    f << "3\nseven\n";
  }
  CHECK_THROWS_AS(read_split(dir / "bad.txt"), FormatError);
}
