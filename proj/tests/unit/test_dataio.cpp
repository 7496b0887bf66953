#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <crashseq/dataio.hpp>
#include <crashseq/error.hpp>
#include <crashseq/random.hpp>

#include "test_util.hpp"

using namespace crashseq;
namespace fs = std::filesystem;

TEST(Manifest, ParsesOneEntry) {
  const auto entries =
      parse_manifest(R"({"clip_id":"a1","frames_path":"d/a1","label":1,"split":"train","num_frames":38})");
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].clip_id, "a1");
  EXPECT_EQ(entries[0].frames_path, fs::path("d/a1"));
  EXPECT_EQ(entries[0].label, 1);
  EXPECT_EQ(entries[0].split, Split::train);
  EXPECT_EQ(entries[0].num_frames, 38);
}

TEST(Manifest, BadLabelNamesFieldAndLine) {
  const std::string text =
      "{\"clip_id\":\"a\",\"frames_path\":\"a\",\"label\":0,\"split\":\"train\",\"num_frames\":3}\n"
      "{\"clip_id\":\"b\",\"frames_path\":\"b\",\"label\":2,\"split\":\"train\",\"num_frames\":3}\n";
  try {
    parse_manifest(text);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("label"), std::string::npos) << msg;
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
  }
}

TEST(Manifest, ThousandLines) {
  std::vector<ClipManifestEntry> entries;
  for (int i = 0; i < 1000; ++i) entries.push_back({"c" + std::to_string(i), "f/" + std::to_string(i), i % 2, Split::unassigned, 10 + i % 5});
  const auto back = parse_manifest(format_manifest(entries));
  EXPECT_EQ(back.size(), 1000u);
  EXPECT_EQ(back, entries);
}

TEST(Manifest, BlankLinesSkippedAndRoundTrip) {
  const auto tmp = testutil::temp_dir("manifest");
  std::vector<ClipManifestEntry> entries{{"x", "clips/x", 1, Split::test, 4}, {"y", "/abs/y", 0, Split::train, 2}};
  write_manifest(entries, tmp / "m.jsonl");
  EXPECT_EQ(load_manifest(tmp / "m.jsonl"), entries);
  EXPECT_EQ(parse_manifest("\n" + format_manifest(entries) + "\n\n"), entries);
  EXPECT_EQ(resolve_frames_path(entries[0], tmp / "m.jsonl"), tmp / "clips/x");
  EXPECT_EQ(resolve_frames_path(entries[1], tmp / "m.jsonl"), fs::path("/abs/y"));
}

TEST(Manifest, MissingFieldIsError) {
  EXPECT_THROW(parse_manifest(R"({"clip_id":"a","label":1})"), FormatError);
  EXPECT_THROW(parse_manifest("not json"), FormatError);
}

TEST(FrameSequence, LexicographicOrder) {
  const auto dir = testutil::temp_dir("frames");
  write_image(RgbImage(4, 5, 10), dir / "f001.ppm");
  write_image(RgbImage(4, 5, 20), dir / "f000.ppm");
  const auto frames = read_frame_sequence(dir);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0].pixels[0], 20);
  EXPECT_EQ(frames[1].pixels[0], 10);
}

TEST(FrameSequence, EmptyDirectoryIsError) {
  const auto dir = testutil::temp_dir("empty");
  EXPECT_THROW(read_frame_sequence(dir), Error);
}

TEST(FrameSequence, BlackPpmDecodes) {
  const auto dir = testutil::temp_dir("black");
  const std::string header = "P6\n224 224\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.resize(bytes.size() + 224 * 224 * 3, 0);
  write_file_atomic(dir / "f000.ppm", bytes);
  const auto frames = read_frame_sequence(dir);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].height, 224);
  EXPECT_EQ(frames[0].width, 224);
  for (auto p : frames[0].pixels) ASSERT_EQ(p, 0);
}

TEST(FrameSequence, PngAndPpmAgree) {
  const auto dir = testutil::temp_dir("png");
  RgbImage img(3, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 37);
  write_image(img, dir / "a.png");
  write_image(img, dir / "b.ppm");
  const auto frames = read_frame_sequence(dir);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0], img);
  EXPECT_EQ(frames[1], img);
}

TEST(Avfx, RoundTripLarge) {
  Rng rng(3);
  FeatureSequence seq = testutil::random_sequence(rng, 6, 2048);
  seq.clip_id = "clip";
  const auto dir = testutil::temp_dir("avfx");
  const auto path = dir / "clip.rgb.avfx";
  write_feature_file(seq, path);
  const auto back = read_feature_file(path);
  EXPECT_EQ(back, seq);
  EXPECT_EQ(encode_avfx(back), read_file_bytes(path));
  EXPECT_EQ(read_file_bytes(path).size(), kAvfxHeaderBytes + 6 * 2048 * 4);
}

TEST(Avfx, TruncatedPayloadIsError) {
  FeatureSequence seq{"", 2, 3, {1, 2, 3, 4, 5, 6}};
  auto bytes = encode_avfx(seq);
  bytes.pop_back();
  EXPECT_THROW(decode_avfx(bytes), FormatError);
}

TEST(Avfx, SingleValueLayout) {
  const FeatureSequence seq{"", 1, 1, {0.5f}};
  const auto bytes = encode_avfx(seq);
  // magic 4 + version 4 + reserved 4 + T 4 + D 4 + one f32
  const std::vector<std::uint8_t> expected{'A', 'V', 'F', 'X', 1, 0, 0, 0, 0, 0, 0, 0,
                                           1,   0,   0,   0,   1, 0, 0, 0, 0, 0, 0, 0x3f};
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(decode_avfx(expected), seq);
}

TEST(Avfx, BadMagicAndTrailingBytesRejected) {
  auto bytes = encode_avfx({"", 1, 1, {0.5f}});
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_avfx(extra), FormatError);
  bytes[0] = 'B';
  EXPECT_THROW(decode_avfx(bytes), FormatError);
}

TEST(Avfx, ClipIdFromFilename) {
  const auto dir = testutil::temp_dir("avfx_id");
  write_feature_file({"ignored", 1, 2, {1.f, 2.f}}, dir / "acc_01.flow.avfx");
  EXPECT_EQ(read_feature_file(dir / "acc_01.flow.avfx").clip_id, "acc_01");
}

std::vector<ClipManifestEntry> balanced(int per_class) {
  std::vector<ClipManifestEntry> out;
  for (int i = 0; i < 2 * per_class; ++i) out.push_back({"c" + std::to_string(i), "p", i < per_class ? 0 : 1});
  return out;
}

TEST(Split, SeventyThirtyStratified) {
  const auto s = split_dataset(balanced(500), 0.7, 11);
  ASSERT_EQ(s.train.size(), 700u);
  ASSERT_EQ(s.test.size(), 300u);
  auto count = [](const auto& v, int label) {
    return std::count_if(v.begin(), v.end(), [&](const auto& e) { return e.label == label; });
  };
  EXPECT_EQ(count(s.train, 0), 350);
  EXPECT_EQ(count(s.train, 1), 350);
  EXPECT_EQ(count(s.test, 0), 150);
  EXPECT_EQ(count(s.test, 1), 150);
  for (const auto& e : s.train) EXPECT_EQ(e.split, Split::train);
  for (const auto& e : s.test) EXPECT_EQ(e.split, Split::test);
  std::set<std::string> ids;
  for (const auto& e : s.train) ids.insert(e.clip_id);
  for (const auto& e : s.test) ids.insert(e.clip_id);
  EXPECT_EQ(ids.size(), 1000u);
}

TEST(Split, Deterministic) {
  const auto a = split_dataset(balanced(5), 0.5, 4);
  const auto b = split_dataset(balanced(5), 0.5, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(Split, FourEntriesOneOfEachPerSide) {
  const auto s = split_dataset(balanced(2), 0.5, 9);
  ASSERT_EQ(s.train.size(), 2u);
  ASSERT_EQ(s.test.size(), 2u);
  EXPECT_NE(s.train[0].label, s.train[1].label);
  EXPECT_NE(s.test[0].label, s.test[1].label);
}

TEST(Split, KeepsManifestOrder) {
  const auto entries = balanced(20);
  const auto s = split_dataset(entries, 0.7, 2);
  auto index = [&](const std::string& id) {
    return std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.clip_id == id; }) -
           entries.begin();
  };
  for (std::size_t i = 1; i < s.train.size(); ++i) EXPECT_LT(index(s.train[i - 1].clip_id), index(s.train[i].clip_id));
}
