#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crashseq/image.hpp"

namespace crashseq {

enum class Split { train, test, unassigned };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// One labeled clip. label 1 = accident.
struct ClipManifestEntry {
  std::string clip_id;
  std::filesystem::path frames_path;
  int label = 0;
  Split split = Split::unassigned;
  int num_frames = 0;

  friend bool operator==(const ClipManifestEntry&, const ClipManifestEntry&) = default;
};

// JSONL manifest, one object per line. Blank lines are skipped. Errors carry
// the 1-based line number.
std::vector<ClipManifestEntry> parse_manifest(std::string_view text);
std::vector<ClipManifestEntry> load_manifest(const std::filesystem::path& path);
std::string format_manifest(std::span<const ClipManifestEntry> entries);
void write_manifest(std::span<const ClipManifestEntry> entries, const std::filesystem::path& path);

// Relative frames_path values are resolved against the manifest's directory.
std::filesystem::path resolve_frames_path(const ClipManifestEntry& entry,
                                          const std::filesystem::path& manifest_path);

// Decodes every .png / .ppm file in `dir` in lexicographic filename order.
std::vector<RgbImage> read_frame_sequence(const std::filesystem::path& dir);

// T x D frame-feature matrix, row t = feature vector of sampled frame t.
struct FeatureSequence {
  std::string clip_id;
  std::uint32_t frames = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t t) const {
    return {values.data() + t * dim, dim};
  }
  std::span<float> row(std::size_t t) { return {values.data() + t * dim, dim}; }
  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

// AVFX layout, all little-endian:
//   0..3 "AVFX" | 4..7 version (u32) = 1 | 8..11 reserved (u32) = 0
//   12..15 T (u32) | 16..19 D (u32) | T*D f32, frame-major.
inline constexpr std::uint32_t kAvfxVersion = 1;
inline constexpr std::size_t kAvfxHeaderBytes = 20;

std::vector<std::uint8_t> encode_avfx(const FeatureSequence& seq);
// clip_id is not stored in the file; the caller supplies it.
FeatureSequence decode_avfx(std::span<const std::uint8_t> bytes, std::string clip_id = {});
void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path);
// clip_id is taken from the filename stem up to the first '.'.
FeatureSequence read_feature_file(const std::filesystem::path& path);

struct DatasetSplit {
  std::vector<ClipManifestEntry> train;
  std::vector<ClipManifestEntry> test;
  std::vector<std::string> warnings;
};

// Stratified by label: each class contributes round(fraction * count) entries
// to train, chosen by a seeded shuffle. Output lists keep manifest order.
// The returned entries carry the matching `split` field.
DatasetSplit split_dataset(std::span<const ClipManifestEntry> entries, double train_fraction,
                           std::uint64_t seed);

}  // namespace crashseq
