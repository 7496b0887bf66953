#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "crashseq/image.hpp"

namespace crashseq {

struct SynthConfig {
  int num_clips_per_class = 100;
  int frames_per_clip = 40;
  int image_size = 224;
  int num_blobs = 3;
  double speed_min = 2.0;
  double speed_max = 5.0;
  std::array<double, 2> accident_window{0.4, 0.7};
  std::uint64_t seed = 7;

  void validate() const;
};

enum class ClipKind { normal, accident };

struct SynthClip {
  std::vector<RgbImage> frames;
  int label = 0;
  // First frame drawn with post-impact velocities; -1 for normal clips.
  int impact_frame = -1;
};

// Moving anti-aliased discs on a static background. In accident clips two
// discs meet inside the accident window, both reverse direction with a large
// velocity change, and radial debris flies out for three frames. Normal clips
// share the same geometry but keep constant velocities. Deterministic per
// (cfg.seed, clip_seed).
SynthClip generate_clip(ClipKind kind, const SynthConfig& cfg, std::uint64_t clip_seed);

// Writes <out_dir>/clips/<clip_id>/f00000.ppm ... and <out_dir>/manifest.jsonl
// with balanced classes and a stratified 70:30 split. Returns the manifest path.
std::filesystem::path generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace crashseq
