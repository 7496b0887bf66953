#include <gtest/gtest.h>

#include <cmath>

#include <crashseq/dataio.hpp>
#include <crashseq/error.hpp>
#include <crashseq/synth.hpp>

#include "test_util.hpp"

using namespace crashseq;

namespace {

// d[t] = mean |frame[t+1] - frame[t]| over all channels.
std::vector<double> frame_deltas(const std::vector<RgbImage>& frames) {
  std::vector<double> d;
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < frames[t].pixels.size(); ++i) {
      s += std::abs(int(frames[t + 1].pixels[i]) - int(frames[t].pixels[i]));
    }
    d.push_back(s / frames[t].pixels.size());
  }
  return d;
}

}  // namespace

TEST(Synth, AccidentPeakInsideWindow) {
  const SynthConfig cfg;
  const int lo = static_cast<int>(std::ceil(cfg.accident_window[0] * cfg.frames_per_clip));
  const int hi = static_cast<int>(std::floor(cfg.accident_window[1] * cfg.frames_per_clip));
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const auto clip = generate_clip(ClipKind::accident, cfg, seed);
    EXPECT_EQ(clip.label, 1);
    ASSERT_EQ(clip.frames.size(), 40u);
    EXPECT_GE(clip.impact_frame, lo);
    EXPECT_LE(clip.impact_frame, hi);
    const auto d = frame_deltas(clip.frames);
    // pair (t, t+1) is attributed to frame t+1
    const int peak = static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin()) + 1;
    EXPECT_GE(peak, lo) << "seed " << seed;
    EXPECT_LE(peak, hi) << "seed " << seed;
  }
}

TEST(Synth, NormalClipsAreSmooth) {
  const SynthConfig cfg;
  for (std::uint64_t seed = 100; seed < 125; ++seed) {
    const auto clip = generate_clip(ClipKind::normal, cfg, seed);
    EXPECT_EQ(clip.label, 0);
    EXPECT_EQ(clip.impact_frame, -1);
    const auto d = frame_deltas(clip.frames);
    double mean = 0.0, var = 0.0;
    for (double v : d) mean += v;
    mean /= d.size();
    for (double v : d) var += (v - mean) * (v - mean);
    const double cv = std::sqrt(var / d.size()) / mean;
    EXPECT_LT(cv, 0.5) << "seed " << seed;
  }
}

TEST(Synth, DeterministicPerSeeds) {
  SynthConfig cfg;
  cfg.image_size = 64;
  const auto a = generate_clip(ClipKind::accident, cfg, 3);
  const auto b = generate_clip(ClipKind::accident, cfg, 3);
  EXPECT_EQ(a.frames, b.frames);
  EXPECT_NE(generate_clip(ClipKind::accident, cfg, 4).frames, a.frames);
  cfg.seed = 8;
  EXPECT_NE(generate_clip(ClipKind::accident, cfg, 3).frames, a.frames);
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.frames_per_clip = 9;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.num_clips_per_class = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.accident_window = {0.7, 0.4};
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.speed_min = 6.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Synth, DatasetBalancedSplitAndReproducible) {
  SynthConfig cfg;
  cfg.num_clips_per_class = 100;
  cfg.frames_per_clip = 12;
  cfg.image_size = 48;
  const auto dir = testutil::temp_dir("synth_ds");
  const auto manifest = generate_dataset(cfg, dir / "a");
  const auto entries = load_manifest(manifest);
  ASSERT_EQ(entries.size(), 200u);
  EXPECT_EQ(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.label == 1; }), 100);
  EXPECT_EQ(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.split == Split::train; }), 140);
  EXPECT_EQ(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.split == Split::test; }), 60);
  const auto frames = read_frame_sequence(resolve_frames_path(entries[7], manifest));
  EXPECT_EQ(frames.size(), 12u);
  EXPECT_EQ(frames[0].height, 48);
  EXPECT_EQ(entries[7].num_frames, 12);

  const auto again = generate_dataset(cfg, dir / "b");
  EXPECT_EQ(read_file_bytes(manifest), read_file_bytes(again));
  const auto other = read_frame_sequence(resolve_frames_path(load_manifest(again)[7], again));
  EXPECT_EQ(frames, other);
}
