#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "crashseq/dataio.hpp"
#include "crashseq/image.hpp"
#include "crashseq/optflow.hpp"

namespace crashseq {

struct PreprocConfig {
  int target_size = 224;
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
  int frame_stride = 5;

  void validate() const;
};

enum class ModalityKind { rgb, flow, overlay, rgb_concat_flow };

inline constexpr std::array<ModalityKind, 4> kAllModalities{
    ModalityKind::rgb, ModalityKind::flow, ModalityKind::overlay, ModalityKind::rgb_concat_flow};

std::string_view to_string(ModalityKind kind);
ModalityKind parse_modality(std::string_view text);

struct ModalitySpec {
  ModalityKind kind = ModalityKind::rgb;
  double blend = 0.5;
  FlowParams flow_params;
  // Saturation scale for flow rendering, px per sampled-frame step. Fixed
  // rather than per-field so magnitude stays comparable across frames.
  double flow_max_mag = 1.0;
};

// Offsets 0, stride, 2*stride, ...; ceil(T / stride) entries.
std::vector<std::size_t> sampled_indices(std::size_t count, int stride);

template <typename T>
std::vector<T> sample_frames(std::span<const T> frames, int stride) {
  std::vector<T> out;
  for (std::size_t i : sampled_indices(frames.size(), stride)) out.push_back(frames[i]);
  return out;
}

// Bilinear with half-pixel centres: src = (dst + 0.5) * in / out - 0.5,
// clamped to the image. Equal sizes return the input unchanged.
RgbImage resize_bilinear(const RgbImage& img, int height, int width);

// Channel-planar (CHW) float tensor.
struct NormalizedFrame {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// (pixel / 255 - mean_c) / std_c per channel.
NormalizedFrame normalize(const RgbImage& img, const PreprocConfig& cfg);

// Fixed random-projection CNN: four [3x3 conv, stride 2, pad 1, ReLU]
// blocks with 8, 16, 32, 64 output channels, then global average pooling.
// Weights ~ N(0, 2 / fan_in) from the seed; immutable after construction.
class FeatureExtractor {
 public:
  static constexpr int kInputSize = 224;
  static constexpr std::uint32_t kFeatureDim = 64;

  explicit FeatureExtractor(std::uint64_t seed);

  std::vector<float> extract(const NormalizedFrame& frame) const;
  // Frames are processed in parallel; output row t belongs to frames[t].
  FeatureSequence extract(std::span<const NormalizedFrame> frames, std::string clip_id = {}) const;

 private:
  struct Conv {
    int in_channels;
    int out_channels;
    std::vector<float> weights;  // [out][in][3][3]
  };
  std::vector<Conv> layers_;
};

// Image-space frames for one modality, before preprocessing.
struct ModalityFrames {
  std::vector<RgbImage> rgb;         // sampled frames
  std::vector<RgbImage> flow_color;  // T - 1 renderings, flow t pairs with frame t
};

// Samples, computes flow on the sampled frames and renders it.
ModalityFrames prepare_modality_frames(std::span<const RgbImage> frames, const ModalitySpec& spec,
                                       const PreprocConfig& cfg, bool need_flow);

// Features of one image stream through resize -> normalize -> extractor.
FeatureSequence image_stream_features(std::span<const RgbImage> images, const PreprocConfig& cfg,
                                      const FeatureExtractor& extractor, std::string clip_id);

// Row-wise [a_t || b_t] over the first min(T_a, T_b) rows.
FeatureSequence concat_features(const FeatureSequence& a, const FeatureSequence& b);

std::filesystem::path feature_file_path(const std::filesystem::path& features_dir,
                                        std::string_view clip_id, std::string_view stream);

struct AssembleOptions {
  // Pre-extracted <clip_id>.<stream>.avfx files; built-in extractor otherwise.
  std::optional<std::filesystem::path> features_dir;
  // Declared model input dimension to validate against.
  std::optional<std::uint32_t> expected_dim;
  // Base for relative frames_path values.
  std::filesystem::path manifest_dir;
};

FeatureSequence assemble_modality(const ClipManifestEntry& entry, const ModalitySpec& spec,
                                  const PreprocConfig& cfg, const FeatureExtractor& extractor,
                                  const AssembleOptions& options = {});

// Computes every requested modality for one clip, sharing the sampled frames
// and flow between them. Result order follows `kinds`.
std::vector<FeatureSequence> assemble_modalities(const ClipManifestEntry& entry,
                                                 std::span<const ModalityKind> kinds,
                                                 const ModalitySpec& spec, const PreprocConfig& cfg,
                                                 const FeatureExtractor& extractor,
                                                 const AssembleOptions& options = {});

}  // namespace crashseq
