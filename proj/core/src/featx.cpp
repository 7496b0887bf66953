#include "crashseq/featx.hpp"

#include <algorithm>
#include <cmath>

#include "crashseq/error.hpp"
#include "crashseq/parallel.hpp"
#include "crashseq/random.hpp"

namespace crashseq {

void PreprocConfig::validate() const {
  if (target_size < 1) throw InvalidArgument("target_size must be >= 1");
  if (frame_stride < 1) throw InvalidArgument("frame_stride must be >= 1");
  for (double s : std) {
    if (!(s > 0.0)) throw InvalidArgument("normalization std components must be > 0");
  }
}

std::string_view to_string(ModalityKind kind) {
  switch (kind) {
    case ModalityKind::rgb: return "rgb";
    case ModalityKind::flow: return "flow";
    case ModalityKind::overlay: return "overlay";
    case ModalityKind::rgb_concat_flow: return "rgb_concat_flow";
  }
  return "rgb";
}

ModalityKind parse_modality(std::string_view text) {
  for (ModalityKind k : kAllModalities) {
    if (to_string(k) == text) return k;
  }
  throw InvalidArgument("unknown modality '" + std::string(text) + "'");
}

std::vector<std::size_t> sampled_indices(std::size_t count, int stride) {
  if (stride < 1) throw InvalidArgument("stride must be >= 1");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(stride)) idx.push_back(i);
  return idx;
}

RgbImage resize_bilinear(const RgbImage& img, int height, int width) {
  if (height < 1 || width < 1) throw InvalidArgument("resize target must be >= 1x1");
  if (img.height == height && img.width == width) return img;
  RgbImage out(height, width);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy_src = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy_src);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = fy_src - y0;
    for (int x = 0; x < width; ++x) {
      const double fx_src = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx_src);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = fx_src - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
        const double bottom = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
        out.at(y, x, c) = to_u8((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return out;
}

NormalizedFrame normalize(const RgbImage& img, const PreprocConfig& cfg) {
  NormalizedFrame out{img.height, img.width, {}};
  out.values.resize(static_cast<std::size_t>(3) * img.height * img.width);
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out.values[c * plane + i] =
          static_cast<float>((img.pixels[3 * i + c] / 255.0 - cfg.mean[c]) / cfg.std[c]);
    }
  }
  return out;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x66656174ULL));
  int in = 3;
  for (int out : {8, 16, 32, 64}) {
    Conv conv{in, out, std::vector<float>(static_cast<std::size_t>(out) * in * 9)};
    const double stddev = std::sqrt(2.0 / (in * 9));
    for (float& w : conv.weights) w = static_cast<float>(stddev * standard_normal(rng));
    layers_.push_back(std::move(conv));
    in = out;
  }
}

std::vector<float> FeatureExtractor::extract(const NormalizedFrame& frame) const {
  if (frame.height != kInputSize || frame.width != kInputSize ||
      frame.values.size() != static_cast<std::size_t>(3) * kInputSize * kInputSize) {
    throw InvalidArgument("feature extractor expects a 224x224x3 frame, got " +
                          std::to_string(frame.height) + "x" + std::to_string(frame.width));
  }
  int size = kInputSize;
  std::vector<float> act = frame.values;
  for (const Conv& conv : layers_) {
    // Zero-pad by one pixel so the inner loops are branch-free.
    const int padded = size + 2;
    std::vector<float> pad(static_cast<std::size_t>(conv.in_channels) * padded * padded, 0.0f);
    for (int c = 0; c < conv.in_channels; ++c) {
      for (int y = 0; y < size; ++y) {
        std::copy_n(&act[(static_cast<std::size_t>(c) * size + y) * size], size,
                    &pad[(static_cast<std::size_t>(c) * padded + y + 1) * padded + 1]);
      }
    }
    const int out_size = (size - 1) / 2 + 1;
    std::vector<float> out(static_cast<std::size_t>(conv.out_channels) * out_size * out_size, 0.0f);
    std::vector<float> row(out_size);
    for (int oc = 0; oc < conv.out_channels; ++oc) {
      float* dst = &out[static_cast<std::size_t>(oc) * out_size * out_size];
      for (int ic = 0; ic < conv.in_channels; ++ic) {
        const float* w = &conv.weights[(static_cast<std::size_t>(oc) * conv.in_channels + ic) * 9];
        const float* src = &pad[static_cast<std::size_t>(ic) * padded * padded];
        for (int oy = 0; oy < out_size; ++oy) {
          float* d = dst + static_cast<std::size_t>(oy) * out_size;
          for (int ky = 0; ky < 3; ++ky) {
            const float* s = src + static_cast<std::size_t>(2 * oy + ky) * padded;
            const float w0 = w[ky * 3];
            const float w1 = w[ky * 3 + 1];
            const float w2 = w[ky * 3 + 2];
            for (int ox = 0; ox < out_size; ++ox) {
              d[ox] += w0 * s[2 * ox] + w1 * s[2 * ox + 1] + w2 * s[2 * ox + 2];
            }
          }
        }
      }
      for (std::size_t i = 0; i < static_cast<std::size_t>(out_size) * out_size; ++i) {
        dst[i] = std::max(dst[i], 0.0f);
      }
    }
    act = std::move(out);
    size = out_size;
  }

  const auto channels = static_cast<std::size_t>(layers_.back().out_channels);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<float> features(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += act[c * plane + i];
    features[c] = static_cast<float>(sum / plane);
  }
  return features;
}

FeatureSequence FeatureExtractor::extract(std::span<const NormalizedFrame> frames, std::string clip_id) const {
  FeatureSequence seq;
  seq.clip_id = std::move(clip_id);
  seq.frames = static_cast<std::uint32_t>(frames.size());
  seq.dim = kFeatureDim;
  seq.values.resize(frames.size() * kFeatureDim);
  parallel_for(frames.size(), [&](std::size_t t) {
    const auto f = extract(frames[t]);
    std::copy(f.begin(), f.end(), seq.values.begin() + static_cast<std::ptrdiff_t>(t * kFeatureDim));
  });
  return seq;
}

ModalityFrames prepare_modality_frames(std::span<const RgbImage> frames, const ModalitySpec& spec,
                                       const PreprocConfig& cfg, bool need_flow) {
  ModalityFrames mf;
  mf.rgb = sample_frames(frames, cfg.frame_stride);
  if (need_flow && mf.rgb.size() >= 2) {
    const auto flows = flow_sequence(mf.rgb, spec.flow_params);
    mf.flow_color.reserve(flows.size());
    for (const auto& f : flows) mf.flow_color.push_back(flow_to_color(f, spec.flow_max_mag));
  }
  return mf;
}

FeatureSequence image_stream_features(std::span<const RgbImage> images, const PreprocConfig& cfg,
                                      const FeatureExtractor& extractor, std::string clip_id) {
  std::vector<NormalizedFrame> prepped(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    prepped[i] = normalize(resize_bilinear(images[i], cfg.target_size, cfg.target_size), cfg);
  });
  return extractor.extract(prepped, std::move(clip_id));
}

FeatureSequence concat_features(const FeatureSequence& a, const FeatureSequence& b) {
  const std::uint32_t common = std::min(a.frames, b.frames);
  if (common == 0) throw InvalidArgument("concat_features: zero common length");
  FeatureSequence out;
  out.clip_id = a.clip_id;
  out.frames = common;
  out.dim = a.dim + b.dim;
  out.values.reserve(static_cast<std::size_t>(common) * out.dim);
  for (std::uint32_t t = 0; t < common; ++t) {
    const auto ra = a.row(t);
    const auto rb = b.row(t);
    out.values.insert(out.values.end(), ra.begin(), ra.end());
    out.values.insert(out.values.end(), rb.begin(), rb.end());
  }
  return out;
}

std::filesystem::path feature_file_path(const std::filesystem::path& features_dir,
                                        std::string_view clip_id, std::string_view stream) {
  return features_dir / (std::string(clip_id) + "." + std::string(stream) + ".avfx");
}

namespace {

FeatureSequence load_stream(const std::filesystem::path& dir, const std::string& clip_id, std::string_view stream) {
  const auto path = feature_file_path(dir, clip_id, stream);
  if (!std::filesystem::exists(path)) throw IoError("missing feature file " + path.string());
  auto seq = read_feature_file(path);
  seq.clip_id = clip_id;
  return seq;
}

void check_nonempty(const FeatureSequence& seq, ModalityKind kind) {
  if (seq.frames == 0) {
    throw InvalidArgument("clip '" + seq.clip_id + "': zero common length for modality " +
                          std::string(to_string(kind)) + " (need at least 2 sampled frames)");
  }
}

}  // namespace

std::vector<FeatureSequence> assemble_modalities(const ClipManifestEntry& entry,
                                                 std::span<const ModalityKind> kinds,
                                                 const ModalitySpec& spec, const PreprocConfig& cfg,
                                                 const FeatureExtractor& extractor,
                                                 const AssembleOptions& options) {
  cfg.validate();
  auto wants = [&](ModalityKind k) { return std::find(kinds.begin(), kinds.end(), k) != kinds.end(); };
  const bool need_rgb = wants(ModalityKind::rgb) || wants(ModalityKind::rgb_concat_flow);
  const bool need_flow = wants(ModalityKind::flow) || wants(ModalityKind::rgb_concat_flow);
  const bool need_overlay = wants(ModalityKind::overlay);

  FeatureSequence rgb, flow, blended;
  if (options.features_dir) {
    if (need_rgb) rgb = load_stream(*options.features_dir, entry.clip_id, "rgb");
    if (need_flow) flow = load_stream(*options.features_dir, entry.clip_id, "flow");
    if (need_overlay) blended = load_stream(*options.features_dir, entry.clip_id, "overlay");
  } else {
    const auto dir = entry.frames_path.is_absolute() ? entry.frames_path
                                                     : options.manifest_dir / entry.frames_path;
    const auto frames = read_frame_sequence(dir);
    const auto mf = prepare_modality_frames(frames, spec, cfg, need_flow || need_overlay);
    if (need_rgb) rgb = image_stream_features(mf.rgb, cfg, extractor, entry.clip_id);
    if (need_flow) flow = image_stream_features(mf.flow_color, cfg, extractor, entry.clip_id);
    if (need_overlay) {
      std::vector<RgbImage> mixed;
      mixed.reserve(mf.flow_color.size());
      for (std::size_t t = 0; t < mf.flow_color.size(); ++t) {
        mixed.push_back(overlay(mf.rgb[t], mf.flow_color[t], spec.blend));
      }
      blended = image_stream_features(mixed, cfg, extractor, entry.clip_id);
    }
  }
  rgb.clip_id = flow.clip_id = blended.clip_id = entry.clip_id;

  std::vector<FeatureSequence> out;
  out.reserve(kinds.size());
  for (ModalityKind kind : kinds) {
    FeatureSequence seq;
    switch (kind) {
      case ModalityKind::rgb: seq = rgb; break;
      case ModalityKind::flow: seq = flow; break;
      case ModalityKind::overlay: seq = blended; break;
      case ModalityKind::rgb_concat_flow:
        check_nonempty(flow, kind);
        seq = concat_features(rgb, flow);
        break;
    }
    check_nonempty(seq, kind);
    if (options.expected_dim && seq.dim != *options.expected_dim) {
      throw InvalidArgument("clip '" + entry.clip_id + "': feature dim " + std::to_string(seq.dim) +
                            " does not match model input dim " + std::to_string(*options.expected_dim));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

FeatureSequence assemble_modality(const ClipManifestEntry& entry, const ModalitySpec& spec,
                                  const PreprocConfig& cfg, const FeatureExtractor& extractor,
                                  const AssembleOptions& options) {
  const ModalityKind kinds[] = {spec.kind};
  return std::move(assemble_modalities(entry, kinds, spec, cfg, extractor, options).front());
}

}  // namespace crashseq
