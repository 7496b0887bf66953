#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crashseq/featx.hpp"
#include "crashseq/model.hpp"
#include "crashseq/train.hpp"

namespace crashseq {

struct TrainingMetadata {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history;
  std::vector<double> val_accuracy_history;
};

// Enough of the feature pipeline to rebuild inputs for evaluation.
struct FeaturePipeline {
  ModalitySpec modality;
  PreprocConfig preproc;
  std::uint64_t extractor_seed = 0;
  FeatureNormalizer normalizer;
};

struct Checkpoint {
  std::uint32_t format_version = 1;
  ModelConfig config;
  ModelParams params;
  TrainingMetadata metadata;
  FeaturePipeline pipeline;
};

// "CSEQCKPT" | u32 version | u32 header length | JSON header | f32 payloads.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace crashseq
