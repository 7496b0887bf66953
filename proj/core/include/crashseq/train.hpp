#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "crashseq/dataio.hpp"
#include "crashseq/model.hpp"

namespace crashseq {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  int epochs = 30;
  double grad_clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

// Zero-pads to the longest sequence. All sequences must share D.
PaddedBatch pad_batch(std::span<const FeatureSequence* const> seqs);
PaddedBatch pad_batch(std::span<const FeatureSequence> seqs);

struct AdamState {
  Gradients m;
  Gradients v;
};

AdamState make_adam_state(const ModelParams& params);

struct AdamStepInfo {
  double grad_norm = 0.0;
  double clip_scale = 1.0;
};

// One bias-corrected Adam update. Global-norm clipping is applied to the
// gradients before the moment update. step_index starts at 1.
AdamStepInfo adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
                       const TrainConfig& config, std::int64_t step_index);

double global_norm(const Gradients& grads);

struct LabeledSequence {
  FeatureSequence features;
  int label = 0;
};

// Input conditioning applied before the model: optional subtraction of each
// clip's own temporal mean, then per-dimension standardization with
// statistics from the training set. Empty statistics mean no scaling.
struct FeatureNormalizer {
  bool center_time = true;
  std::vector<float> mean;
  std::vector<float> scale;  // reciprocal standard deviation

  static FeatureNormalizer fit(std::span<const LabeledSequence> train_set, bool center_time = true);
  FeatureSequence apply(const FeatureSequence& seq) const;
  std::vector<LabeledSequence> apply(std::span<const LabeledSequence> data) const;
  friend bool operator==(const FeatureNormalizer&, const FeatureNormalizer&) = default;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FitResult {
  ModelParams best_params;
  ModelParams final_params;
  int best_epoch = 0;
  // Inference-mode loss of the freshly initialized parameters.
  double initial_train_loss = 0.0;
  std::vector<EpochRecord> history;
};

// Adam training with dropout. Shuffling is keyed on (seed, epoch) and dropout
// draws come from a separate stream, so data order never depends on dropout.
// The best-validation parameters are kept (ties go to the earlier epoch);
// with an empty validation set the last epoch wins.
FitResult fit(std::span<const LabeledSequence> train_set, std::span<const LabeledSequence> val_set,
              const ModelConfig& model_config, const TrainConfig& train_config,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

// Inference-mode logits for many sequences, batched. Row i is seqs[i].
Matrix predict_logits(const ModelParams& params, const ModelConfig& config,
                      std::span<const FeatureSequence* const> seqs, std::size_t batch_size = 16);

// Argmax with ties going to class 0.
int predicted_class(std::span<const double> logits_row);

double dataset_accuracy(const ModelParams& params, const ModelConfig& config,
                        std::span<const LabeledSequence> data, std::size_t batch_size = 16);

// Mean cross-entropy over the set computed batch by batch (mean of per-batch
// means weighted by batch size), inference mode.
double dataset_loss(const ModelParams& params, const ModelConfig& config,
                    std::span<const LabeledSequence> data, std::size_t batch_size);

}  // namespace crashseq
