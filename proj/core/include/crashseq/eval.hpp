#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crashseq/dataio.hpp"
#include "crashseq/model.hpp"
#include "crashseq/train.hpp"

namespace crashseq {

// Positive class is label 1 (accident).
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

struct MetricsReport {
  std::string method;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionMatrix confusion;
  // Set when precision or recall had a zero denominator (reported as 0).
  bool degenerate = false;
};

MetricsReport metrics(const ConfusionMatrix& cm, std::string method = {});

// 2pr / (p + r), 0 when p + r == 0.
double f1_score(double precision, double recall);

struct ClipPrediction {
  std::string clip_id;
  int label = 0;
  int prediction = 0;
  double prob_accident = 0.0;
};

struct Evaluation {
  MetricsReport report;
  std::vector<ClipPrediction> predictions;
};

Evaluation evaluate(const ModelParams& params, const ModelConfig& config,
                    std::span<const LabeledSequence> test_set, std::string method,
                    std::size_t batch_size = 16);

// JSONL, one {"clip_id","label","prediction","prob_accident"} per line.
std::string format_predictions(std::span<const ClipPrediction> predictions);

// Attention received per frame: final layer, averaged over heads and query
// rows, renormalized to sum to 1.
struct AttentionProfile {
  std::string clip_id;
  std::vector<double> scores;
  int prediction = 0;
  int label = 0;
};

AttentionProfile attention_profile(const ModelParams& params, const ModelConfig& config,
                                   const FeatureSequence& clip, int label = 0);

// JSONL {"clip_id","label","prediction","scores":[...]}.
std::string format_attention_profiles(std::span<const AttentionProfile> profiles);

// Columns Method, Accuracy, Precision, Recall, F1 at 3 decimals.
std::string format_report_text(std::span<const MetricsReport> rows);
// Header "method,accuracy,precision,recall,f1".
std::string format_report_csv(std::span<const MetricsReport> rows);
std::vector<MetricsReport> parse_report_csv(const std::string& csv);

}  // namespace crashseq
