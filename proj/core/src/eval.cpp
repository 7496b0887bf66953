#include "crashseq/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "crashseq/error.hpp"

namespace crashseq {

using nlohmann::json;

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((predictions[i] != 0 && predictions[i] != 1) || (labels[i] != 0 && labels[i] != 1)) {
      throw InvalidArgument("confusion: values must be 0 or 1 (index " + std::to_string(i) + ")");
    }
    const bool pred = predictions[i] == 1;
    const bool truth = labels[i] == 1;
    if (pred && truth) ++cm.tp;
    else if (pred) ++cm.fp;
    else if (truth) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricsReport metrics(const ConfusionMatrix& cm, std::string method) {
  if (cm.total() == 0) throw InvalidArgument("metrics: empty confusion matrix");
  MetricsReport r;
  r.method = std::move(method);
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fp > 0) {
    r.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  } else {
    r.degenerate = true;
  }
  if (cm.tp + cm.fn > 0) {
    r.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  } else {
    r.degenerate = true;
  }
  r.f1 = f1_score(r.precision, r.recall);
  return r;
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, std::span<const LabeledSequence> test_set,
                    std::string method, std::size_t batch_size) {
  if (test_set.empty()) throw InvalidArgument("evaluate: empty test set");
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& item : test_set) ptrs.push_back(&item.features);
  const Matrix logits = predict_logits(params, config, ptrs, batch_size);
  const Matrix probs = softmax_rows(logits);

  Evaluation ev;
  std::vector<int> preds, labels;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    ClipPrediction p;
    p.clip_id = test_set[i].features.clip_id;
    p.label = test_set[i].label;
    p.prediction = predicted_class(logits.row(i));
    p.prob_accident = probs.at(i, 1);
    preds.push_back(p.prediction);
    labels.push_back(p.label);
    ev.predictions.push_back(std::move(p));
  }
  ev.report = metrics(confusion(preds, labels), std::move(method));
  return ev;
}

std::string format_predictions(std::span<const ClipPrediction> predictions) {
  std::string out;
  for (const auto& p : predictions) {
    out += json{{"clip_id", p.clip_id}, {"label", p.label}, {"prediction", p.prediction},
                {"prob_accident", p.prob_accident}}
               .dump();
    out += '\n';
  }
  return out;
}

AttentionProfile attention_profile(const ModelParams& params, const ModelConfig& config, const FeatureSequence& clip,
                                   int label) {
  if (clip.frames < 1) throw InvalidArgument("attention_profile: empty clip");
  const FeatureSequence* one[] = {&clip};
  const auto batch = pad_batch(one);
  const auto maps = attention_weights(batch, params, config);
  const Matrix logits = forward(batch, params, config, false, nullptr);

  const std::size_t len = clip.frames;
  const std::size_t last = maps.layers - 1;
  AttentionProfile profile;
  profile.clip_id = clip.clip_id;
  profile.label = label;
  profile.prediction = predicted_class(logits.row(0));
  profile.scores.assign(len, 0.0);
  for (std::size_t h = 0; h < maps.heads; ++h) {
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t j = 0; j < len; ++j) profile.scores[j] += maps.at(last, 0, h, i, j);
    }
  }
  double total = 0.0;
  for (double& s : profile.scores) {
    s /= static_cast<double>(maps.heads * len);
    total += s;
  }
  for (double& s : profile.scores) s /= total;
  return profile;
}

std::string format_attention_profiles(std::span<const AttentionProfile> profiles) {
  std::string out;
  for (const auto& p : profiles) {
    out += json{{"clip_id", p.clip_id}, {"label", p.label}, {"prediction", p.prediction}, {"scores", p.scores}}.dump();
    out += '\n';
  }
  return out;
}

namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

std::string format_report_text(std::span<const MetricsReport> rows) {
  if (rows.empty()) throw InvalidArgument("report: no rows");
  std::size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 2, ' '); };
  std::string out = pad("Method") + "Acc.  Prec. Rec.  F1\n";
  for (const auto& r : rows) {
    out += pad(r.method) + fixed3(r.accuracy) + " " + fixed3(r.precision) + " " + fixed3(r.recall) + " " +
           fixed3(r.f1) + "\n";
  }
  return out;
}

std::string format_report_csv(std::span<const MetricsReport> rows) {
  if (rows.empty()) throw InvalidArgument("report: no rows");
  std::string out = "method,accuracy,precision,recall,f1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g\n", r.accuracy, r.precision, r.recall, r.f1);
    out += csv_field(r.method) + buf;
  }
  return out;
}

std::vector<MetricsReport> parse_report_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "method,accuracy,precision,recall,f1") {
    throw FormatError("report CSV: missing or wrong header");
  }
  std::vector<MetricsReport> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw FormatError("report CSV line " + std::to_string(lineno) + ": expected 5 fields");
    MetricsReport r;
    r.method = f[0];
    try {
      r.accuracy = std::stod(f[1]);
      r.precision = std::stod(f[2]);
      r.recall = std::stod(f[3]);
      r.f1 = std::stod(f[4]);
    } catch (const std::exception&) {
      throw FormatError("report CSV line " + std::to_string(lineno) + ": non-numeric metric");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace crashseq
