#include "crashseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crashseq/error.hpp"
#include "crashseq/random.hpp"

namespace crashseq {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("Adam epsilon must be > 0");
  if (grad_clip_norm < 0.0) throw InvalidArgument("grad_clip_norm must be >= 0");
}

PaddedBatch pad_batch(std::span<const FeatureSequence* const> seqs) {
  if (seqs.empty()) throw InvalidArgument("pad_batch: empty batch");
  PaddedBatch batch;
  batch.batch = seqs.size();
  batch.dim = seqs.front()->dim;
  for (const auto* s : seqs) {
    if (s->dim != batch.dim) {
      throw InvalidArgument("pad_batch: mixed feature dims " + std::to_string(batch.dim) + " and " +
                            std::to_string(s->dim));
    }
    if (s->frames < 1) throw InvalidArgument("pad_batch: sequence '" + s->clip_id + "' is empty");
    batch.t_max = std::max<std::size_t>(batch.t_max, s->frames);
  }
  batch.features.assign(batch.batch * batch.t_max * batch.dim, 0.0f);
  batch.mask.assign(batch.batch * batch.t_max, 0);
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto* s = seqs[b];
    std::copy(s->values.begin(), s->values.end(),
              batch.features.begin() + static_cast<std::ptrdiff_t>(b * batch.t_max * batch.dim));
    std::fill_n(batch.mask.begin() + static_cast<std::ptrdiff_t>(b * batch.t_max), s->frames, 1);
    batch.lengths.push_back(s->frames);
  }
  return batch;
}

PaddedBatch pad_batch(std::span<const FeatureSequence> seqs) {
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  return pad_batch(ptrs);
}

AdamState make_adam_state(const ModelParams& params) {
  return {params.zeros_like<double>(), params.zeros_like<double>()};
}

namespace {

template <typename P, typename T>
std::vector<T*> tensor_list(P& params) {
  std::vector<T*> out;
  params.for_each([&](const std::string&, T& t) { out.push_back(&t); });
  return out;
}

}  // namespace

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const Tensor<double>& t) {
    for (double g : t.values) sq += g * g;
  });
  return std::sqrt(sq);
}

AdamStepInfo adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const TrainConfig& config,
                       std::int64_t step_index) {
  if (step_index < 1) throw InvalidArgument("adam_step: step_index must be >= 1");
  AdamStepInfo info;
  info.grad_norm = global_norm(grads);
  if (!std::isfinite(info.grad_norm)) throw NumericError("adam_step: non-finite gradient norm");
  if (config.grad_clip_norm > 0.0 && info.grad_norm > config.grad_clip_norm) {
    info.clip_scale = config.grad_clip_norm / info.grad_norm;
  }

  auto p = tensor_list<ModelParams, Tensor<float>>(params);
  auto g = tensor_list<const Gradients, const Tensor<double>>(grads);
  auto m = tensor_list<Gradients, Tensor<double>>(state.m);
  auto v = tensor_list<Gradients, Tensor<double>>(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw InvalidArgument("adam_step: parameter/gradient layout mismatch");
  }
  const double t = static_cast<double>(step_index);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k]->size() != g[k]->size()) throw InvalidArgument("adam_step: tensor size mismatch");
    for (std::size_t i = 0; i < p[k]->size(); ++i) {
      const double gi = g[k]->values[i] * info.clip_scale;
      double& mi = m[k]->values[i];
      double& vi = v[k]->values[i];
      mi = config.beta1 * mi + (1.0 - config.beta1) * gi;
      vi = config.beta2 * vi + (1.0 - config.beta2) * gi * gi;
      const double update = config.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + config.epsilon);
      const double next = static_cast<double>(p[k]->values[i]) - update;
      if (!std::isfinite(next) || !std::isfinite(mi) || !std::isfinite(vi)) {
        throw NumericError("adam_step: non-finite update");
      }
      p[k]->values[i] = static_cast<float>(next);
    }
  }
  return info;
}

int predicted_class(std::span<const double> logits_row) {
  int best = 0;
  for (std::size_t c = 1; c < logits_row.size(); ++c) {
    if (logits_row[c] > logits_row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

Matrix predict_logits(const ModelParams& params, const ModelConfig& config,
                      std::span<const FeatureSequence* const> seqs, std::size_t batch_size) {
  Matrix out(seqs.size(), config.num_classes);
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, seqs.size() - start);
    const auto batch = pad_batch(seqs.subspan(start, n));
    const Matrix logits = forward(batch, params, config, false, nullptr);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(logits.row(i).begin(), logits.row(i).end(), out.row(start + i).begin());
    }
  }
  return out;
}

double dataset_accuracy(const ModelParams& params, const ModelConfig& config, std::span<const LabeledSequence> data,
                        std::size_t batch_size) {
  if (data.empty()) return 0.0;
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& d : data) ptrs.push_back(&d.features);
  const Matrix logits = predict_logits(params, config, ptrs, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predicted_class(logits.row(i)) == data[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double dataset_loss(const ModelParams& params, const ModelConfig& config, std::span<const LabeledSequence> data,
                    std::size_t batch_size) {
  if (data.empty()) throw InvalidArgument("dataset_loss: empty data");
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::vector<const FeatureSequence*> ptrs;
    std::vector<int> labels;
    for (std::size_t i = start; i < start + n; ++i) {
      ptrs.push_back(&data[i].features);
      labels.push_back(data[i].label);
    }
    const Matrix logits = forward(pad_batch(ptrs), params, config, false, nullptr);
    total += cross_entropy(logits, labels) * static_cast<double>(n);
  }
  return total / static_cast<double>(data.size());
}

FeatureNormalizer FeatureNormalizer::fit(std::span<const LabeledSequence> train_set, bool center_time) {
  FeatureNormalizer norm;
  norm.center_time = center_time;
  if (train_set.empty()) return norm;
  const std::size_t dim = train_set.front().features.dim;
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  std::size_t rows = 0;
  norm.center_time = false;
  for (const auto& item : train_set) {
    if (item.features.dim != dim) throw InvalidArgument("normalizer: inconsistent feature dimension");
    const auto seq = center_time ? FeatureNormalizer{true, {}, {}}.apply(item.features) : item.features;
    for (std::size_t t = 0; t < seq.frames; ++t) {
      const auto row = seq.row(t);
      for (std::size_t d = 0; d < dim; ++d) {
        sum[d] += row[d];
        sq[d] += static_cast<double>(row[d]) * row[d];
      }
    }
    rows += seq.frames;
  }
  norm.center_time = center_time;
  norm.mean.resize(dim);
  norm.scale.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double mu = sum[d] / static_cast<double>(rows);
    const double var = std::max(0.0, sq[d] / static_cast<double>(rows) - mu * mu);
    norm.mean[d] = static_cast<float>(mu);
    norm.scale[d] = static_cast<float>(1.0 / (std::sqrt(var) + 1e-6));
  }
  return norm;
}

FeatureSequence FeatureNormalizer::apply(const FeatureSequence& seq) const {
  if (!mean.empty() && mean.size() != seq.dim) {
    throw InvalidArgument("normalizer expects D=" + std::to_string(mean.size()) + ", got " +
                          std::to_string(seq.dim));
  }
  FeatureSequence out = seq;
  const std::size_t dim = seq.dim;
  std::vector<double> offset(dim, 0.0);
  if (center_time && seq.frames > 0) {
    for (std::size_t t = 0; t < seq.frames; ++t) {
      const auto row = seq.row(t);
      for (std::size_t d = 0; d < dim; ++d) offset[d] += row[d];
    }
    for (auto& o : offset) o /= static_cast<double>(seq.frames);
  }
  for (std::size_t t = 0; t < seq.frames; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      double x = static_cast<double>(seq.values[t * dim + d]) - offset[d];
      if (!mean.empty()) x = (x - mean[d]) * scale[d];
      out.values[t * dim + d] = static_cast<float>(x);
    }
  }
  return out;
}

std::vector<LabeledSequence> FeatureNormalizer::apply(std::span<const LabeledSequence> data) const {
  std::vector<LabeledSequence> out;
  out.reserve(data.size());
  for (const auto& item : data) out.push_back({apply(item.features), item.label});
  return out;
}

FitResult fit(std::span<const LabeledSequence> train_set, std::span<const LabeledSequence> val_set,
              const ModelConfig& model_config, const TrainConfig& train_config,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  model_config.validate();
  train_config.validate();
  if (train_set.empty()) throw InvalidArgument("fit: empty training set");
  for (auto set : {train_set, val_set}) {
    for (const auto& item : set) {
      if (item.label != 0 && item.label != 1) throw InvalidArgument("fit: labels must be 0 or 1");
      if (item.features.dim != model_config.input_dim) {
        throw InvalidArgument("fit: clip '" + item.features.clip_id + "' has feature dim " +
                              std::to_string(item.features.dim) + ", model expects " +
                              std::to_string(model_config.input_dim));
      }
    }
  }

  ModelParams params = init_params(model_config, derive_seed(train_config.seed, 1));
  AdamState adam = make_adam_state(params);
  Rng dropout_rng(derive_seed(train_config.seed, 2));

  FitResult result;
  result.initial_train_loss = dataset_loss(params, model_config, train_set, train_config.batch_size);
  double best_accuracy = -1.0;
  std::int64_t step = 0;
  const std::size_t n = train_set.size();

  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    if (train_config.shuffle) {
      order = keyed_permutation(n, derive_seed(train_config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
    }

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += train_config.batch_size, ++batch_index) {
      const std::size_t count = std::min(train_config.batch_size, n - start);
      std::vector<const FeatureSequence*> ptrs;
      std::vector<int> labels;
      for (std::size_t i = start; i < start + count; ++i) {
        ptrs.push_back(&train_set[order[i]].features);
        labels.push_back(train_set[order[i]].label);
      }
      try {
        const auto batch = pad_batch(ptrs);
        const auto step_result = backward(batch, labels, params, model_config, &dropout_rng);
        adam_step(params, step_result.grads, adam, train_config, ++step);
        loss_sum += step_result.loss * static_cast<double>(count);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) + ": " +
                           e.what());
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.val_accuracy = val_set.empty() ? 0.0 : dataset_accuracy(params, model_config, val_set,
                                                                   train_config.batch_size);
    result.history.push_back(record);
    if (val_set.empty() || record.val_accuracy > best_accuracy) {
      best_accuracy = record.val_accuracy;
      result.best_params = params;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(record);
  }
  result.final_params = std::move(params);
  return result;
}

}  // namespace crashseq
