#include <gtest/gtest.h>

#include <cmath>

#include <crashseq/error.hpp>
#include <crashseq/train.hpp>

#include "test_util.hpp"

using namespace crashseq;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.input_dim = 4;
  c.d_model = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.dropout_rate = 0.1;
  c.max_len = 32;
  return c;
}

// Class 1 clips have a positive first feature, class 0 a negative one.
std::vector<LabeledSequence> separable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    auto seq = testutil::random_sequence(rng, 3 + i % 4, 4, 0.3);
    for (std::size_t t = 0; t < seq.frames; ++t) seq.row(t)[0] += label ? 1.5f : -1.5f;
    out.push_back({seq, label});
  }
  return out;
}

}  // namespace

TEST(PadBatch, MasksAndLengths) {
  Rng rng(1);
  std::vector<FeatureSequence> seqs{testutil::random_sequence(rng, 3, 2), testutil::random_sequence(rng, 5, 2)};
  const auto b = pad_batch(std::span<const FeatureSequence>(seqs));
  EXPECT_EQ(b.t_max, 5u);
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 1, 1, 1, 1, 1}));
  EXPECT_EQ(b.lengths, (std::vector<std::size_t>{3, 5}));
  for (std::size_t t = 3; t < 5; ++t)
    for (float v : b.frame(0, t)) EXPECT_EQ(v, 0.0f);
  const auto single = pad_batch(std::span<const FeatureSequence>(seqs.data(), 1));
  EXPECT_EQ(single.t_max, 3u);
  for (auto m : single.mask) EXPECT_EQ(m, 1);
  std::vector<FeatureSequence> mixed{testutil::random_sequence(rng, 3, 2), testutil::random_sequence(rng, 3, 4)};
  EXPECT_THROW(pad_batch(std::span<const FeatureSequence>(mixed)), InvalidArgument);
}

TEST(Adam, ZeroGradientsNoChange) {
  const auto cfg = tiny();
  auto p = init_params(cfg, 1);
  const auto before = p;
  auto state = make_adam_state(p);
  const auto zero = p.zeros_like<double>();
  adam_step(p, zero, state, TrainConfig{}, 1);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.m, zero);
  EXPECT_EQ(state.v, zero);
}

TEST(Adam, FirstStepUnitGradient) {
  const auto cfg = tiny();
  auto p = zero_params(cfg);
  auto state = make_adam_state(p);
  auto g = p.zeros_like<double>();
  g.head_b.values[0] = 1.0;
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.grad_clip_norm = 0.0;
  adam_step(p, g, state, tc, 1);
  EXPECT_NEAR(p.head_b.values[0], -1e-3 / (1.0 + 1e-8), 1e-9);
  EXPECT_EQ(p.head_b.values[1], 0.0f);
}

TEST(Adam, ClippingScalesGradients) {
  const auto cfg = tiny();
  auto p = zero_params(cfg);
  auto state = make_adam_state(p);
  auto g = p.zeros_like<double>();
  g.head_b.values[0] = 6.0;
  g.head_b.values[1] = 8.0;
  EXPECT_DOUBLE_EQ(global_norm(g), 10.0);
  TrainConfig tc;
  tc.grad_clip_norm = 1.0;
  const auto info = adam_step(p, g, state, tc, 1);
  EXPECT_DOUBLE_EQ(info.grad_norm, 10.0);
  EXPECT_DOUBLE_EQ(info.clip_scale, 0.1);
  // m = (1 - beta1) * 0.1 * g
  EXPECT_NEAR(state.m.head_b.values[0], 0.1 * 0.6, 1e-12);
  EXPECT_NEAR(state.m.head_b.values[1], 0.1 * 0.8, 1e-12);
}

TEST(Fit, LossDecreasesOnSeparableToy) {
  const auto data = separable(2, 3);
  TrainConfig tc;
  tc.epochs = 5;
  tc.learning_rate = 1e-2;
  tc.batch_size = 2;
  tc.seed = 4;
  const auto r = fit(data, {}, tiny(), tc);
  ASSERT_EQ(r.history.size(), 5u);
  EXPECT_LT(dataset_loss(r.final_params, tiny(), data, 2), r.initial_train_loss);
  EXPECT_EQ(r.best_epoch, 5);
  EXPECT_EQ(r.best_params, r.final_params);
}

TEST(Fit, DeterministicForSeed) {
  const auto data = separable(20, 5);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.seed = 9;
  tc.learning_rate = 1e-3;
  const auto a = fit(data, {}, tiny(), tc);
  const auto b = fit(data, {}, tiny(), tc);
  EXPECT_EQ(a.final_params, b.final_params);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
  tc.seed = 10;
  EXPECT_NE(fit(data, {}, tiny(), tc).final_params, a.final_params);
}

TEST(Fit, BestEpochByValidationWithEarlierTies) {
  const auto train = separable(16, 6);
  const auto val = separable(8, 7);
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 4;
  tc.learning_rate = 5e-3;
  tc.seed = 1;
  std::vector<EpochRecord> seen;
  const auto r = fit(train, val, tiny(), tc, [&](const EpochRecord& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), 6u);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& e : seen) {
    if (e.val_accuracy > best) {
      best = e.val_accuracy;
      best_epoch = e.epoch;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(dataset_accuracy(r.best_params, tiny(), val), best);
}

TEST(Fit, RejectsBadInputs) {
  TrainConfig tc;
  EXPECT_THROW(fit({}, {}, tiny(), tc), InvalidArgument);
  auto bad = tc;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  auto wrong_dim = separable(4, 1);
  wrong_dim[0].features = FeatureSequence{"", 2, 3, std::vector<float>(6, 0.0f)};
  EXPECT_THROW(fit(wrong_dim, {}, tiny(), tc), InvalidArgument);
}

TEST(Loss, BatchSizeIndependence) {
  const auto data = separable(24, 8);
  const auto p = init_params(tiny(), 2);
  const double full = dataset_loss(p, tiny(), data, 24);
  for (std::size_t bs : {1u, 2u, 3u, 4u, 6u, 8u, 12u}) EXPECT_NEAR(dataset_loss(p, tiny(), data, bs), full, 1e-6);
}

TEST(Predict, TieGoesToClassZero) {
  const double tie[] = {0.3, 0.3};
  const double one[] = {0.1, 0.2};
  EXPECT_EQ(predicted_class(tie), 0);
  EXPECT_EQ(predicted_class(one), 1);
}

TEST(Normalizer, CentersAndStandardizes) {
  std::vector<LabeledSequence> data;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    auto s = testutil::random_sequence(rng, 5, 3);
    for (auto& v : s.values) v = v * 2.0f + 100.0f;
    data.push_back({s, i % 2});
  }
  const auto norm = FeatureNormalizer::fit(data, true);
  ASSERT_EQ(norm.mean.size(), 3u);
  const auto out = norm.apply(std::span<const LabeledSequence>(data));
  for (std::size_t d = 0; d < 3; ++d) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& item : out) {
      double clip_sum = 0.0;
      for (std::size_t t = 0; t < item.features.frames; ++t) {
        const double v = item.features.row(t)[d];
        sum += v;
        sq += v * v;
        clip_sum += v;
        ++n;
      }
      EXPECT_NEAR(clip_sum / item.features.frames, 0.0, 1e-4);
    }
    EXPECT_NEAR(sum / n, 0.0, 1e-4);
    EXPECT_NEAR(sq / n, 1.0, 1e-3);
  }
  EXPECT_EQ(out[3].label, data[3].label);
  const FeatureNormalizer identity{false, {}, {}};
  EXPECT_EQ(identity.apply(data[0].features), data[0].features);
  EXPECT_THROW(norm.apply(FeatureSequence{"", 1, 2, {1.f, 2.f}}), InvalidArgument);
}
