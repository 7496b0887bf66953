#include <gtest/gtest.h>

#include <cmath>

#include <crashseq/error.hpp>
#include <crashseq/model.hpp>
#include <crashseq/train.hpp>

#include "test_util.hpp"

using namespace crashseq;

namespace {

ModelConfig tiny(std::size_t dim = 8) {
  ModelConfig c;
  c.input_dim = dim;
  c.d_model = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ffn_dim = 32;
  c.max_len = 64;
  return c;
}

PaddedBatch one(const FeatureSequence& s) { return pad_batch(std::span<const FeatureSequence>(&s, 1)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) d = std::max(d, std::abs(a.values[i] - b.values[i]));
  return d;
}

}  // namespace

TEST(Project, ZeroWeightsGiveBias) {
  auto cfg = tiny();
  auto p = zero_params(cfg);
  for (std::size_t i = 0; i < 8; ++i) p.proj_b.values[i] = static_cast<float>(i + 1);
  Rng rng(1);
  const auto z = project(one(testutil::random_sequence(rng, 3, 8)), p);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(z[0].at(t, i), i + 1.0);
}

TEST(Project, IdentityAndBasisColumn) {
  auto cfg = tiny();
  auto p = init_params(cfg, 3);
  Rng rng(2);
  const auto seq = testutil::random_sequence(rng, 1, 8);
  auto id = zero_params(cfg);
  for (std::size_t i = 0; i < 8; ++i) id.proj_w.values[i * 8 + i] = 1.0f;
  const auto z = project(one(seq), id);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(z[0].at(0, i), seq.values[i]);

  FeatureSequence e1{"", 1, 8, std::vector<float>(8, 0.0f)};
  e1.values[0] = 1.0f;
  for (auto& b : p.proj_b.values) b = 0.25f;
  const auto z1 = project(one(e1), p);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(z1[0].at(0, i), double(p.proj_w.values[i * 8]) + 0.25);
}

TEST(PositionalEncoding, RowZeroAndFormula) {
  const auto pe = positional_encoding(5, 6, 64);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(pe.at(0, i), i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe.at(3, 2), std::sin(3.0 / std::pow(10000.0, 2.0 / 6)), 1e-12);
  EXPECT_NEAR(pe.at(3, 3), std::cos(3.0 / std::pow(10000.0, 2.0 / 6)), 1e-12);
  EXPECT_THROW(positional_encoding(65, 6, 64), InvalidArgument);
}

TEST(Encoder, InferenceDeterministicAndPaddedRowsZero) {
  const auto cfg = tiny();
  const auto p = init_params(cfg, 4);
  Rng rng(3);
  std::vector<FeatureSequence> seqs{testutil::random_sequence(rng, 4, 8), testutil::random_sequence(rng, 9, 8)};
  const auto batch = pad_batch(std::span<const FeatureSequence>(seqs));
  const auto z = project(batch, p);
  const auto h1 = encoder_forward(z, batch, p, cfg);
  const auto h2 = encoder_forward(z, batch, p, cfg);
  EXPECT_EQ(h1[0], h2[0]);
  EXPECT_EQ(h1[1], h2[1]);
  for (std::size_t t = 4; t < 9; ++t)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(h1[0].at(t, i), 0.0);

  const auto alone = one(seqs[0]);
  const auto h3 = encoder_forward(project(alone, p), alone, p, cfg);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(h3[0].at(t, i), h1[0].at(t, i), 1e-5);
}

TEST(Pool, MaskedMean) {
  PaddedBatch b;
  b.batch = 2;
  b.t_max = 2;
  b.dim = 2;
  b.mask = {1, 1, 1, 0};
  b.lengths = {2, 1};
  std::vector<Matrix> h{Matrix(2, 2), Matrix(2, 2)};
  h[0].values = {1, 3, 3, 5};
  h[1].values = {1, 3, 9, 9};
  const auto pooled = masked_mean_pool(h, b);
  EXPECT_EQ(pooled.at(0, 0), 2.0);
  EXPECT_EQ(pooled.at(0, 1), 4.0);
  EXPECT_EQ(pooled.at(1, 0), 1.0);
  EXPECT_EQ(pooled.at(1, 1), 3.0);
}

TEST(Pool, WithinEnvelope) {
  Rng rng(8);
  const auto seq = testutil::random_sequence(rng, 7, 5);
  const auto b = one(seq);
  std::vector<Matrix> h{Matrix(7, 5)};
  for (std::size_t i = 0; i < 35; ++i) h[0].values[i] = seq.values[i];
  const auto pooled = masked_mean_pool(h, b);
  for (std::size_t c = 0; c < 5; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t t = 0; t < 7; ++t) {
      lo = std::min(lo, h[0].at(t, c));
      hi = std::max(hi, h[0].at(t, c));
    }
    EXPECT_GE(pooled.at(0, c), lo);
    EXPECT_LE(pooled.at(0, c), hi);
  }
  std::vector<Matrix> same{Matrix(3, 2)};
  same[0].values = {4, -1, 4, -1, 4, -1};
  FeatureSequence s3{"", 3, 2, std::vector<float>(6, 0.0f)};
  const auto p3 = masked_mean_pool(same, one(s3));
  EXPECT_EQ(p3.at(0, 0), 4.0);
  EXPECT_EQ(p3.at(0, 1), -1.0);
}

TEST(Head, SoftmaxAndLoss) {
  Matrix logits(1, 2, 0.0);
  const auto probs = softmax_rows(logits);
  EXPECT_EQ(probs.at(0, 0), 0.5);
  EXPECT_EQ(probs.at(0, 1), 0.5);
  const int l0[] = {0};
  const int l1[] = {1};
  EXPECT_NEAR(cross_entropy(logits, l0), 0.69315, 1e-5);
  EXPECT_NEAR(cross_entropy(logits, l1), std::log(2.0), 1e-15);
  Matrix big(1, 2);
  big.at(0, 0) = 1000.0;
  const double loss = cross_entropy(big, l0);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy(big, l1), 1000.0, 1e-9);
  const auto pb = softmax_rows(big);
  EXPECT_TRUE(std::isfinite(pb.at(0, 1)));
}

TEST(Head, SoftmaxSumsToOne) {
  Rng rng(9);
  Matrix m(50, 2);
  for (auto& v : m.values) v = 30.0 * standard_normal(rng);
  const auto p = softmax_rows(m);
  std::vector<int> labels(50);
  for (std::size_t r = 0; r < 50; ++r) {
    EXPECT_NEAR(p.at(r, 0) + p.at(r, 1), 1.0, 1e-6);
    labels[r] = static_cast<int>(r % 2);
  }
  EXPECT_GE(cross_entropy(m, labels), 0.0);
}

TEST(Forward, ShapesAndSingleFrame) {
  ModelConfig cfg;
  cfg.num_layers = 1;
  const auto p = init_params(cfg, 1);
  Rng rng(4);
  std::vector<FeatureSequence> seqs{testutil::random_sequence(rng, 7, 2048), testutil::random_sequence(rng, 7, 2048)};
  const auto logits = forward(pad_batch(std::span<const FeatureSequence>(seqs)), p, cfg);
  EXPECT_EQ(logits.rows, 2u);
  EXPECT_EQ(logits.cols, 2u);
  const auto small = tiny();
  const auto ps = init_params(small, 2);
  const auto single = forward(one(testutil::random_sequence(rng, 1, 8)), ps, small);
  for (double v : single.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, TrailingPaddingInvariant) {
  const auto cfg = tiny();
  const auto p = init_params(cfg, 6);
  Rng rng(6);
  const auto a = testutil::random_sequence(rng, 3, 8);
  const auto longer = testutil::random_sequence(rng, 11, 8);
  std::vector<FeatureSequence> both{a, longer};
  const auto batched = forward(pad_batch(std::span<const FeatureSequence>(both)), p, cfg);
  const auto alone = forward(one(a), p, cfg);
  EXPECT_NEAR(batched.at(0, 0), alone.at(0, 0), 1e-5);
  EXPECT_NEAR(batched.at(0, 1), alone.at(0, 1), 1e-5);
}

TEST(Forward, DropoutOnlyWhenTraining) {
  auto cfg = tiny();
  cfg.dropout_rate = 0.5;
  const auto p = init_params(cfg, 6);
  Rng rng(6);
  const auto b = one(testutil::random_sequence(rng, 6, 8));
  const auto eval1 = forward(b, p, cfg);
  Rng d1(1), d2(1), d3(2);
  const auto t1 = forward(b, p, cfg, true, &d1);
  const auto t2 = forward(b, p, cfg, true, &d2);
  const auto t3 = forward(b, p, cfg, true, &d3);
  EXPECT_EQ(t1, t2);
  EXPECT_GT(max_abs_diff(t1, t3), 0.0);
  EXPECT_GT(max_abs_diff(eval1, t1), 0.0);
}

TEST(Backward, MatchesFiniteDifferencesOnSample) {
  const auto cfg = tiny();
  auto p = init_params(cfg, 12);
  Rng rng(12);
  p.for_each([&](const std::string&, Tensor<float>& t) {
    for (auto& v : t.values) v += static_cast<float>(0.1 * standard_normal(rng));
  });
  std::vector<FeatureSequence> seqs{testutil::random_sequence(rng, 5, 8), testutil::random_sequence(rng, 3, 8)};
  const auto batch = pad_batch(std::span<const FeatureSequence>(seqs));
  const std::vector<int> labels{0, 1};
  const auto g = backward(batch, labels, p, cfg);
  EXPECT_NEAR(g.loss, cross_entropy(forward(batch, p, cfg), labels), 1e-12);
  std::vector<const Tensor<double>*> grads;
  g.grads.for_each([&](const std::string&, const Tensor<double>& t) { grads.push_back(&t); });
  std::size_t k = 0;
  p.for_each([&](const std::string& name, Tensor<float>& t) {
    const auto& gt = *grads[k++];
    for (std::size_t idx : {std::size_t{0}, t.size() / 2, t.size() - 1}) {
      const float orig = t.values[idx];
      const float up = orig + 1e-3f;
      const float down = orig - 1e-3f;
      t.values[idx] = up;
      const double lp = cross_entropy(forward(batch, p, cfg), labels);
      t.values[idx] = down;
      const double lm = cross_entropy(forward(batch, p, cfg), labels);
      t.values[idx] = orig;
      const double num = (lp - lm) / (double(up) - double(down));
      EXPECT_NEAR(gt.values[idx], num, 1e-4 * std::max({std::abs(num), std::abs(gt.values[idx]), 1e-6}))
          << name << "[" << idx << "]";
    }
  });
}

TEST(Backward, ZeroHeadGivesZeroUpstream) {
  const auto cfg = tiny();
  auto p = init_params(cfg, 13);
  std::fill(p.head_w.values.begin(), p.head_w.values.end(), 0.0f);
  std::fill(p.head_b.values.begin(), p.head_b.values.end(), 0.0f);
  Rng rng(13);
  const auto seq = testutil::random_sequence(rng, 4, 8);
  const int labels[] = {1};
  const auto g = backward(one(seq), labels, p, cfg);
  EXPECT_NEAR(g.loss, std::log(2.0), 1e-12);
  g.grads.for_each([&](const std::string& name, const Tensor<double>& t) {
    if (name.rfind("head.", 0) == 0) return;
    for (double v : t.values) ASSERT_EQ(v, 0.0) << name;
  });
}

TEST(Backward, DuplicateClipDoublesContribution) {
  const auto cfg = tiny();
  const auto p = init_params(cfg, 14);
  Rng rng(14);
  const auto a = testutil::random_sequence(rng, 4, 8);
  const auto b = testutil::random_sequence(rng, 6, 8);
  const std::vector<FeatureSequence> ab{a, b};
  const std::vector<FeatureSequence> aab{a, a, b};
  const auto g_a = backward(one(a), std::vector<int>{1}, p, cfg);
  const auto g_b = backward(one(b), std::vector<int>{0}, p, cfg);
  const auto g_aab = backward(pad_batch(std::span<const FeatureSequence>(aab)), std::vector<int>{1, 1, 0}, p, cfg);
  std::vector<const Tensor<double>*> ta, tb;
  g_a.grads.for_each([&](const std::string&, const Tensor<double>& t) { ta.push_back(&t); });
  g_b.grads.for_each([&](const std::string&, const Tensor<double>& t) { tb.push_back(&t); });
  std::size_t k = 0;
  g_aab.grads.for_each([&](const std::string& name, const Tensor<double>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      // batch mean over 3 clips: (2 g_a + g_b) / 3
      ASSERT_NEAR(3.0 * t.values[i], 2.0 * ta[k]->values[i] + tb[k]->values[i], 1e-9) << name;
    }
    ++k;
  });
}

TEST(Attention, RowsSumToOneAndPaddedColumnsZero) {
  const auto cfg = tiny();
  const auto p = init_params(cfg, 15);
  Rng rng(15);
  std::vector<FeatureSequence> seqs{testutil::random_sequence(rng, 3, 8), testutil::random_sequence(rng, 7, 8)};
  const auto batch = pad_batch(std::span<const FeatureSequence>(seqs));
  const auto att = attention_weights(batch, p, cfg);
  EXPECT_EQ(att.layers, 2u);
  EXPECT_EQ(att.heads, 2u);
  EXPECT_EQ(att.t_max, 7u);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t q = 0; q < 3; ++q) {
        double s = 0.0;
        for (std::size_t k = 0; k < 7; ++k) s += att.at(l, 0, h, q, k);
        EXPECT_NEAR(s, 1.0, 1e-6);
        for (std::size_t k = 3; k < 7; ++k) EXPECT_EQ(att.at(l, 0, h, q, k), 0.0);
      }
    }
  }
  const auto single = attention_weights(one(seqs[0]), p, cfg);
  EXPECT_EQ(single.t_max, 3u);
  FeatureSequence t1{"", 1, 8, std::vector<float>(8, 0.5f)};
  const auto a1 = attention_weights(one(t1), p, cfg);
  EXPECT_EQ(a1.at(0, 0, 0, 0, 0), 1.0);
}

TEST(Params, ShapesAndValidation) {
  const auto cfg = tiny();
  const auto p = init_params(cfg, 1);
  EXPECT_NO_THROW(check_shapes(p, cfg));
  auto wrong = cfg;
  wrong.d_model = 16;
  EXPECT_THROW(check_shapes(p, wrong), FormatError);
  auto bad = cfg;
  bad.num_heads = 3;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_EQ(init_params(cfg, 1), p);
  EXPECT_NE(init_params(cfg, 2), p);
}
