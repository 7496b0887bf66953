#include <gtest/gtest.h>

#include <crashseq/checkpoint.hpp>
#include <crashseq/error.hpp>

#include "test_util.hpp"

using namespace crashseq;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.config.input_dim = 6;
  c.config.d_model = 8;
  c.config.num_layers = 2;
  c.config.num_heads = 2;
  c.config.ffn_dim = 16;
  c.config.dropout_rate = 0.25;
  c.config.max_len = 40;
  c.params = init_params(c.config, 77);
  Rng rng(1);
  c.params.for_each([&](const std::string&, Tensor<float>& t) {
    for (auto& v : t.values) v += static_cast<float>(standard_normal(rng));
  });
  c.metadata = {12, 99, {0.69, 0.5, 0.25}, {0.5, 0.6, 0.7}};
  c.pipeline.modality.kind = ModalityKind::overlay;
  c.pipeline.modality.blend = 0.3;
  c.pipeline.modality.flow_params = {2.0, 50, 2};
  c.pipeline.modality.flow_max_mag = 3.5;
  c.pipeline.preproc.frame_stride = 3;
  c.pipeline.extractor_seed = 4;
  c.pipeline.normalizer = {true, std::vector<float>(6, 0.5f), std::vector<float>(6, 2.0f)};
  return c;
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  const auto c = sample();
  const auto dir = testutil::temp_dir("ckpt");
  save_checkpoint(c, dir / "model.ckpt");
  const auto back = load_checkpoint(dir / "model.ckpt");
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.config, c.config);
  EXPECT_EQ(back.metadata.epoch, 12);
  EXPECT_EQ(back.metadata.seed, 99u);
  EXPECT_EQ(back.metadata.loss_history, c.metadata.loss_history);
  EXPECT_EQ(back.metadata.val_accuracy_history, c.metadata.val_accuracy_history);
  EXPECT_EQ(back.pipeline.modality.kind, ModalityKind::overlay);
  EXPECT_EQ(back.pipeline.modality.blend, 0.3);
  EXPECT_EQ(back.pipeline.modality.flow_params.iterations, 50);
  EXPECT_EQ(back.pipeline.modality.flow_max_mag, 3.5);
  EXPECT_EQ(back.pipeline.preproc.frame_stride, 3);
  EXPECT_EQ(back.pipeline.extractor_seed, 4u);
  EXPECT_EQ(back.pipeline.normalizer, c.pipeline.normalizer);
  EXPECT_EQ(encode_checkpoint(back), read_file_bytes(dir / "model.ckpt"));
}

TEST(Checkpoint, LayoutPreamble) {
  const auto bytes = encode_checkpoint(sample());
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CSEQCKPT");
  EXPECT_EQ(bytes[8], kCheckpointVersion);
  std::uint32_t header_len = 0;
  for (int i = 0; i < 4; ++i) header_len |= static_cast<std::uint32_t>(bytes[12 + i]) << (8 * i);
  EXPECT_EQ(bytes[16], '{');
  EXPECT_EQ(bytes.size() - 16 - header_len, sample().params.parameter_count() * 4);
}

TEST(Checkpoint, ForwardIdenticalAfterLoad) {
  const auto c = sample();
  const auto back = decode_checkpoint(encode_checkpoint(c));
  Rng rng(2);
  const auto seq = testutil::random_sequence(rng, 5, 6);
  const auto batch = pad_batch(std::span<const FeatureSequence>(&seq, 1));
  EXPECT_EQ(forward(batch, back.params, back.config), forward(batch, c.params, c.config));
}

TEST(Checkpoint, CorruptionDetected) {
  auto bytes = encode_checkpoint(sample());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_THROW(decode_checkpoint(truncated), FormatError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad_version), FormatError);
  EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(10, 0)), FormatError);
  EXPECT_THROW(load_checkpoint(testutil::temp_dir("ckpt_missing") / "nope"), Error);
}
