#include "crashseq/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <json.hpp>

#include "crashseq/error.hpp"

namespace crashseq {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'Q', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim}, {"d_model", c.d_model},   {"num_layers", c.num_layers},
          {"num_heads", c.num_heads}, {"ffn_dim", c.ffn_dim},   {"dropout_rate", c.dropout_rate},
          {"num_classes", c.num_classes}, {"max_len", c.max_len}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  return c;
}

json pipeline_to_json(const FeaturePipeline& p) {
  return {{"modality", std::string(to_string(p.modality.kind))},
          {"blend", p.modality.blend},
          {"flow_alpha", p.modality.flow_params.alpha},
          {"flow_iterations", p.modality.flow_params.iterations},
          {"flow_levels", p.modality.flow_params.levels},
          {"flow_max_mag", p.modality.flow_max_mag},
          {"target_size", p.preproc.target_size},
          {"mean", p.preproc.mean},
          {"std", p.preproc.std},
          {"frame_stride", p.preproc.frame_stride},
          {"extractor_seed", p.extractor_seed},
          {"normalizer",
           {{"center_time", p.normalizer.center_time}, {"mean", p.normalizer.mean}, {"scale", p.normalizer.scale}}}};
}

FeaturePipeline pipeline_from_json(const json& j) {
  FeaturePipeline p;
  p.modality.kind = parse_modality(j.at("modality").get<std::string>());
  p.modality.blend = j.at("blend").get<double>();
  p.modality.flow_params.alpha = j.at("flow_alpha").get<double>();
  p.modality.flow_params.iterations = j.at("flow_iterations").get<int>();
  p.modality.flow_params.levels = j.at("flow_levels").get<int>();
  p.modality.flow_max_mag = j.at("flow_max_mag").get<double>();
  p.preproc.target_size = j.at("target_size").get<int>();
  p.preproc.mean = j.at("mean").get<std::array<double, 3>>();
  p.preproc.std = j.at("std").get<std::array<double, 3>>();
  p.preproc.frame_stride = j.at("frame_stride").get<int>();
  p.extractor_seed = j.at("extractor_seed").get<std::uint64_t>();
  const auto& n = j.at("normalizer");
  p.normalizer.center_time = n.at("center_time").get<bool>();
  p.normalizer.mean = n.at("mean").get<std::vector<float>>();
  p.normalizer.scale = n.at("scale").get<std::vector<float>>();
  if (p.normalizer.mean.size() != p.normalizer.scale.size()) {
    throw FormatError("checkpoint: normalizer mean/scale length mismatch");
  }
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  check_shapes(ckpt.params, ckpt.config);

  json tensors = json::array();
  std::uint64_t offset = 0;
  ckpt.params.for_each([&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.size()}});
    offset += t.size() * 4;
  });
  const json header = {
      {"config", config_to_json(ckpt.config)},
      {"tensors", tensors},
      {"metadata",
       {{"epoch", ckpt.metadata.epoch},
        {"seed", ckpt.metadata.seed},
        {"loss_history", ckpt.metadata.loss_history},
        {"val_accuracy_history", ckpt.metadata.val_accuracy_history}}},
      {"pipeline", pipeline_to_json(ckpt.pipeline)},
  };
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  ckpt.params.for_each([&](const std::string&, const Tensor<float>& t) {
    for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  });
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw FormatError("checkpoint: truncated preamble");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.format_version = get_u32(bytes, 8);
  if (ckpt.format_version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.format_version));
  }
  const std::uint32_t header_len = get_u32(bytes, 12);
  if (bytes.size() - 16 < header_len) throw FormatError("checkpoint: truncated header");

  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
    ckpt.config = config_from_json(header.at("config"));
    const auto& meta = header.at("metadata");
    ckpt.metadata.epoch = meta.at("epoch").get<int>();
    ckpt.metadata.seed = meta.at("seed").get<std::uint64_t>();
    ckpt.metadata.loss_history = meta.at("loss_history").get<std::vector<double>>();
    ckpt.metadata.val_accuracy_history = meta.at("val_accuracy_history").get<std::vector<double>>();
    ckpt.pipeline = pipeline_from_json(header.at("pipeline"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  try {
    ckpt.config.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }

  // Layout comes from the config; the index must agree with it exactly.
  ckpt.params = zero_params(ckpt.config);
  const auto& index = header.at("tensors");
  std::size_t expected_tensors = 0;
  ckpt.params.for_each([&](const std::string&, const Tensor<float>&) { ++expected_tensors; });
  if (!index.is_array() || index.size() != expected_tensors) {
    throw FormatError("checkpoint: tensor index does not match config");
  }
  const std::size_t payload_start = 16 + header_len;
  std::size_t k = 0;
  std::uint64_t expected_offset = 0;
  ckpt.params.for_each([&](const std::string& name, Tensor<float>& t) {
    const auto& entry = index[k++];
    if (entry.at("name").get<std::string>() != name) {
      throw FormatError("checkpoint: expected tensor '" + name + "', found '" + entry.at("name").get<std::string>() + "'");
    }
    if (entry.at("shape").get<std::vector<std::size_t>>() != t.shape) {
      throw FormatError("checkpoint: tensor '" + name + "' shape disagrees with config");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (offset != expected_offset || count != t.size()) {
      throw FormatError("checkpoint: tensor '" + name + "' has an inconsistent offset or count");
    }
    if (payload_start + offset + count * 4 > bytes.size()) {
      throw FormatError("checkpoint: truncated payload in tensor '" + name + "'");
    }
    for (std::size_t i = 0; i < count; ++i) {
      t.values[i] = std::bit_cast<float>(get_u32(bytes, payload_start + offset + 4 * i));
    }
    expected_offset += count * 4;
  });
  if (payload_start + expected_offset != bytes.size()) {
    throw FormatError("checkpoint: trailing bytes after payload");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace crashseq
