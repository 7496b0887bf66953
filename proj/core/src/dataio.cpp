#include "crashseq/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "crashseq/error.hpp"
#include "crashseq/random.hpp"

namespace crashseq {

using nlohmann::json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "unassigned") return Split::unassigned;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

namespace {

const std::set<std::string> kManifestFields{"clip_id", "frames_path", "label", "split", "num_frames"};

[[noreturn]] void manifest_error(std::size_t line, const std::string& what) {
  throw FormatError("manifest line " + std::to_string(line) + ": " + what);
}

ClipManifestEntry parse_manifest_line(const std::string& text, std::size_t line) {
  json obj;
  try {
    obj = json::parse(text);
  } catch (const json::parse_error& e) {
    manifest_error(line, std::string("invalid JSON: ") + e.what());
  }
  if (!obj.is_object()) manifest_error(line, "expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!kManifestFields.contains(key)) manifest_error(line, "unknown field '" + key + "'");
  }
  for (const auto& key : kManifestFields) {
    if (!obj.contains(key)) manifest_error(line, "missing field '" + key + "'");
  }

  ClipManifestEntry e;
  if (!obj["clip_id"].is_string() || obj["clip_id"].get<std::string>().empty()) {
    manifest_error(line, "field 'clip_id' must be a non-empty string");
  }
  e.clip_id = obj["clip_id"].get<std::string>();
  if (!obj["frames_path"].is_string()) manifest_error(line, "field 'frames_path' must be a string");
  e.frames_path = obj["frames_path"].get<std::string>();

  const auto& label = obj["label"];
  if (!label.is_number_integer() || (label.get<std::int64_t>() != 0 && label.get<std::int64_t>() != 1)) {
    manifest_error(line, "field 'label' must be 0 or 1, got " + label.dump());
  }
  e.label = label.get<int>();

  if (!obj["split"].is_string()) manifest_error(line, "field 'split' must be a string");
  try {
    e.split = parse_split(obj["split"].get<std::string>());
  } catch (const FormatError&) {
    manifest_error(line, "field 'split' must be train|test|unassigned, got " + obj["split"].dump());
  }

  const auto& nf = obj["num_frames"];
  if (!nf.is_number_integer() || nf.get<std::int64_t>() < 2) {
    manifest_error(line, "field 'num_frames' must be an integer >= 2, got " + nf.dump());
  }
  e.num_frames = nf.get<int>();
  return e;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<ClipManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ClipManifestEntry> entries;
  std::unordered_set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    auto entry = parse_manifest_line(line, lineno);
    if (!seen.insert(entry.clip_id).second) {
      manifest_error(lineno, "duplicate clip_id '" + entry.clip_id + "'");
    }
    entries.push_back(std::move(entry));
  }
  return entries;
}

std::vector<ClipManifestEntry> load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_manifest(std::span<const ClipManifestEntry> entries) {
  std::string out;
  for (const auto& e : entries) {
    json obj = json::object();
    obj["clip_id"] = e.clip_id;
    obj["frames_path"] = e.frames_path.generic_string();
    obj["label"] = e.label;
    obj["split"] = std::string(to_string(e.split));
    obj["num_frames"] = e.num_frames;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(std::span<const ClipManifestEntry> entries, const std::filesystem::path& path) {
  write_file_atomic(path, format_manifest(entries));
}

std::filesystem::path resolve_frames_path(const ClipManifestEntry& entry,
                                          const std::filesystem::path& manifest_path) {
  if (entry.frames_path.is_absolute()) return entry.frames_path;
  return manifest_path.parent_path() / entry.frames_path;
}

std::vector<RgbImage> read_frame_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& item : std::filesystem::directory_iterator(dir)) {
    if (!item.is_regular_file()) continue;
    auto ext = item.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".ppm") files.push_back(item.path());
  }
  if (files.empty()) throw FormatError("no frame images in " + dir.string());
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });

  std::vector<RgbImage> frames;
  frames.reserve(files.size());
  for (const auto& f : files) {
    frames.push_back(read_image(f));
    if (!frames.back().same_size(frames.front())) {
      throw FormatError("mixed resolutions in " + dir.string() + ": " + f.filename().string());
    }
  }
  return frames;
}

std::vector<std::uint8_t> encode_avfx(const FeatureSequence& seq) {
  if (seq.frames < 1 || seq.dim < 1) throw InvalidArgument("AVFX: T and D must be >= 1");
  if (seq.values.size() != static_cast<std::size_t>(seq.frames) * seq.dim) {
    throw InvalidArgument("AVFX: payload size does not match T x D");
  }
  std::vector<std::uint8_t> out{'A', 'V', 'F', 'X'};
  out.reserve(kAvfxHeaderBytes + seq.values.size() * 4);
  put_u32(out, kAvfxVersion);
  put_u32(out, 0);
  put_u32(out, seq.frames);
  put_u32(out, seq.dim);
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    const float v = seq.values[i];
    if (!std::isfinite(v)) {
      throw NumericError("AVFX: non-finite value at index " + std::to_string(i));
    }
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

FeatureSequence decode_avfx(std::span<const std::uint8_t> bytes, std::string clip_id) {
  if (bytes.size() < kAvfxHeaderBytes) throw FormatError("AVFX: truncated header");
  if (std::memcmp(bytes.data(), "AVFX", 4) != 0) throw FormatError("AVFX: bad magic");
  if (const auto version = get_u32(bytes, 4); version != kAvfxVersion) {
    throw FormatError("AVFX: unsupported version " + std::to_string(version));
  }
  if (get_u32(bytes, 8) != 0) throw FormatError("AVFX: reserved field is not zero");
  FeatureSequence seq;
  seq.clip_id = std::move(clip_id);
  seq.frames = get_u32(bytes, 12);
  seq.dim = get_u32(bytes, 16);
  if (seq.frames < 1 || seq.dim < 1) throw FormatError("AVFX: T and D must be >= 1");
  const std::uint64_t count = static_cast<std::uint64_t>(seq.frames) * seq.dim;
  const std::uint64_t payload = bytes.size() - kAvfxHeaderBytes;
  if (payload < count * 4) {
    throw FormatError("AVFX: truncated payload, expected " + std::to_string(count * 4) + " bytes, got " +
                      std::to_string(payload));
  }
  if (payload > count * 4) {
    throw FormatError("AVFX: " + std::to_string(payload - count * 4) + " trailing bytes after payload");
  }
  seq.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    seq.values[i] = std::bit_cast<float>(get_u32(bytes, kAvfxHeaderBytes + 4 * i));
    if (!std::isfinite(seq.values[i])) throw FormatError("AVFX: non-finite value in payload");
  }
  return seq;
}

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path) {
  write_file_atomic(path, encode_avfx(seq));
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
  const auto name = path.filename().string();
  try {
    return decode_avfx(read_file_bytes(path), name.substr(0, name.find('.')));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

DatasetSplit split_dataset(std::span<const ClipManifestEntry> entries, double train_fraction,
                           std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train_fraction must lie in (0, 1)");
  }
  if (entries.empty()) throw InvalidArgument("cannot split an empty manifest");

  std::vector<bool> to_train(entries.size(), false);
  DatasetSplit result;
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].label == label) members.push_back(i);
    }
    if (members.empty()) {
      result.warnings.push_back("label " + std::to_string(label) + " has no entries");
      continue;
    }
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * members.size()));
    const auto perm = keyed_permutation(members.size(), derive_seed(seed, static_cast<std::uint64_t>(label)));
    for (std::size_t k = 0; k < n_train; ++k) to_train[members[perm[k]]] = true;
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ClipManifestEntry e = entries[i];
    e.split = to_train[i] ? Split::train : Split::test;
    (to_train[i] ? result.train : result.test).push_back(std::move(e));
  }
  return result;
}

}  // namespace crashseq
