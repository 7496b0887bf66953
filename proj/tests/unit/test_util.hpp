#pragma once

#include <filesystem>
#include <string>

#include <crashseq/dataio.hpp>
#include <crashseq/random.hpp>

namespace testutil {

// Fresh directory under the system temp dir, removed first if present.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "crashseq_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline crashseq::FeatureSequence random_sequence(crashseq::Rng& rng, std::size_t frames, std::size_t dim,
                                                 double scale = 1.0) {
  crashseq::FeatureSequence s;
  s.frames = static_cast<std::uint32_t>(frames);
  s.dim = static_cast<std::uint32_t>(dim);
  s.values.resize(frames * dim);
  for (auto& v : s.values) v = static_cast<float>(scale * crashseq::standard_normal(rng));
  return s;
}

}  // namespace testutil
