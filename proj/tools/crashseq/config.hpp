#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <crashseq/error.hpp>
#include <crashseq/featx.hpp>
#include <crashseq/model.hpp>
#include <crashseq/synth.hpp>
#include <crashseq/train.hpp>

namespace crashseq::cli {

// Bad config keys or values; reported as a usage error.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct RunConfig {
  PreprocConfig preproc;
  ModalitySpec modality;
  ModelConfig model;
  // input_dim follows the features unless set explicitly.
  bool input_dim_explicit = false;
  TrainConfig train;
  double val_fraction = 0.0;
  bool center_time = true;
  SynthConfig synth;
};

// "section.key" -> raw value, applied after the file.
using Overrides = std::vector<std::pair<std::string, std::string>>;

// Defaults, then the INI/TOML-style file (if any), then overrides. Unknown
// sections or keys and unparsable values throw ConfigError.
RunConfig parse_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides = {});
RunConfig parse_config_text(const std::string& text, const Overrides& overrides = {});

// Every key with its resolved value; parse_config_text reads it back.
std::string format_config(const RunConfig& cfg);

}  // namespace crashseq::cli
