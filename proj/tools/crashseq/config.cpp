#include "config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace crashseq::cli {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw, const char* expected) {
  const std::string v = trim(raw);
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, raw, expected);
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, raw, "true or false");
}

std::vector<double> parse_list(const std::string& key, const std::string& raw, std::size_t n) {
  std::string v = trim(raw);
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, item, "a number list"));
  if (out.size() != n) bad_value(key, raw, "a list of 3 numbers");
  return out;
}

std::string fmt(double x) {
  char buf[40];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string fmt_triple(const std::array<double, 3>& a) {
  return "[" + fmt(a[0]) + ", " + fmt(a[1]) + ", " + fmt(a[2]) + "]";
}

struct Key {
  const char* section;
  const char* name;
  std::function<void(RunConfig&, const std::string& full, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Field accessor helpers keep the table below one line per key.
template <typename F>
Key int_key(const char* section, const char* name, F field) {
  return {section, name,
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_number<long long>(k, v, "an integer"));
          },
          [field](RunConfig c) { return std::to_string(field(c)); }};
}

template <typename F>
Key uint_key(const char* section, const char* name, F field) {
  return {section, name,
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(
                parse_number<unsigned long long>(k, v, "a non-negative integer"));
          },
          [field](RunConfig c) { return std::to_string(field(c)); }};
}

template <typename F>
Key real_key(const char* section, const char* name, F field) {
  return {section, name,
          [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_number<double>(k, v, "a number"); },
          [field](RunConfig c) { return fmt(field(c)); }};
}

template <typename F>
Key bool_key(const char* section, const char* name, F field) {
  return {section, name,
          [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_bool(k, v); },
          [field](RunConfig c) { return std::string(field(c) ? "true" : "false"); }};
}

template <typename F>
Key triple_key(const char* section, const char* name, F field) {
  return {section, name,
          [field](RunConfig& c, const std::string& k, const std::string& v) {
            const auto xs = parse_list(k, v, 3);
            field(c) = {xs[0], xs[1], xs[2]};
          },
          [field](RunConfig c) { return fmt_triple(field(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t;
    t.push_back(int_key("preproc", "target_size", [](RunConfig& c) -> int& { return c.preproc.target_size; }));
    t.push_back(int_key("preproc", "frame_stride", [](RunConfig& c) -> int& { return c.preproc.frame_stride; }));
    t.push_back(triple_key("preproc", "mean", [](RunConfig& c) -> std::array<double, 3>& { return c.preproc.mean; }));
    t.push_back(triple_key("preproc", "std", [](RunConfig& c) -> std::array<double, 3>& { return c.preproc.std; }));

    t.push_back(real_key("modality", "blend", [](RunConfig& c) -> double& { return c.modality.blend; }));
    t.push_back(real_key("modality", "flow_alpha", [](RunConfig& c) -> double& { return c.modality.flow_params.alpha; }));
    t.push_back(int_key("modality", "flow_iterations", [](RunConfig& c) -> int& { return c.modality.flow_params.iterations; }));
    t.push_back(int_key("modality", "flow_levels", [](RunConfig& c) -> int& { return c.modality.flow_params.levels; }));
    t.push_back(real_key("modality", "flow_max_mag", [](RunConfig& c) -> double& { return c.modality.flow_max_mag; }));

    Key input_dim = uint_key("model", "input_dim", [](RunConfig& c) -> std::size_t& { return c.model.input_dim; });
    input_dim.set = [inner = input_dim.set](RunConfig& c, const std::string& k, const std::string& v) {
      inner(c, k, v);
      c.input_dim_explicit = true;
    };
    t.push_back(input_dim);
    t.push_back(uint_key("model", "d_model", [](RunConfig& c) -> std::size_t& { return c.model.d_model; }));
    t.push_back(uint_key("model", "num_layers", [](RunConfig& c) -> std::size_t& { return c.model.num_layers; }));
    t.push_back(uint_key("model", "num_heads", [](RunConfig& c) -> std::size_t& { return c.model.num_heads; }));
    t.push_back(uint_key("model", "ffn_dim", [](RunConfig& c) -> std::size_t& { return c.model.ffn_dim; }));
    t.push_back(real_key("model", "dropout", [](RunConfig& c) -> double& { return c.model.dropout_rate; }));
    t.push_back(uint_key("model", "num_classes", [](RunConfig& c) -> std::size_t& { return c.model.num_classes; }));
    t.push_back(uint_key("model", "max_len", [](RunConfig& c) -> std::size_t& { return c.model.max_len; }));

    t.push_back(real_key("train", "learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; }));
    t.push_back(real_key("train", "beta1", [](RunConfig& c) -> double& { return c.train.beta1; }));
    t.push_back(real_key("train", "beta2", [](RunConfig& c) -> double& { return c.train.beta2; }));
    t.push_back(real_key("train", "epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }));
    t.push_back(uint_key("train", "batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; }));
    t.push_back(int_key("train", "epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    t.push_back(real_key("train", "grad_clip_norm", [](RunConfig& c) -> double& { return c.train.grad_clip_norm; }));
    t.push_back(uint_key("train", "seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }));
    t.push_back(bool_key("train", "shuffle", [](RunConfig& c) -> bool& { return c.train.shuffle; }));
    t.push_back(real_key("train", "val_fraction", [](RunConfig& c) -> double& { return c.val_fraction; }));
    t.push_back(bool_key("train", "center_time", [](RunConfig& c) -> bool& { return c.center_time; }));

    t.push_back(int_key("synth", "per_class", [](RunConfig& c) -> int& { return c.synth.num_clips_per_class; }));
    t.push_back(int_key("synth", "frames", [](RunConfig& c) -> int& { return c.synth.frames_per_clip; }));
    t.push_back(int_key("synth", "image_size", [](RunConfig& c) -> int& { return c.synth.image_size; }));
    t.push_back(int_key("synth", "num_blobs", [](RunConfig& c) -> int& { return c.synth.num_blobs; }));
    t.push_back(real_key("synth", "speed_min", [](RunConfig& c) -> double& { return c.synth.speed_min; }));
    t.push_back(real_key("synth", "speed_max", [](RunConfig& c) -> double& { return c.synth.speed_max; }));
    t.push_back(real_key("synth", "window_start", [](RunConfig& c) -> double& { return c.synth.accident_window[0]; }));
    t.push_back(real_key("synth", "window_end", [](RunConfig& c) -> double& { return c.synth.accident_window[1]; }));
    t.push_back(uint_key("synth", "seed", [](RunConfig& c) -> std::uint64_t& { return c.synth.seed; }));
    return t;
  }();
  return table;
}

const Key& find_key(const std::string& section, const std::string& name) {
  for (const auto& k : keys()) {
    if (section == k.section && name == k.name) return k;
  }
  throw ConfigError("unknown config key '" + (section.empty() ? name : section + "." + name) + "'");
}

void apply(RunConfig& cfg, const std::string& section, const std::string& name, const std::string& value) {
  find_key(section, name).set(cfg, section + "." + name, value);
}

void validate(const RunConfig& cfg) {
  try {
    cfg.preproc.validate();
    cfg.modality.flow_params.validate();
    if (!(cfg.modality.blend >= 0.0 && cfg.modality.blend <= 1.0)) {
      throw InvalidArgument("modality.blend must lie in [0, 1]");
    }
    if (cfg.modality.flow_max_mag < 0.0) throw InvalidArgument("modality.flow_max_mag must be >= 0");
    cfg.model.validate();
    cfg.train.validate();
    if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) {
      throw InvalidArgument("train.val_fraction must lie in [0, 1)");
    }
    cfg.synth.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

RunConfig resolve(const boost::property_tree::ptree* tree, const Overrides& overrides) {
  RunConfig cfg;
  if (tree != nullptr) {
    for (const auto& [section, body] : *tree) {
      if (body.empty()) {
        throw ConfigError("config key '" + section + "' must sit inside a [section]");
      }
      for (const auto& [name, leaf] : body) apply(cfg, section, name, leaf.data());
    }
  }
  for (const auto& [full, value] : overrides) {
    const auto dot = full.find('.');
    if (dot == std::string::npos) throw ConfigError("override '" + full + "' must be section.key");
    apply(cfg, full.substr(0, dot), full.substr(dot + 1), value);
  }
  validate(cfg);
  return cfg;
}

}  // namespace

RunConfig parse_config_text(const std::string& text, const Overrides& overrides) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return resolve(&tree, overrides);
}

RunConfig parse_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides) {
  if (!path) return resolve(nullptr, overrides);
  std::ifstream in(*path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path->string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  std::string current;
  for (const auto& k : keys()) {
    if (current != k.section) {
      if (!current.empty()) out += "\n";
      current = k.section;
      out += "[" + current + "]\n";
    }
    if (std::string(k.name) == "input_dim" && !cfg.input_dim_explicit) continue;
    out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  }
  return out;
}

}  // namespace crashseq::cli
