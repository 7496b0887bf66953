#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include <crashseq/checkpoint.hpp>
#include <crashseq/dataio.hpp>
#include <crashseq/error.hpp>
#include <crashseq/eval.hpp>
#include <crashseq/featx.hpp>
#include <crashseq/optflow.hpp>
#include <crashseq/parallel.hpp>
#include <crashseq/random.hpp>
#include <crashseq/synth.hpp>
#include <crashseq/train.hpp>
#include <crashseq/vlm.hpp>

#include "config.hpp"

namespace crashseq::cli {

namespace fs = std::filesystem;

namespace {

// Semantic flag problems found after parsing; exit code 1.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<ModalityKind> parse_kinds(const std::string& text) {
  if (text == "all") return {kAllModalities.begin(), kAllModalities.end()};
  try {
    return {parse_modality(text)};
  } catch (const Error& e) {
    throw UsageError(std::string("--modality: ") + e.what());
  }
}

std::optional<Split> parse_split_flag(const std::string& text) {
  if (text == "all") return std::nullopt;
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  throw UsageError("--split must be train, test or all, got '" + text + "'");
}

// Manifests without split marks are split 70:30 with the run seed.
std::vector<ClipManifestEntry> select_split(std::vector<ClipManifestEntry> entries, std::optional<Split> split,
                                            std::uint64_t seed, std::ostream& err) {
  const bool unmarked = std::all_of(entries.begin(), entries.end(),
                                    [](const auto& e) { return e.split == Split::unassigned; });
  if (unmarked && split) {
    const auto s = split_dataset(entries, 0.7, seed);
    for (const auto& w : s.warnings) err << "warning: " << w << "\n";
    err << "manifest has no split marks; using a seeded 70:30 split\n";
    std::map<std::string, Split> marks;
    for (const auto& t : s.train) marks[t.clip_id] = Split::train;
    for (const auto& t : s.test) marks[t.clip_id] = Split::test;
    for (auto& e : entries) e.split = marks.at(e.clip_id);
  }
  if (!split) return entries;
  std::vector<ClipManifestEntry> out;
  for (auto& e : entries) {
    if (e.split == *split) out.push_back(std::move(e));
  }
  if (out.empty()) throw InvalidArgument("manifest has no clips in split '" + std::string(to_string(*split)) + "'");
  return out;
}

struct FeatureSource {
  ModalitySpec spec;
  PreprocConfig preproc;
  std::uint64_t extractor_seed = 0;
  std::optional<fs::path> features_dir;
  fs::path manifest_dir;
};

// result[k][i] belongs to kinds[k] and entries[i]. Clips run in parallel.
std::vector<std::vector<FeatureSequence>> load_features(std::span<const ClipManifestEntry> entries,
                                                        std::span<const ModalityKind> kinds,
                                                        const FeatureSource& src, std::ostream& err) {
  const auto start = Clock::now();
  const FeatureExtractor extractor(src.extractor_seed);
  AssembleOptions options;
  options.features_dir = src.features_dir;
  options.manifest_dir = src.manifest_dir;
  std::vector<std::vector<FeatureSequence>> per_clip(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    per_clip[i] = assemble_modalities(entries[i], kinds, src.spec, src.preproc, extractor, options);
  });
  std::vector<std::vector<FeatureSequence>> result(kinds.size());
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    result[k].reserve(entries.size());
    for (auto& clip : per_clip) result[k].push_back(std::move(clip[k]));
  }
  char line[128];
  std::snprintf(line, sizeof line, "features: %zu clips x %zu modalities in %.1fs\n", entries.size(), kinds.size(),
                seconds_since(start));
  err << line;
  return result;
}

std::vector<LabeledSequence> label(std::span<const ClipManifestEntry> entries, std::vector<FeatureSequence> feats) {
  std::vector<LabeledSequence> out;
  out.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) out.push_back({std::move(feats[i]), entries[i].label});
  return out;
}

fs::path manifest_base(const fs::path& manifest) {
  const auto parent = manifest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

std::string sub_path(const fs::path& base, ModalityKind kind, bool nested, std::string_view leaf) {
  return (nested ? base / std::string(to_string(kind)) / std::string(leaf) : base / std::string(leaf)).string();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, text);
}

// ---- subcommands ----------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::optional<std::string> config;
  CLI::Option* per_class = nullptr;
  CLI::Option* frames = nullptr;
  CLI::Option* seed = nullptr;
  std::string per_class_v, frames_v, seed_v;
};

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
  Overrides ov;
  if (a.per_class->count()) ov.emplace_back("synth.per_class", a.per_class_v);
  if (a.frames->count()) ov.emplace_back("synth.frames", a.frames_v);
  if (a.seed->count()) ov.emplace_back("synth.seed", a.seed_v);
  const auto cfg = parse_config(a.config, ov);
  const auto start = Clock::now();
  const auto manifest = generate_dataset(cfg.synth, a.out);
  char line[96];
  std::snprintf(line, sizeof line, "synth: %d clips in %.1fs\n", 2 * cfg.synth.num_clips_per_class,
                seconds_since(start));
  err << line;
  out << manifest.string() << "\n";
  return kOk;
}

struct FlowArgs {
  std::string frames_dir;
  std::string out;
  double alpha = 1.0;
  int iters = 100;
  int levels = 3;
  std::string render = "color";
  double max_mag = ModalitySpec{}.flow_max_mag;
  double blend = 0.5;
  int stride = 1;
};

int cmd_flow(const FlowArgs& a, std::ostream& out, std::ostream& err) {
  const FlowParams params{a.alpha, a.iters, a.levels};
  try {
    params.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  if (a.render != "color" && a.render != "overlay") throw UsageError("--render must be color or overlay");
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  if (a.max_mag < 0.0) throw UsageError("--max-mag must be >= 0");
  if (!(a.blend >= 0.0 && a.blend <= 1.0)) throw UsageError("--blend must lie in [0, 1]");

  const auto start = Clock::now();
  const auto all = read_frame_sequence(a.frames_dir);
  const auto frames = sample_frames(std::span<const RgbImage>(all), a.stride);
  if (frames.size() < 2) throw InvalidArgument("need at least 2 frames after sampling, got " + std::to_string(frames.size()));
  const auto flows = flow_sequence(frames, params);
  std::vector<RgbImage> images(flows.size());
  parallel_for(flows.size(), [&](std::size_t t) {
    images[t] = flow_to_color(flows[t], a.max_mag);
    if (a.render == "overlay") images[t] = overlay(frames[t], images[t], a.blend);
  });
  write_flow_frames(images, a.out);
  char line[96];
  std::snprintf(line, sizeof line, "flow: %zu fields in %.1fs\n", flows.size(), seconds_since(start));
  err << line;
  out << a.out << "\n";
  return kOk;
}

struct FeaturesArgs {
  std::string manifest;
  std::string modality = "all";
  std::optional<std::string> features_dir;
  std::string out;
  std::optional<std::string> config;
  std::string split = "all";
  CLI::Option* seed = nullptr;
  std::string seed_v;
};

int cmd_features(const FeaturesArgs& a, std::ostream& out, std::ostream& err) {
  Overrides ov;
  if (a.seed->count()) ov.emplace_back("train.seed", a.seed_v);
  const auto cfg = parse_config(a.config, ov);
  const auto kinds = parse_kinds(a.modality);
  const auto split = parse_split_flag(a.split);
  err << "# resolved config\n" << format_config(cfg);

  std::vector<ModalityKind> streams;
  for (auto k : kinds) {
    if (k == ModalityKind::rgb || k == ModalityKind::rgb_concat_flow) streams.push_back(ModalityKind::rgb);
    if (k == ModalityKind::flow || k == ModalityKind::rgb_concat_flow) streams.push_back(ModalityKind::flow);
    if (k == ModalityKind::overlay) streams.push_back(ModalityKind::overlay);
  }
  std::sort(streams.begin(), streams.end());
  streams.erase(std::unique(streams.begin(), streams.end()), streams.end());

  const auto entries = select_split(load_manifest(a.manifest), split, cfg.train.seed, err);
  FeatureSource src{cfg.modality, cfg.preproc, cfg.train.seed, {}, manifest_base(a.manifest)};
  if (a.features_dir) src.features_dir = fs::path(*a.features_dir);
  const auto feats = load_features(entries, streams, src, err);
  fs::create_directories(a.out);
  for (std::size_t k = 0; k < streams.size(); ++k) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      write_feature_file(feats[k][i], feature_file_path(a.out, entries[i].clip_id, to_string(streams[k])));
    }
  }
  out << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string manifest;
  std::string modality;
  std::optional<std::string> config;
  std::string out;
  std::optional<std::string> features_dir;
  std::vector<std::pair<CLI::Option*, std::string>> flags;  // option, config key
  std::map<std::string, std::string> values;                // config key -> raw value
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  Overrides ov;
  for (const auto& [opt, key] : a.flags) {
    if (opt->count()) ov.emplace_back(key, a.values.at(key));
  }
  const auto cfg = parse_config(a.config, ov);
  const auto kinds = parse_kinds(a.modality);
  const std::string resolved = format_config(cfg);
  err << "# resolved config\n" << resolved;

  auto entries = select_split(load_manifest(a.manifest), Split::train, cfg.train.seed, err);
  std::vector<ClipManifestEntry> val_entries;
  if (cfg.val_fraction > 0.0) {
    const auto s = split_dataset(entries, 1.0 - cfg.val_fraction, derive_seed(cfg.train.seed, 3));
    entries = s.train;
    val_entries = s.test;
  }
  FeatureSource src{cfg.modality, cfg.preproc, cfg.train.seed, {}, manifest_base(a.manifest)};
  if (a.features_dir) src.features_dir = fs::path(*a.features_dir);
  auto train_feats = load_features(entries, kinds, src, err);
  std::vector<std::vector<FeatureSequence>> val_feats(kinds.size());
  if (!val_entries.empty()) val_feats = load_features(val_entries, kinds, src, err);

  const bool nested = kinds.size() > 1;
  fs::create_directories(a.out);
  write_text(fs::path(a.out) / "config.ini", resolved);
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    const auto kind = kinds[k];
    const auto raw_train = label(entries, std::move(train_feats[k]));
    const auto raw_val = label(val_entries, std::move(val_feats[k]));
    const auto normalizer = FeatureNormalizer::fit(raw_train, cfg.center_time);
    const auto train_set = normalizer.apply(raw_train);
    const auto val_set = normalizer.apply(raw_val);

    ModelConfig mc = cfg.model;
    const auto dim = raw_train.front().features.dim;
    if (cfg.input_dim_explicit && mc.input_dim != dim) {
      throw InvalidArgument(std::string(to_string(kind)) + ": feature dim " + std::to_string(dim) +
                            " does not match model.input_dim " + std::to_string(mc.input_dim));
    }
    mc.input_dim = dim;

    const auto start = Clock::now();
    const auto result = fit(train_set, val_set, mc, cfg.train, [&](const EpochRecord& r) {
      char line[128];
      std::snprintf(line, sizeof line, "%s epoch %d/%d loss %.6f", std::string(to_string(kind)).c_str(), r.epoch,
                    cfg.train.epochs, r.train_loss);
      err << line;
      if (!val_set.empty()) {
        std::snprintf(line, sizeof line, " val_acc %.4f", r.val_accuracy);
        err << line;
      }
      err << "\n";
    });

    Checkpoint ckpt;
    ckpt.config = mc;
    ckpt.pipeline = {cfg.modality, cfg.preproc, cfg.train.seed, normalizer};
    ckpt.pipeline.modality.kind = kind;
    ckpt.metadata.seed = cfg.train.seed;
    for (const auto& r : result.history) {
      ckpt.metadata.loss_history.push_back(r.train_loss);
      ckpt.metadata.val_accuracy_history.push_back(r.val_accuracy);
    }
    ckpt.params = result.best_params;
    ckpt.metadata.epoch = result.best_epoch;
    const fs::path best = sub_path(a.out, kind, nested, "best");
    fs::create_directories(best.parent_path());
    save_checkpoint(ckpt, best);
    ckpt.params = result.final_params;
    ckpt.metadata.epoch = cfg.train.epochs;
    save_checkpoint(ckpt, sub_path(a.out, kind, nested, "final"));

    char line[160];
    std::snprintf(line, sizeof line, "%s: best epoch %d, final train loss %.6f, %.1fs\n",
                  std::string(to_string(kind)).c_str(), result.best_epoch, result.history.back().train_loss,
                  seconds_since(start));
    out << line;
  }
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::optional<std::string> modality;
  std::optional<std::string> dump_predictions;
  std::optional<std::string> features_dir;
  std::optional<std::string> out;
  std::string format = "text";
};

bool same_pipeline(const FeaturePipeline& a, const FeaturePipeline& b) {
  return a.preproc.target_size == b.preproc.target_size && a.preproc.mean == b.preproc.mean &&
         a.preproc.std == b.preproc.std && a.preproc.frame_stride == b.preproc.frame_stride &&
         a.modality.blend == b.modality.blend && a.modality.flow_params.alpha == b.modality.flow_params.alpha &&
         a.modality.flow_params.iterations == b.modality.flow_params.iterations &&
         a.modality.flow_params.levels == b.modality.flow_params.levels &&
         a.modality.flow_max_mag == b.modality.flow_max_mag && a.extractor_seed == b.extractor_seed;
}

fs::path checkpoint_file(const fs::path& p) { return fs::is_directory(p) ? p / "best" : p; }

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  if (a.format != "text" && a.format != "csv") throw UsageError("--format must be text or csv");
  const auto split = parse_split_flag(a.split);
  std::vector<ModalityKind> kinds;
  std::vector<Checkpoint> ckpts;
  if (a.modality && *a.modality == "all") {
    if (!fs::is_directory(a.checkpoint)) throw UsageError("--modality all expects --checkpoint to be a training output directory");
    for (auto kind : kAllModalities) {
      ckpts.push_back(load_checkpoint(fs::path(a.checkpoint) / std::string(to_string(kind)) / "best"));
      kinds.push_back(kind);
    }
  } else {
    ckpts.push_back(load_checkpoint(checkpoint_file(a.checkpoint)));
    kinds.push_back(ckpts.back().pipeline.modality.kind);
    if (a.modality && parse_kinds(*a.modality).front() != kinds.front()) {
      throw UsageError("--modality " + *a.modality + " does not match the checkpoint's modality " +
                       std::string(to_string(kinds.front())));
    }
  }
  const auto entries = select_split(load_manifest(a.manifest), split, ckpts.front().metadata.seed, err);

  // One feature pass when every checkpoint shares the pipeline.
  std::vector<std::vector<FeatureSequence>> feats(kinds.size());
  const bool shared = std::all_of(ckpts.begin(), ckpts.end(),
                                  [&](const auto& c) { return same_pipeline(c.pipeline, ckpts.front().pipeline); });
  auto source = [&](const Checkpoint& c) {
    FeatureSource src{c.pipeline.modality, c.pipeline.preproc, c.pipeline.extractor_seed, {}, manifest_base(a.manifest)};
    if (a.features_dir) src.features_dir = fs::path(*a.features_dir);
    return src;
  };
  if (shared) {
    feats = load_features(entries, kinds, source(ckpts.front()), err);
  } else {
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const ModalityKind one[] = {kinds[k]};
      feats[k] = std::move(load_features(entries, one, source(ckpts[k]), err).front());
    }
  }

  std::vector<MetricsReport> rows;
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    const auto data = ckpts[k].pipeline.normalizer.apply(label(entries, std::move(feats[k])));
    auto result = evaluate(ckpts[k].params, ckpts[k].config, data, std::string(to_string(kinds[k])));
    if (result.report.degenerate) err << "warning: " << result.report.method << ": degenerate precision/recall\n";
    rows.push_back(result.report);
    if (a.dump_predictions) {
      const fs::path dump = kinds.size() > 1 ? fs::path(*a.dump_predictions) / (std::string(to_string(kinds[k])) + ".jsonl")
                                             : fs::path(*a.dump_predictions);
      write_text(dump, format_predictions(result.predictions));
    }
  }
  if (a.out) write_text(*a.out, format_report_csv(rows));
  out << (a.format == "csv" ? format_report_csv(rows) : format_report_text(rows));
  return kOk;
}

struct AttentionArgs {
  std::string checkpoint;
  std::string manifest;
  std::vector<std::string> clips;
  std::string split = "test";
  std::string out;
  std::optional<std::string> features_dir;
};

int cmd_attention(const AttentionArgs& a, std::ostream& out, std::ostream& err) {
  const auto ckpt = load_checkpoint(checkpoint_file(a.checkpoint));
  auto entries = load_manifest(a.manifest);
  if (!a.clips.empty()) {
    std::vector<ClipManifestEntry> chosen;
    for (const auto& id : a.clips) {
      const auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.clip_id == id; });
      if (it == entries.end()) throw InvalidArgument("clip '" + id + "' is not in the manifest");
      chosen.push_back(*it);
    }
    entries = std::move(chosen);
  } else {
    entries = select_split(std::move(entries), parse_split_flag(a.split), ckpt.metadata.seed, err);
  }
  const ModalityKind kinds[] = {ckpt.pipeline.modality.kind};
  FeatureSource src{ckpt.pipeline.modality, ckpt.pipeline.preproc, ckpt.pipeline.extractor_seed, {},
                    manifest_base(a.manifest)};
  if (a.features_dir) src.features_dir = fs::path(*a.features_dir);
  auto feats = std::move(load_features(entries, kinds, src, err).front());
  std::vector<AttentionProfile> profiles(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    profiles[i] = attention_profile(ckpt.params, ckpt.config, ckpt.pipeline.normalizer.apply(feats[i]), entries[i].label);
  });
  write_text(a.out, format_attention_profiles(profiles));
  out << a.out << "\n";
  return kOk;
}

struct VlmArgs {
  std::string manifest;
  std::string endpoint;
  std::string model;
  std::string out;
  std::string split = "test";
  int stride = PreprocConfig{}.frame_stride;
  int timeout_ms = 30000;
  int retries = 2;
  std::size_t concurrency = 4;
  std::optional<std::string> dump_predictions;
  std::uint64_t seed = 0;
};

int cmd_vlm(const VlmArgs& a, std::ostream& out, std::ostream& err) {
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  if (a.timeout_ms < 1) throw UsageError("--timeout-ms must be >= 1");
  if (a.retries < 0) throw UsageError("--retries must be >= 0");
  if (a.concurrency < 1) throw UsageError("--concurrency must be >= 1");
  VlmClientOptions options;
  options.endpoint = a.endpoint;
  options.model = a.model;
  options.timeout = std::chrono::milliseconds(a.timeout_ms);
  options.max_retries = a.retries;
  options.max_concurrency = a.concurrency;
  const VlmClient client(options);

  const auto entries = select_split(load_manifest(a.manifest), parse_split_flag(a.split), a.seed, err);
  const auto base = manifest_base(a.manifest);
  std::vector<std::vector<std::vector<std::uint8_t>>> clips(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const auto& e = entries[i];
    const auto frames = read_frame_sequence(e.frames_path.is_absolute() ? e.frames_path : base / e.frames_path);
    for (const auto& f : sample_frames(std::span<const RgbImage>(frames), a.stride)) clips[i].push_back(encode_png(f));
  });
  const auto start = Clock::now();
  const auto preds = client.query_all(clips);
  std::vector<int> labels;
  std::vector<ClipPrediction> dump;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    labels.push_back(entries[i].label);
    dump.push_back({entries[i].clip_id, entries[i].label, preds[i], static_cast<double>(preds[i])});
  }
  char line[96];
  std::snprintf(line, sizeof line, "vlm: %zu clips in %.1fs\n", entries.size(), seconds_since(start));
  err << line;
  const std::vector<MetricsReport> rows{metrics(confusion(preds, labels), a.model)};
  write_text(a.out, format_report_csv(rows));
  if (a.dump_predictions) write_text(*a.dump_predictions, format_predictions(dump));
  out << format_report_text(rows);
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "text";
  std::optional<std::string> out;
};

int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream&) {
  if (a.format != "text" && a.format != "csv") throw UsageError("--format must be text or csv");
  std::vector<MetricsReport> rows;
  for (const auto& path : a.inputs) {
    const auto bytes = read_file_bytes(path);
    for (auto& r : parse_report_csv(std::string(bytes.begin(), bytes.end()))) rows.push_back(std::move(r));
  }
  const std::string text = a.format == "csv" ? format_report_csv(rows) : format_report_text(rows);
  if (a.out) write_text(*a.out, text);
  out << text;
  return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic-accident sequence classification pipeline", "crashseq"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores, 1 = deterministic serial mode)")
      ->envname("CRASHSEQ_THREADS");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic moving-blob clip dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  synth.per_class = s->add_option("--per-class", synth.per_class_v, "Clips per class");
  synth.frames = s->add_option("--frames", synth.frames_v, "Frames per clip");
  synth.seed = s->add_option("--seed", synth.seed_v, "Generator seed");
  s->add_option("--config", synth.config, "Config file");

  FlowArgs flow;
  auto* f = app.add_subcommand("flow", "Render optical flow for a frame directory");
  f->add_option("--frames-dir", flow.frames_dir, "Input frame directory")->required();
  f->add_option("--out", flow.out, "Output directory for flow_%05d.png")->required();
  f->add_option("--alpha", flow.alpha, "Smoothness weight");
  f->add_option("--iters", flow.iters, "Iterations per pyramid level");
  f->add_option("--levels", flow.levels, "Pyramid levels");
  f->add_option("--render", flow.render, "color or overlay");
  f->add_option("--max-mag", flow.max_mag, "Saturation magnitude in px (0 = per-field maximum)");
  f->add_option("--blend", flow.blend, "Overlay blend weight");
  f->add_option("--stride", flow.stride, "Frame sampling stride");

  FeaturesArgs feat;
  auto* x = app.add_subcommand("features", "Extract per-stream frame features to AVFX files");
  x->add_option("--manifest", feat.manifest, "Clip manifest (JSONL)")->required();
  x->add_option("--modality", feat.modality, "rgb, flow, overlay, rgb_concat_flow or all");
  x->add_option("--features-dir", feat.features_dir, "Read streams from pre-extracted AVFX files");
  x->add_option("--out", feat.out, "Output directory")->required();
  feat.seed = x->add_option("--seed", feat.seed_v, "Extractor seed");
  x->add_option("--config", feat.config, "Config file");
  x->add_option("--split", feat.split, "train, test or all");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the sequence classifier");
  t->add_option("--manifest", tr.manifest, "Clip manifest (JSONL)")->required();
  t->add_option("--modality", tr.modality, "rgb, flow, overlay, rgb_concat_flow or all")->required();
  t->add_option("--config", tr.config, "Config file");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--features-dir", tr.features_dir, "Read streams from pre-extracted AVFX files");
  struct TrainFlag {
    const char* flag;
    const char* key;
    const char* help;
  };
  const TrainFlag train_flags[] = {
      {"--seed", "train.seed", "Run seed (shuffling, dropout, init, extractor weights)"},
      {"--epochs", "train.epochs", "Epochs"},
      {"--lr", "train.learning_rate", "Adam learning rate"},
      {"--batch", "train.batch_size", "Batch size"},
      {"--d-model", "model.d_model", "Model width"},
      {"--layers", "model.num_layers", "Encoder layers"},
      {"--heads", "model.num_heads", "Attention heads"},
      {"--ffn-dim", "model.ffn_dim", "Feed-forward width"},
      {"--dropout", "model.dropout", "Dropout rate"},
      {"--val-fraction", "train.val_fraction", "Hold out this fraction of the train split for model selection"}};
  for (const auto& tf : train_flags) tr.values[tf.key];
  for (const auto& tf : train_flags) tr.flags.emplace_back(t->add_option(tf.flag, tr.values[tf.key], tf.help), tf.key);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints and print a metrics table");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file, or training output directory")->required();
  e->add_option("--manifest", ev.manifest, "Clip manifest (JSONL)")->required();
  e->add_option("--split", ev.split, "train, test or all");
  e->add_option("--modality", ev.modality, "Expected modality, or all");
  e->add_option("--dump-predictions", ev.dump_predictions, "Per-clip predictions (JSONL; a directory with all)");
  e->add_option("--features-dir", ev.features_dir, "Read streams from pre-extracted AVFX files");
  e->add_option("--out", ev.out, "Also write the report as CSV");
  e->add_option("--format", ev.format, "text or csv");

  AttentionArgs at;
  auto* p = app.add_subcommand("attention", "Export frame-wise attention profiles");
  p->add_option("--checkpoint", at.checkpoint, "Checkpoint file")->required();
  p->add_option("--manifest", at.manifest, "Clip manifest (JSONL)")->required();
  p->add_option("--clip", at.clips, "Clip id (repeatable; default: every clip in --split)");
  p->add_option("--split", at.split, "train, test or all");
  p->add_option("--out", at.out, "Output JSONL")->required();
  p->add_option("--features-dir", at.features_dir, "Read streams from pre-extracted AVFX files");

  VlmArgs vlm;
  auto* v = app.add_subcommand("vlm-compare", "Query a vision-language model endpoint and score it");
  v->add_option("--manifest", vlm.manifest, "Clip manifest (JSONL)")->required();
  v->add_option("--endpoint", vlm.endpoint, "http://host:port/path")->required();
  v->add_option("--model", vlm.model, "Model name sent in each request")->required();
  v->add_option("--out", vlm.out, "Report CSV")->required();
  v->add_option("--split", vlm.split, "train, test or all");
  v->add_option("--stride", vlm.stride, "Frame sampling stride");
  v->add_option("--timeout-ms", vlm.timeout_ms, "Per-request timeout");
  v->add_option("--retries", vlm.retries, "Retries on transport errors");
  v->add_option("--concurrency", vlm.concurrency, "Requests in flight");
  v->add_option("--dump-predictions", vlm.dump_predictions, "Per-clip answers (JSONL)");
  v->add_option("--seed", vlm.seed, "Seed for splitting unmarked manifests");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Merge report CSVs into one table");
  r->add_option("--in", rep.inputs, "Report CSV files")->required()->expected(1, -1);
  r->add_option("--format", rep.format, "text or csv");
  r->add_option("--out", rep.out, "Also write the table to this file");

  for (auto* sub : {s, f, x, t, e, p, v, r}) sub->fallthrough();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n" << app.help();
    return kUsageError;
  }

  set_num_threads(threads);
  try {
    if (s->parsed()) return cmd_synth(synth, out, err);
    if (f->parsed()) return cmd_flow(flow, out, err);
    if (x->parsed()) return cmd_features(feat, out, err);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (p->parsed()) return cmd_attention(at, out, err);
    if (v->parsed()) return cmd_vlm(vlm, out, err);
    if (r->parsed()) return cmd_report(rep, out, err);
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsageError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace crashseq::cli
