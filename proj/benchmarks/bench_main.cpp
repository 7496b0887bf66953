#include <benchmark/benchmark.h>

#include <cmath>

#include <crashseq/featx.hpp>
#include <crashseq/model.hpp>
#include <crashseq/optflow.hpp>
#include <crashseq/random.hpp>
#include <crashseq/synth.hpp>
#include <crashseq/train.hpp>

using namespace crashseq;

namespace {

Plane texture(int size, double dx) {
  Plane p(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      p.at(y, x) = 127.5 + 90.0 * std::sin(0.25 * (x - dx)) * std::cos(0.2 * y);
    }
  }
  return p;
}

std::vector<FeatureSequence> random_batch(std::size_t b, std::size_t t, std::size_t d) {
  Rng rng(1);
  std::vector<FeatureSequence> out(b);
  for (auto& s : out) {
    s.frames = static_cast<std::uint32_t>(t);
    s.dim = static_cast<std::uint32_t>(d);
    s.values.resize(t * d);
    for (auto& v : s.values) v = static_cast<float>(standard_normal(rng));
  }
  return out;
}

ModelConfig bench_config(std::size_t d_model) {
  ModelConfig c;
  c.input_dim = 64;
  c.d_model = d_model;
  c.num_layers = 2;
  c.num_heads = 4;
  c.ffn_dim = 4 * d_model;
  return c;
}

}  // namespace

static void BM_HornSchunck(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Plane a = texture(size, 0.0), b = texture(size, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(horn_schunck(a, b));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_HornSchunck)->Arg(64)->Arg(128)->Arg(224)->Unit(benchmark::kMillisecond);

static void BM_ExtractFrame(benchmark::State& state) {
  const FeatureExtractor ex(1);
  SynthConfig cfg;
  const auto clip = generate_clip(ClipKind::normal, cfg, 0);
  const auto frame = normalize(clip.frames[0], PreprocConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(ex.extract(frame));
}
BENCHMARK(BM_ExtractFrame)->Unit(benchmark::kMillisecond);

static void BM_Forward(benchmark::State& state) {
  const auto cfg = bench_config(static_cast<std::size_t>(state.range(0)));
  const auto params = init_params(cfg, 1);
  const auto seqs = random_batch(16, 8, cfg.input_dim);
  const auto batch = pad_batch(std::span<const FeatureSequence>(seqs));
  for (auto _ : state) benchmark::DoNotOptimize(forward(batch, params, cfg));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_Backward(benchmark::State& state) {
  const auto cfg = bench_config(static_cast<std::size_t>(state.range(0)));
  const auto params = init_params(cfg, 1);
  const auto seqs = random_batch(16, 8, cfg.input_dim);
  const auto batch = pad_batch(std::span<const FeatureSequence>(seqs));
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
  for (auto _ : state) benchmark::DoNotOptimize(backward(batch, labels, params, cfg));
}
BENCHMARK(BM_Backward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
