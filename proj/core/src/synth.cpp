#include "crashseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crashseq/dataio.hpp"
#include "crashseq/error.hpp"
#include "crashseq/parallel.hpp"
#include "crashseq/random.hpp"

namespace crashseq {

void SynthConfig::validate() const {
  if (num_clips_per_class < 1) throw InvalidArgument("num_clips_per_class must be >= 1");
  if (frames_per_clip < 10) throw InvalidArgument("frames_per_clip must be >= 10");
  if (image_size < 32) throw InvalidArgument("image_size must be >= 32");
  if (num_blobs < 2) throw InvalidArgument("num_blobs must be >= 2");
  if (!(speed_min > 0.0 && speed_min <= speed_max)) throw InvalidArgument("speed range must satisfy 0 < min <= max");
  const auto [w0, w1] = accident_window;
  if (!(w0 >= 0.0 && w0 < w1 && w1 <= 1.0)) throw InvalidArgument("accident_window must satisfy 0 <= lo < hi <= 1");
}

namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }

Vec2 rotate(Vec2 a, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}

struct Rgb {
  double r, g, b;
};

constexpr Rgb kBackground{64, 64, 70};
constexpr Rgb kLane{150, 150, 140};
constexpr Rgb kDebris{235, 235, 235};
constexpr double kDebrisRadius = 4.0;
constexpr int kDebrisCount = 24;
constexpr int kDebrisFrames = 3;
constexpr double kJitter = 0.2;  // per axis, so |jitter| <= 0.283 px/frame

Rgb blob_color(int index) {
  // Luma at least 60 above the background so every disc is visible to flow.
  static constexpr Rgb palette[] = {{255, 90, 90}, {90, 150, 255}, {240, 220, 60},
                                    {80, 220, 100}, {240, 120, 240}, {80, 230, 230}};
  return palette[index % 6];
}

double blob_radius(int index, int size) {
  static constexpr double scale[] = {0.085, 0.08, 0.075, 0.07, 0.09, 0.065};
  return scale[index % 6] * size;
}

struct Canvas {
  int size;
  std::vector<double> px;

  explicit Canvas(int s) : size(s), px(static_cast<std::size_t>(s) * s * 3) {}

  void fill_background() {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        // Dashed lane markings; static across frames and classes.
        const bool lane = (std::abs(x - size / 3) < 2 || std::abs(x - 2 * size / 3) < 2) && (y / 12) % 2 == 0;
        const Rgb c = lane ? kLane : kBackground;
        double* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
      }
    }
  }

  void disc(Vec2 centre, double radius, Rgb color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(centre.x - radius - 1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(centre.x + radius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(centre.y - radius - 1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(centre.y + radius + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d = std::hypot(x - centre.x, y - centre.y);
        const double a = std::clamp(radius + 0.5 - d, 0.0, 1.0);
        if (a <= 0.0) continue;
        double* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
        p[0] += a * (color.r - p[0]);
        p[1] += a * (color.g - p[1]);
        p[2] += a * (color.b - p[2]);
      }
    }
  }

  RgbImage to_image() const {
    RgbImage img(size, size);
    for (std::size_t i = 0; i < px.size(); ++i) img.pixels[i] = to_u8(px[i]);
    return img;
  }
};

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

Vec2 jitter(Rng& rng) { return {uniform(rng, -kJitter, kJitter), uniform(rng, -kJitter, kJitter)}; }

}  // namespace

SynthClip generate_clip(ClipKind kind, const SynthConfig& cfg, std::uint64_t clip_seed) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, clip_seed));
  const int F = cfg.frames_per_clip;
  const int S = cfg.image_size;
  const Vec2 centre{S / 2.0, S / 2.0};
  constexpr double pi = std::numbers::pi;

  // Meeting frame: debris must end inside the window too.
  const int lo = static_cast<int>(std::ceil(cfg.accident_window[0] * F));
  const int hi = std::max(lo, static_cast<int>(std::floor(cfg.accident_window[1] * F)) - kDebrisFrames - 1);
  const int tc = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));

  std::vector<std::vector<Vec2>> pos(static_cast<std::size_t>(cfg.num_blobs), std::vector<Vec2>(F));

  // Blobs 0 and 1 approach a point near the centre and touch there at frame tc.
  const Vec2 meet = centre + Vec2{uniform(rng, -S / 8.0, S / 8.0), uniform(rng, -S / 8.0, S / 8.0)};
  const double theta = uniform(rng, 0.0, 2 * pi);
  const double r0 = blob_radius(0, S), r1 = blob_radius(1, S);
  Vec2 dir[2];
  dir[0] = {std::cos(theta), std::sin(theta)};
  // Crossing at 60-120 degrees: a bounce then reverses both flow directions,
  // which a head-on pass-through would not distinguish.
  const double cross = uniform(rng, pi / 3, 2 * pi / 3);
  dir[1] = rotate(dir[0], (rng() & 1) ? cross : -cross);
  Vec2 vel[2];
  Vec2 post[2];
  for (int b = 0; b < 2; ++b) {
    vel[b] = uniform(rng, cfg.speed_min, cfg.speed_max) * dir[b];
    // s >= 0.8 and |angle| <= 30 deg keep |v' - v| >= 1.7 |v|.
    const double s = uniform(rng, 0.8, 1.3);
    post[b] = -s * rotate(vel[b], uniform(rng, -pi / 6, pi / 6));
  }
  // Centres sit on the line of approach, just touching.
  const Vec2 approach = dir[0] - dir[1];
  const Vec2 w = (1.0 / std::hypot(approach.x, approach.y)) * approach;
  const double gap = 0.95 * (r0 + r1);
  Vec2 anchor[2] = {meet - (gap / 2) * w, meet + (gap / 2) * w};
  if (kind == ClipKind::normal) {
    // Near miss: blob 1 runs the same path a few frames early or late, far
    // enough that the discs never touch.
    const double clear = 1.25 * (r0 + r1);
    double delay = 0.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      delay = uniform(rng, 4.0, 16.0) * ((rng() & 1) ? 1.0 : -1.0);
      double closest = 1e300;
      for (int t = 0; t < F; ++t) {
        const Vec2 d = (anchor[0] + (t - tc) * vel[0]) - (anchor[1] + (t - tc - delay) * vel[1]);
        closest = std::min(closest, std::hypot(d.x, d.y));
      }
      if (closest >= clear) break;
    }
    anchor[1] = anchor[1] - delay * vel[1];
  }
  for (int b = 0; b < 2; ++b) {
    auto& p = pos[static_cast<std::size_t>(b)];
    p[static_cast<std::size_t>(tc)] = anchor[b];
    for (int t = tc; t > 0; --t) p[t - 1] = p[t] - (vel[b] + jitter(rng));
    for (int t = tc; t + 1 < F; ++t) {
      const Vec2 v = kind == ClipKind::accident ? post[b] : vel[b];
      p[t + 1] = p[t] + (v + jitter(rng));
    }
  }

  // Remaining blobs cross near the centre at a random time.
  for (int b = 2; b < cfg.num_blobs; ++b) {
    auto& p = pos[static_cast<std::size_t>(b)];
    const double angle = uniform(rng, 0.0, 2 * pi);
    const Vec2 v = uniform(rng, cfg.speed_min, cfg.speed_max) * Vec2{std::cos(angle), std::sin(angle)};
    const int tm = static_cast<int>(uniform(rng, 0.3, 0.7) * F);
    p[static_cast<std::size_t>(tm)] = centre + Vec2{uniform(rng, -S / 4.0, S / 4.0), uniform(rng, -S / 4.0, S / 4.0)};
    for (int t = tm; t > 0; --t) p[t - 1] = p[t] - (v + jitter(rng));
    for (int t = tm; t + 1 < F; ++t) p[t + 1] = p[t] + (v + jitter(rng));
  }

  std::vector<Vec2> debris_dir(kDebrisCount);
  std::vector<double> debris_speed(kDebrisCount);
  for (int k = 0; k < kDebrisCount; ++k) {
    const double a = 2 * pi * (k + uniform(rng, -0.3, 0.3)) / kDebrisCount;
    debris_dir[k] = {std::cos(a), std::sin(a)};
    debris_speed[k] = uniform(rng, 5.0, 8.0);
  }

  SynthClip clip;
  clip.label = kind == ClipKind::accident ? 1 : 0;
  clip.impact_frame = kind == ClipKind::accident ? tc + 1 : -1;
  clip.frames.reserve(static_cast<std::size_t>(F));
  Canvas canvas(S);
  for (int t = 0; t < F; ++t) {
    canvas.fill_background();
    for (int b = 0; b < cfg.num_blobs; ++b) {
      canvas.disc(pos[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)], blob_radius(b, S), blob_color(b));
    }
    if (kind == ClipKind::accident && t > tc && t <= tc + kDebrisFrames) {
      for (int k = 0; k < kDebrisCount; ++k) {
        const double dist = (r0 + r1) / 2 + debris_speed[k] * (t - tc);
        canvas.disc(meet + dist * debris_dir[k], kDebrisRadius, kDebris);
      }
    }
    clip.frames.push_back(canvas.to_image());
  }
  return clip;
}

std::filesystem::path generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.num_clips_per_class);
  std::vector<ClipManifestEntry> entries(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const bool accident = i >= n;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%04zu", accident ? "accident" : "normal", accident ? i - n : i);
    auto& e = entries[i];
    e.clip_id = id;
    e.frames_path = std::filesystem::path("clips") / id;
    e.label = accident ? 1 : 0;
    e.num_frames = cfg.frames_per_clip;
  }

  parallel_for(entries.size(), [&](std::size_t i) {
    const auto& e = entries[i];
    const auto clip = generate_clip(e.label ? ClipKind::accident : ClipKind::normal, cfg, i);
    const auto dir = out_dir / e.frames_path;
    std::filesystem::create_directories(dir);
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "f%05zu.ppm", t);
      write_image(clip.frames[t], dir / name);
    }
  });

  const auto split = split_dataset(entries, 0.7, cfg.seed);
  std::vector<ClipManifestEntry> marked = entries;
  std::size_t ti = 0, si = 0;
  for (auto& e : marked) {
    if (ti < split.train.size() && split.train[ti].clip_id == e.clip_id) {
      e = split.train[ti++];
    } else {
      e = split.test[si++];
    }
  }
  const auto manifest = out_dir / "manifest.jsonl";
  write_manifest(marked, manifest);
  return manifest;
}

}  // namespace crashseq
