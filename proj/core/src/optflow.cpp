#include "crashseq/optflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "crashseq/error.hpp"
#include "crashseq/parallel.hpp"

namespace crashseq {

void FlowParams::validate() const {
  if (!(alpha > 0.0)) throw InvalidArgument("flow alpha must be > 0");
  if (iterations < 1) throw InvalidArgument("flow iterations must be >= 1");
  if (levels < 1) throw InvalidArgument("flow levels must be >= 1");
}

Plane grayscale(const RgbImage& img) {
  Plane out(img.height, img.width);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = 0.299 * img.pixels[3 * i] + 0.587 * img.pixels[3 * i + 1] +
                    0.114 * img.pixels[3 * i + 2];
  }
  return out;
}

namespace {

constexpr int kMinPyramidSide = 8;

Plane downsample(const Plane& in) {
  Plane out((in.rows + 1) / 2, (in.cols + 1) / 2);
  for (int y = 0; y < out.rows; ++y) {
    for (int x = 0; x < out.cols; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const int sy = 2 * y + dy;
          const int sx = 2 * x + dx;
          if (sy < in.rows && sx < in.cols) {
            sum += in.at(sy, sx);
            ++n;
          }
        }
      }
      out.at(y, x) = sum / n;
    }
  }
  return out;
}

// Bilinear sample with clamped coordinates.
double sample(const Plane& p, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(p.rows - 1));
  x = std::clamp(x, 0.0, static_cast<double>(p.cols - 1));
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, p.rows - 1);
  const int x1 = std::min(x0 + 1, p.cols - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  return (1.0 - fy) * ((1.0 - fx) * p.at(y0, x0) + fx * p.at(y0, x1)) +
         fy * ((1.0 - fx) * p.at(y1, x0) + fx * p.at(y1, x1));
}

Plane resize_plane(const Plane& in, int rows, int cols, double scale) {
  Plane out(rows, cols);
  const double sy = static_cast<double>(in.rows) / rows;
  const double sx = static_cast<double>(in.cols) / cols;
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) {
      out.at(y, x) = scale * sample(in, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
    }
  }
  return out;
}

Plane warp(const Plane& img, const Plane& u, const Plane& v) {
  Plane out(img.rows, img.cols);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) {
      out.at(y, x) = sample(img, y + v.at(y, x), x + u.at(y, x));
    }
  }
  return out;
}

// Sweeps around the linearization point (u, v); updates u, v in place.
void refine_level(const Plane& first, const Plane& second, Plane& u, Plane& v, const FlowParams& params) {
  const int rows = first.rows;
  const int cols = first.cols;
  const Plane warped = warp(second, u, v);

  Plane ix(rows, cols), iy(rows, cols), it(rows, cols), denom(rows, cols);
  for (int y = 0; y < rows; ++y) {
    const int yu = std::max(y - 1, 0);
    const int yd = std::min(y + 1, rows - 1);
    const int y1 = std::min(y + 1, rows - 1);
    for (int x = 0; x < cols; ++x) {
      const int xl = std::max(x - 1, 0);
      const int xr = std::min(x + 1, cols - 1);
      const int x1 = std::min(x + 1, cols - 1);
      const double gx = 0.25 * (first.at(y, xr) - first.at(y, xl) + warped.at(y, xr) - warped.at(y, xl));
      const double gy = 0.25 * (first.at(yd, x) - first.at(yu, x) + warped.at(yd, x) - warped.at(yu, x));
      const double gt = 0.25 * ((warped.at(y, x) - first.at(y, x)) + (warped.at(y, x1) - first.at(y, x1)) +
                                (warped.at(y1, x) - first.at(y1, x)) + (warped.at(y1, x1) - first.at(y1, x1)));
      ix.at(y, x) = gx;
      iy.at(y, x) = gy;
      // Linearized around the current estimate.
      it.at(y, x) = gt - gx * u.at(y, x) - gy * v.at(y, x);
      denom.at(y, x) = 1.0 / (params.alpha * params.alpha + gx * gx + gy * gy);
    }
  }

  // Gauss-Seidel order: neighbour means see values already updated this sweep.
  auto mean8 = [&](const Plane& p, int y, int x) {
    const int yu = y > 0 ? y - 1 : 0;
    const int yd = y + 1 < rows ? y + 1 : rows - 1;
    const int xl = x > 0 ? x - 1 : 0;
    const int xr = x + 1 < cols ? x + 1 : cols - 1;
    return 0.125 * (p.at(yu, xl) + p.at(yu, x) + p.at(yu, xr) + p.at(y, xl) + p.at(y, xr) + p.at(yd, xl) +
                    p.at(yd, x) + p.at(yd, xr));
  };
  for (int iter = 0; iter < params.iterations; ++iter) {
    for (int y = 0; y < rows; ++y) {
      for (int x = 0; x < cols; ++x) {
        const double ub = mean8(u, y, x);
        const double vb = mean8(v, y, x);
        const double gx = ix.at(y, x);
        const double gy = iy.at(y, x);
        const double t = (gx * ub + gy * vb + it.at(y, x)) * denom.at(y, x);
        u.at(y, x) = ub - gx * t;
        v.at(y, x) = vb - gy * t;
      }
    }
  }
}

void check_finite(const Plane& p, const char* what) {
  for (double x : p.values) {
    if (!std::isfinite(x)) throw NumericError(std::string("horn_schunck: non-finite ") + what);
  }
}

}  // namespace

FlowField horn_schunck(const Plane& first, const Plane& second, const FlowParams& params) {
  params.validate();
  if (first.rows != second.rows || first.cols != second.cols) {
    throw InvalidArgument("horn_schunck: frame dimensions differ");
  }
  if (first.rows < 1 || first.cols < 1) throw InvalidArgument("horn_schunck: empty frame");

  std::vector<Plane> pyr1{first}, pyr2{second};
  for (auto* p : {&pyr1.front(), &pyr2.front()}) {
    for (double& x : p->values) x /= 255.0;
  }
  while (static_cast<int>(pyr1.size()) < params.levels &&
         std::min(pyr1.back().rows, pyr1.back().cols) >= 2 * kMinPyramidSide) {
    pyr1.push_back(downsample(pyr1.back()));
    pyr2.push_back(downsample(pyr2.back()));
  }

  Plane u(pyr1.back().rows, pyr1.back().cols);
  Plane v(pyr1.back().rows, pyr1.back().cols);
  for (std::size_t level = pyr1.size(); level-- > 0;) {
    const Plane& a = pyr1[level];
    const Plane& b = pyr2[level];
    if (u.rows != a.rows || u.cols != a.cols) {
      const double sx = static_cast<double>(a.cols) / u.cols;
      const double sy = static_cast<double>(a.rows) / u.rows;
      u = resize_plane(u, a.rows, a.cols, sx);
      v = resize_plane(v, a.rows, a.cols, sy);
    }
    refine_level(a, b, u, v, params);
  }
  check_finite(u, "u");
  check_finite(v, "v");
  return {std::move(u), std::move(v)};
}

RgbImage flow_to_color(const FlowField& flow, double max_mag) {
  const int rows = flow.rows();
  const int cols = flow.cols();
  if (max_mag <= 0.0) {
    double m = 0.0;
    for (std::size_t i = 0; i < flow.u.values.size(); ++i) {
      m = std::max(m, std::hypot(flow.u.values[i], flow.v.values[i]));
    }
    max_mag = std::max(m, 1e-6);
  }
  RgbImage out(rows, cols);
  for (std::size_t i = 0; i < flow.u.values.size(); ++i) {
    const double fu = flow.u.values[i];
    const double fv = flow.v.values[i];
    const double mag = std::hypot(fu, fv);
    double sat = std::isfinite(mag) ? std::min(1.0, mag / max_mag) : 0.0;
    double hue = std::atan2(fv, fu) * 180.0 / std::numbers::pi;
    if (!std::isfinite(hue)) hue = 0.0;
    if (hue < 0.0) hue += 360.0;
    if (hue >= 360.0) hue -= 360.0;

    // HSV -> RGB with V = 1.
    const double c = sat;
    const double hp = hue / 60.0;
    const double xcomp = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
      case 0: r = c; g = xcomp; break;
      case 1: r = xcomp; g = c; break;
      case 2: g = c; b = xcomp; break;
      case 3: g = xcomp; b = c; break;
      case 4: r = xcomp; b = c; break;
      default: r = c; b = xcomp; break;
    }
    const double m = 1.0 - c;
    out.pixels[3 * i] = to_u8(255.0 * (r + m));
    out.pixels[3 * i + 1] = to_u8(255.0 * (g + m));
    out.pixels[3 * i + 2] = to_u8(255.0 * (b + m));
  }
  return out;
}

RgbImage overlay(const RgbImage& frame, const RgbImage& flow_img, double blend) {
  if (!frame.same_size(flow_img)) throw InvalidArgument("overlay: dimension mismatch");
  if (!(blend >= 0.0 && blend <= 1.0)) throw InvalidArgument("overlay: blend must lie in [0, 1]");
  RgbImage out(frame.height, frame.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = to_u8((1.0 - blend) * frame.pixels[i] + blend * flow_img.pixels[i]);
  }
  return out;
}

std::vector<FlowField> flow_sequence(std::span<const RgbImage> frames, const FlowParams& params) {
  if (frames.size() < 2) throw InvalidArgument("flow_sequence: need at least 2 frames");
  params.validate();
  std::vector<Plane> gray(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) gray[i] = grayscale(frames[i]);
  std::vector<FlowField> out(frames.size() - 1);
  parallel_for(out.size(), [&](std::size_t t) { out[t] = horn_schunck(gray[t], gray[t + 1], params); });
  return out;
}

void write_flow_frames(std::span<const RgbImage> flow_images, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < flow_images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "flow_%05zu.png", i);
    write_image(flow_images[i], dir / name);
  }
}

}  // namespace crashseq
