#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace crashseq {

// 8-bit RGB image, interleaved row-major (HWC).
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool same_size(const RgbImage& other) const {
    return height == other.height && width == other.width;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// Real-valued single-channel matrix, row-major. Used for grayscale frames
// and the u/v components of flow fields.
struct Plane {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int r, int c, double fill = 0.0)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * cols + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * cols + x]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

// Round-half-up to the nearest integer and clamp to [0, 255]. A tolerance of
// 1e-9 absorbs floating-point noise on exact .5 ties.
std::uint8_t to_u8(double value);

// Binary PPM (P6, maxval 255).
RgbImage decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const RgbImage& img);

RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_png(const RgbImage& img);

// Dispatches on the file signature (PNG magic or "P6").
RgbImage read_image(const std::filesystem::path& path);
// Format picked from the extension: ".png" or ".ppm".
void write_image(const RgbImage& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over `path`, so readers never
// observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace crashseq
