#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "crashseq/image.hpp"

namespace crashseq {

// Per-pixel motion in px/frame: u horizontal (+x right), v vertical (+y down).
struct FlowField {
  Plane u;
  Plane v;

  int rows() const { return u.rows; }
  int cols() const { return u.cols; }
};

struct FlowParams {
  double alpha = 1.0;
  int iterations = 100;
  int levels = 3;

  void validate() const;
};

// Rec. 601 luma, 0.299 R + 0.587 G + 0.114 B, in [0, 255].
Plane grayscale(const RgbImage& img);

// Coarse-to-fine Horn-Schunck. Inputs are gray images in [0, 255]; they are
// scaled to [0, 1] before solving. At each pyramid level the second image is
// warped by the current estimate and `iterations` Gauss-Seidel sweeps refine the
// flow around that linearization point.
FlowField horn_schunck(const Plane& first, const Plane& second, const FlowParams& params = {});

// Middlebury-style HSV rendering: hue = direction, saturation = magnitude /
// max_mag (capped at 1), value = 1. Zero motion renders white. max_mag <= 0
// selects the field's own maximum magnitude (floored at 1e-6).
RgbImage flow_to_color(const FlowField& flow, double max_mag);

// Per channel round((1 - blend) * frame + blend * flow_img).
RgbImage overlay(const RgbImage& frame, const RgbImage& flow_img, double blend);

// Flow between each consecutive pair; T frames give T - 1 fields. Pairs are
// solved in parallel.
std::vector<FlowField> flow_sequence(std::span<const RgbImage> frames, const FlowParams& params = {});

// Writes flow_00000.png, flow_00001.png, ... into `dir` (created if missing).
void write_flow_frames(std::span<const RgbImage> flow_images, const std::filesystem::path& dir);

}  // namespace crashseq
