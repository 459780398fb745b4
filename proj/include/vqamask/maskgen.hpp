#pragma once

// Clustering-based text mask factory: crop every detected text box, split its
// pixels into two intensity clusters, keep the cluster concentrated around the
// crop centre, optionally invert it, and paste the instance masks back.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vqamask/image.hpp"

namespace vqamask::maskgen {

/// Axis-aligned box, inclusive-exclusive, origin top-left.
struct TextBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  friend bool operator==(const TextBox&, const TextBox&) = default;
};

/// Throws BoxOutOfBounds unless 0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height.
void check_bounds(const TextBox& box, int height, int width);

struct InstanceCrop {
  Grid<std::uint8_t> pixels;
  int x0 = 0;
  int y0 = 0;
};

struct InstanceMask {
  BinaryMask values;
  int x0 = 0;
  int y0 = 0;
};

/// Value copy of the box region of a grayscale image. Colour input is converted first.
/// Throws BoxOutOfBounds or DegenerateBox (either side < 2).
InstanceCrop crop_instance(const Image& image, const TextBox& box);

struct KMeansResult {
  std::vector<std::uint8_t> labels;  // cluster id per pixel, 0 = darker centre
  std::array<double, 2> centers{};
  bool degenerate = false;           // all pixels equal: one cluster only
  int iterations = 0;
};

inline constexpr int kDefaultMaxIter = 50;

/// Two-means clustering of scalar intensities.
///
/// Starts from the globally optimal threshold cut of the histogram (the exact
/// 1-D 2-means optimum) and then runs Lloyd refinement with ties assigned to
/// cluster 0 until the labels stop changing or `max_iter` is reached. The
/// result does not depend on `seed`; it is accepted so callers can thread one
/// seed through the whole pipeline.
KMeansResult kmeans2(std::span<const std::uint8_t> pixels, int max_iter = kDefaultMaxIter,
                     std::uint64_t seed = 0);

/// The cluster whose pixel coordinates have the smaller mean Euclidean distance
/// to the crop centre becomes foreground (1). Ties (relative 1e-12) go to
/// cluster 0. If either cluster is empty the result is all zero.
BinaryMask select_foreground(const Grid<std::uint8_t>& labels);

/// Flips every value when the mean over the 1-pixel border ring exceeds the
/// mean over the whole mask; otherwise returns the mask unchanged.
BinaryMask calibrate(const BinaryMask& mask);

/// True when calibrate() would flip the mask.
bool needs_inversion(const BinaryMask& mask);

/// Union (logical OR) of instance masks on an H×W canvas.
/// Throws PlacementOutOfBounds if an instance does not fit.
BinaryMask assemble(std::span<const InstanceMask> instances, int height, int width);

struct InstanceOutcome {
  bool degenerate = false;  // box side < 2 or constant intensity
  bool inverted = false;    // calibration flipped the foreground
};

/// Binarizes one crop: kmeans2 -> select_foreground -> calibrate.
InstanceMask binarize_instance(const InstanceCrop& crop, std::uint64_t seed,
                               InstanceOutcome* outcome = nullptr);

/// Full pipeline over all boxes in order. Out-of-bounds boxes throw; degenerate
/// instances contribute nothing. `outcomes`, when given, receives one entry per box.
BinaryMask generate_mask(const Image& image, std::span<const TextBox> boxes, std::uint64_t seed,
                         std::vector<InstanceOutcome>* outcomes = nullptr);

}  // namespace vqamask::maskgen
