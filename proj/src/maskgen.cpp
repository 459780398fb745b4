#include "vqamask/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vqamask::maskgen {

namespace {

std::string describe(const TextBox& box) {
  return "[" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," + std::to_string(box.x1) + "," +
         std::to_string(box.y1) + "]";
}

}  // namespace

void check_bounds(const TextBox& box, int height, int width) {
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > width || box.y1 > height || box.x0 >= box.x1 || box.y0 >= box.y1)
    fail(ErrorCode::BoxOutOfBounds,
         "box " + describe(box) + " outside " + std::to_string(width) + "x" + std::to_string(height) + " image");
}

InstanceCrop crop_instance(const Image& image, const TextBox& box) {
  check_bounds(box, image.height(), image.width());
  if (box.width() < 2 || box.height() < 2) fail(ErrorCode::DegenerateBox, "box " + describe(box) + " has a side < 2");
  const Image gray = to_grayscale(image);
  InstanceCrop out{Grid<std::uint8_t>(box.height(), box.width()), box.x0, box.y0};
  for (int r = 0; r < box.height(); ++r)
    for (int c = 0; c < box.width(); ++c) out.pixels(r, c) = gray.at(box.y0 + r, box.x0 + c);
  return out;
}

KMeansResult kmeans2(std::span<const std::uint8_t> pixels, int max_iter, std::uint64_t /*seed*/) {
  if (pixels.size() < 2) fail(ErrorCode::InvalidArgument, "kmeans2 needs at least 2 pixels");
  if (max_iter < 1) fail(ErrorCode::InvalidArgument, "kmeans2 needs max_iter >= 1");

  std::array<std::uint64_t, 256> hist{};
  for (auto v : pixels) ++hist[v];
  int lo = 0;
  while (hist[lo] == 0) ++lo;
  int hi = 255;
  while (hist[hi] == 0) --hi;

  KMeansResult result;
  if (lo == hi) {
    result.labels.assign(pixels.size(), 0);
    result.centers = {static_cast<double>(lo), static_cast<double>(lo)};
    result.degenerate = true;
    return result;
  }

  std::uint64_t total_n = 0;
  std::uint64_t total_s = 0;
  for (int v = lo; v <= hi; ++v) {
    total_n += hist[v];
    total_s += hist[v] * static_cast<std::uint64_t>(v);
  }

  // Minimizing within-cluster SSE over threshold cuts is maximizing
  // s0^2/n0 + s1^2/n1; the first maximal cut wins.
  std::uint64_t n0 = 0;
  std::uint64_t s0 = 0;
  long double best_score = -1.0L;
  int best_cut = lo;
  for (int t = lo; t < hi; ++t) {
    n0 += hist[t];
    s0 += hist[t] * static_cast<std::uint64_t>(t);
    if (hist[t] == 0) continue;
    const std::uint64_t n1 = total_n - n0;
    const std::uint64_t s1 = total_s - s0;
    const long double score = static_cast<long double>(s0) * s0 / n0 + static_cast<long double>(s1) * s1 / n1;
    if (score > best_score) {
      best_score = score;
      best_cut = t;
    }
  }

  std::array<std::uint8_t, 256> value_label{};
  for (int v = 0; v < 256; ++v) value_label[v] = v > best_cut ? 1 : 0;

  auto update_centers = [&] {
    std::array<std::uint64_t, 2> n{};
    std::array<std::uint64_t, 2> s{};
    for (int v = lo; v <= hi; ++v) {
      n[value_label[v]] += hist[v];
      s[value_label[v]] += hist[v] * static_cast<std::uint64_t>(v);
    }
    for (int k = 0; k < 2; ++k)
      if (n[k] > 0) result.centers[k] = static_cast<double>(s[k]) / static_cast<double>(n[k]);
  };
  update_centers();

  for (result.iterations = 1; result.iterations <= max_iter; ++result.iterations) {
    bool changed = false;
    for (int v = lo; v <= hi; ++v) {
      if (hist[v] == 0) continue;
      const double d0 = std::abs(v - result.centers[0]);
      const double d1 = std::abs(v - result.centers[1]);
      const std::uint8_t label = d1 < d0 ? 1 : 0;
      changed |= label != value_label[v];
      value_label[v] = label;
    }
    if (!changed) break;
    update_centers();
  }
  if (result.iterations > max_iter) result.iterations = max_iter;

  result.labels.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) result.labels[i] = value_label[pixels[i]];
  return result;
}

BinaryMask select_foreground(const Grid<std::uint8_t>& labels) {
  const int h = labels.rows();
  const int w = labels.cols();
  const long double cy = (h - 1) / 2.0L;
  const long double cx = (w - 1) / 2.0L;
  std::array<long double, 2> dist_sum{};
  std::array<std::uint64_t, 2> count{};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int k = labels(r, c) ? 1 : 0;
      dist_sum[k] += std::sqrt((r - cy) * (r - cy) + (c - cx) * (c - cx));
      ++count[k];
    }
  }
  BinaryMask mask(h, w, 0);
  if (count[0] == 0 || count[1] == 0) return mask;

  const long double mean0 = dist_sum[0] / count[0];
  const long double mean1 = dist_sum[1] / count[1];
  const long double tol = 1e-12L * std::max(mean0, mean1);
  const std::uint8_t foreground = (mean1 < mean0 - tol) ? 1 : 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) mask(r, c) = ((labels(r, c) ? 1 : 0) == foreground) ? 1 : 0;
  return mask;
}

bool needs_inversion(const BinaryMask& mask) {
  const int h = mask.rows();
  const int w = mask.cols();
  if (h < 2 || w < 2) fail(ErrorCode::InvalidArgument, "calibration needs a mask of at least 2x2");
  std::uint64_t edge_sum = 0;
  std::uint64_t edge_n = 0;
  std::uint64_t total_sum = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::uint64_t v = mask(r, c) ? 1 : 0;
      total_sum += v;
      if (r == 0 || c == 0 || r == h - 1 || c == w - 1) {
        edge_sum += v;
        ++edge_n;
      }
    }
  }
  // edge_sum / edge_n > total_sum / total_n, compared exactly.
  return edge_sum * mask.size() > total_sum * edge_n;
}

BinaryMask calibrate(const BinaryMask& mask) {
  if (!needs_inversion(mask)) return mask;
  BinaryMask flipped = mask;
  for (auto& v : flipped.values()) v = v ? 0 : 1;
  return flipped;
}

BinaryMask assemble(std::span<const InstanceMask> instances, int height, int width) {
  BinaryMask out(height, width, 0);
  for (const auto& inst : instances) {
    if (inst.x0 < 0 || inst.y0 < 0 || inst.x0 + inst.values.cols() > width || inst.y0 + inst.values.rows() > height)
      fail(ErrorCode::PlacementOutOfBounds, "instance at (" + std::to_string(inst.x0) + "," + std::to_string(inst.y0) +
                                                ") does not fit the canvas");
    for (int r = 0; r < inst.values.rows(); ++r)
      for (int c = 0; c < inst.values.cols(); ++c)
        if (inst.values(r, c)) out(inst.y0 + r, inst.x0 + c) = 1;
  }
  return out;
}

InstanceMask binarize_instance(const InstanceCrop& crop, std::uint64_t seed, InstanceOutcome* outcome) {
  InstanceOutcome local;
  InstanceMask mask{BinaryMask(crop.pixels.rows(), crop.pixels.cols(), 0), crop.x0, crop.y0};
  const KMeansResult clusters = kmeans2(crop.pixels.values(), kDefaultMaxIter, seed);
  if (clusters.degenerate) {
    local.degenerate = true;
  } else {
    const Grid<std::uint8_t> labels(crop.pixels.rows(), crop.pixels.cols(), clusters.labels);
    const BinaryMask selected = select_foreground(labels);
    local.inverted = needs_inversion(selected);
    mask.values = calibrate(selected);
  }
  if (outcome) *outcome = local;
  return mask;
}

BinaryMask generate_mask(const Image& image, std::span<const TextBox> boxes, std::uint64_t seed,
                         std::vector<InstanceOutcome>* outcomes) {
  const Image gray = to_grayscale(image);
  std::vector<InstanceMask> instances;
  instances.reserve(boxes.size());
  if (outcomes) outcomes->assign(boxes.size(), InstanceOutcome{});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const TextBox& box = boxes[i];
    check_bounds(box, gray.height(), gray.width());
    if (box.width() < 2 || box.height() < 2) {
      if (outcomes) (*outcomes)[i].degenerate = true;
      continue;
    }
    InstanceOutcome outcome;
    instances.push_back(binarize_instance(crop_instance(gray, box), seed, &outcome));
    if (outcomes) (*outcomes)[i] = outcome;
  }
  return assemble(instances, gray.height(), gray.width());
}

}  // namespace vqamask::maskgen
