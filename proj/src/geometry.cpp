#include "dlisa/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dlisa::geometry {

Box3::Box3(const Vec3& center, const Vec3& size) : center_(center), size_(size) {
  for (int k = 0; k < 3; ++k) {
    if (!(size[k] > 0.0) || !std::isfinite(size[k]) || !std::isfinite(center[k])) {
      throw std::invalid_argument("Box3: size components must be finite and > 0 (axis " +
                                  std::to_string(k) + ")");
    }
  }
}

Vec3 Box3::min_corner() const {
  return {center_[0] - 0.5 * size_[0], center_[1] - 0.5 * size_[1], center_[2] - 0.5 * size_[2]};
}

Vec3 Box3::max_corner() const {
  return {center_[0] + 0.5 * size_[0], center_[1] + 0.5 * size_[1], center_[2] + 0.5 * size_[2]};
}

double volume(const Box3& b) { return b.size()[0] * b.size()[1] * b.size()[2]; }

double intersection_volume(const Box3& a, const Box3& b) {
  const Vec3 amin = a.min_corner(), amax = a.max_corner();
  const Vec3 bmin = b.min_corner(), bmax = b.max_corner();
  double v = 1.0;
  for (int k = 0; k < 3; ++k) {
    const double overlap = std::min(amax[k], bmax[k]) - std::max(amin[k], bmin[k]);
    if (overlap <= 0.0) return 0.0;
    v *= overlap;
  }
  return v;
}

double iou(const Box3& a, const Box3& b) {
  const double inter = intersection_volume(a, b);
  if (inter <= 0.0) return 0.0;
  // Identical boxes must give exactly 1 regardless of rounding in the product.
  if (a == b) return 1.0;
  const double uni = volume(a) + volume(b) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<double> iou_matrix(std::span<const Box3> a, std::span<const Box3> b) {
  std::vector<double> out(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i * b.size() + j] = iou(a[i], b[j]);
  return out;
}

std::vector<std::size_t> nms(std::span<const Box3> boxes, std::span<const double> scores,
                             double threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes and scores differ in length");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("nms: threshold must lie in [0, 1]");

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) { return scores[l] > scores[r]; });

  std::vector<std::size_t> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const std::size_t i = order[pos];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t later = pos + 1; later < order.size(); ++later) {
      const std::size_t j = order[later];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

double center_distance(const Box3& a, const Box3& b) {
  const double dx = a.center()[0] - b.center()[0];
  const double dy = a.center()[1] - b.center()[1];
  const double dz = a.center()[2] - b.center()[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

DistanceMatrix distance_matrix(std::span<const Box3> boxes) {
  const std::size_t n = boxes.size();
  if (n == 0) throw std::invalid_argument("distance_matrix: need at least one box");
  DistanceMatrix d{n, std::vector<double>(n * n, 0.0)};
  if (n == 1) {
    d.values[0] = 1.0;
    return d;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double inv = 1.0 / std::max(center_distance(boxes[i], boxes[j]), kMinCenterDistance);
      d.values[i * n + j] = inv;
      d.values[j * n + i] = inv;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double nearest = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) nearest = std::max(nearest, d.values[i * n + j]);
    d.values[i * n + i] = nearest;
  }
  return d;
}

}  // namespace dlisa::geometry
