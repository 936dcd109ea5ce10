#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace dlisa::geometry {

using Vec3 = std::array<double, 3>;

// Axis-aligned 3D box. Construction enforces strictly positive extents.
class Box3 {
 public:
  Box3(const Vec3& center, const Vec3& size);

  const Vec3& center() const { return center_; }
  const Vec3& size() const { return size_; }
  Vec3 min_corner() const;
  Vec3 max_corner() const;

  bool operator==(const Box3&) const = default;

 private:
  Vec3 center_;
  Vec3 size_;
};

double volume(const Box3& b);
double intersection_volume(const Box3& a, const Box3& b);
double iou(const Box3& a, const Box3& b);

// Pairwise IoU, rows index `a`, columns index `b`; row-major a.size() x b.size().
std::vector<double> iou_matrix(std::span<const Box3> a, std::span<const Box3> b);

// Greedy NMS. Returns kept original indices in selection (descending score)
// order; equal scores resolve to the lower original index. A box is discarded
// when its IoU with an already kept box is strictly greater than `threshold`.
std::vector<std::size_t> nms(std::span<const Box3> boxes, std::span<const double> scores,
                             double threshold);

inline constexpr double kMinCenterDistance = 1e-4;

// Dense N x N inverse-distance matrix, row-major.
struct DistanceMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

// Off-diagonal D_ij = 1 / max(|c_i - c_j|, kMinCenterDistance). The diagonal
// takes the row's largest off-diagonal entry (the nearest neighbour); a single
// box gets D_00 = 1.
DistanceMatrix distance_matrix(std::span<const Box3> boxes);

double center_distance(const Box3& a, const Box3& b);

}  // namespace dlisa::geometry
