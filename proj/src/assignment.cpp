#include "dlisa/assignment.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace dlisa::assignment {

namespace {

// Shortest augmenting path with row/column potentials on a square cost
// matrix (minimisation). Returns col_of_row.
std::vector<std::size_t> solve_min_cost(const std::vector<double>& cost, std::size_t n) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; index 0 is the virtual source column.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of_col(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of_col[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of_col[j0] = row_of_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= n; ++j) col_of_row[row_of_col[j] - 1] = j - 1;
  return col_of_row;
}

}  // namespace

Matching hungarian_max(std::span<const double> benefit, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("hungarian_max: empty matrix");
  if (benefit.size() != rows * cols)
    throw std::invalid_argument("hungarian_max: benefit size does not match rows * cols");

  const std::size_t n = std::max(rows, cols);
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) cost[r * n + c] = -benefit[r * cols + c];

  const auto col_of_row = solve_min_cost(cost, n);
  Matching m;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = col_of_row[r];
    if (c >= cols) continue;
    m.pairs.emplace_back(r, c);
    m.objective += benefit[r * cols + c];
  }
  return m;
}

std::vector<int> derive_labels(const Matching& m, std::span<const double> iou,
                               std::size_t rows, std::size_t cols, double tau_train) {
  if (!(tau_train > 0.0 && tau_train < 1.0))
    throw std::invalid_argument("derive_labels: tau_train must lie in (0, 1)");
  std::vector<int> labels(rows, 0);
  if (cols == 0) return labels;
  for (const auto& [r, c] : m.pairs) {
    if (r < rows && c < cols && iou[r * cols + c] > tau_train) labels[r] = 1;
  }
  return labels;
}

std::vector<int> multi_target_labels(std::span<const double> iou, std::size_t rows,
                                     std::size_t cols, double tau_train) {
  if (cols == 0 || rows == 0) return derive_labels(Matching{}, iou, rows, 0, tau_train);
  return derive_labels(hungarian_max(iou, rows, cols), iou, rows, cols, tau_train);
}

std::optional<std::size_t> best_single(std::span<const double> iou_with_gt, double tau_train) {
  if (iou_with_gt.empty()) return std::nullopt;
  std::size_t best = 0;
  for (std::size_t i = 1; i < iou_with_gt.size(); ++i)
    if (iou_with_gt[i] > iou_with_gt[best]) best = i;
  if (iou_with_gt[best] > tau_train) return best;
  return std::nullopt;
}

}  // namespace dlisa::assignment
