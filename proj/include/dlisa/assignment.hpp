#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace dlisa::assignment {

struct Matching {
  // (prediction index, ground-truth index), sorted by prediction index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double objective = 0.0;
};

// Maximum-total-benefit one-to-one assignment on a row-major rows x cols
// benefit matrix (IoU values). Rectangular inputs are padded to square with
// zero-benefit dummies; dummy pairs are dropped, so |pairs| = min(rows, cols).
Matching hungarian_max(std::span<const double> benefit, std::size_t rows, std::size_t cols);

// Label n is 1 iff prediction n is matched and its matched IoU > tau_train.
// With zero ground-truth columns every label is 0.
std::vector<int> derive_labels(const Matching& m, std::span<const double> iou,
                               std::size_t rows, std::size_t cols, double tau_train);

// Convenience: match then label. cols == 0 yields all-zero labels.
std::vector<int> multi_target_labels(std::span<const double> iou, std::size_t rows,
                                     std::size_t cols, double tau_train);

// Argmax index (lowest on ties) if its IoU > tau_train.
std::optional<std::size_t> best_single(std::span<const double> iou_with_gt, double tau_train);

}  // namespace dlisa::assignment
