#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlisa/geometry.hpp"

namespace dlisa::metrics {

using geometry::Box3;

enum class Category { ZeroNoDistractor = 0, ZeroDistractor, SingleNoDistractor, SingleDistractor, Multi };

inline constexpr std::size_t kNumCategories = 5;
inline constexpr std::array<Category, kNumCategories> kAllCategories{
    Category::ZeroNoDistractor, Category::ZeroDistractor, Category::SingleNoDistractor,
    Category::SingleDistractor, Category::Multi};

// Column labels in report order: "ZT w/o D", "ZT w/D", "ST w/o D", "ST w/D", "MT".
std::string label(Category c);
// Short machine names: "zt-d", "zt+d", "st-d", "st+d", "mt".
std::string short_name(Category c);
Category category_from_short_name(const std::string& s);

struct SampleRecord {
  std::vector<Box3> predicted;
  std::vector<Box3> ground_truth;
  int target_class = -1;
  // Class id of every object in the scene, and which of them are targets.
  std::vector<int> scene_classes;
  std::vector<std::size_t> target_objects;
};

// ZT / ST / MT by |ground_truth|; a distractor is a non-target scene object
// whose class equals target_class.
Category categorize(const SampleRecord& rec);

// Hungarian-matched F1 at IoU threshold theta. True positives are matched
// pairs with IoU >= theta. Zero-target samples score 1 iff nothing is
// predicted.
double sample_f1(std::span<const Box3> predicted, std::span<const Box3> ground_truth, double theta);
inline double sample_f1(const SampleRecord& rec, double theta) {
  return sample_f1(rec.predicted, rec.ground_truth, theta);
}

struct CategoryScore {
  double f1 = 0.0;
  std::size_t count = 0;
};

struct F1Report {
  std::array<CategoryScore, kNumCategories> categories{};
  double overall = 0.0;                  // unweighted mean over non-empty categories
  std::vector<Category> empty_categories;  // excluded from `overall`
  double theta = 0.5;

  const CategoryScore& operator[](Category c) const { return categories[static_cast<std::size_t>(c)]; }
  nlohmann::json to_json() const;
  // Fixed-width table in ZT w/o D | ZT w/D | ST w/o D | ST w/D | MT | All order.
  std::string to_table() const;
};

F1Report dataset_f1(std::span<const SampleRecord> records, double theta);

// Fraction of single-target records whose (first) predicted box has IoU >=
// theta with the ground truth. Throws if a record does not have exactly one
// ground-truth box.
double acc_at(std::span<const SampleRecord> records, double theta);

}  // namespace dlisa::metrics
