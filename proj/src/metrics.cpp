#include "dlisa/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "dlisa/assignment.hpp"

namespace dlisa::metrics {

std::string label(Category c) {
  switch (c) {
    case Category::ZeroNoDistractor: return "ZT w/o D";
    case Category::ZeroDistractor: return "ZT w/D";
    case Category::SingleNoDistractor: return "ST w/o D";
    case Category::SingleDistractor: return "ST w/D";
    case Category::Multi: return "MT";
  }
  return "?";
}

std::string short_name(Category c) {
  switch (c) {
    case Category::ZeroNoDistractor: return "zt-d";
    case Category::ZeroDistractor: return "zt+d";
    case Category::SingleNoDistractor: return "st-d";
    case Category::SingleDistractor: return "st+d";
    case Category::Multi: return "mt";
  }
  return "?";
}

Category category_from_short_name(const std::string& s) {
  for (Category c : kAllCategories)
    if (short_name(c) == s) return c;
  throw std::invalid_argument("unknown query kind '" + s + "'");
}

Category categorize(const SampleRecord& rec) {
  const std::size_t k = rec.ground_truth.size();
  if (k >= 2) return Category::Multi;
  bool distractor = false;
  for (std::size_t i = 0; i < rec.scene_classes.size(); ++i) {
    const bool is_target =
        std::find(rec.target_objects.begin(), rec.target_objects.end(), i) != rec.target_objects.end();
    if (!is_target && rec.scene_classes[i] == rec.target_class) distractor = true;
  }
  if (k == 0) return distractor ? Category::ZeroDistractor : Category::ZeroNoDistractor;
  return distractor ? Category::SingleDistractor : Category::SingleNoDistractor;
}

double sample_f1(std::span<const Box3> predicted, std::span<const Box3> ground_truth, double theta) {
  if (ground_truth.empty()) return predicted.empty() ? 1.0 : 0.0;
  if (predicted.empty()) return 0.0;
  const auto iou = geometry::iou_matrix(predicted, ground_truth);
  const auto m = assignment::hungarian_max(iou, predicted.size(), ground_truth.size());
  std::size_t tp = 0;
  for (const auto& [p, g] : m.pairs)
    if (iou[p * ground_truth.size() + g] >= theta) ++tp;
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(predicted.size());
  const double recall = static_cast<double>(tp) / static_cast<double>(ground_truth.size());
  return 2.0 * precision * recall / (precision + recall);
}

F1Report dataset_f1(std::span<const SampleRecord> records, double theta) {
  F1Report r;
  r.theta = theta;
  std::array<double, kNumCategories> sums{};
  for (const auto& rec : records) {
    const auto c = static_cast<std::size_t>(categorize(rec));
    sums[c] += sample_f1(rec, theta);
    r.categories[c].count += 1;
  }
  double total = 0.0;
  std::size_t used = 0;
  for (Category c : kAllCategories) {
    auto& s = r.categories[static_cast<std::size_t>(c)];
    if (s.count == 0) {
      r.empty_categories.push_back(c);
      continue;
    }
    s.f1 = sums[static_cast<std::size_t>(c)] / static_cast<double>(s.count);
    total += s.f1;
    ++used;
  }
  r.overall = used ? total / static_cast<double>(used) : 0.0;
  return r;
}

nlohmann::json F1Report::to_json() const {
  nlohmann::json j;
  for (Category c : kAllCategories) {
    const auto& s = (*this)[c];
    j[label(c)] = {{"f1", s.f1}, {"count", s.count}};
  }
  j["overall"] = overall;
  j["theta"] = theta;
  auto empty = nlohmann::json::array();
  for (Category c : empty_categories) empty.push_back(label(c));
  j["empty_categories"] = empty;
  return j;
}

std::string F1Report::to_table() const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "F1@%.2f", theta);
  os << buf << "\n";
  for (Category c : kAllCategories) {
    std::snprintf(buf, sizeof buf, "%10s", label(c).c_str());
    os << buf;
  }
  os << "       All\n";
  for (Category c : kAllCategories) {
    const auto& s = (*this)[c];
    if (s.count == 0)
      std::snprintf(buf, sizeof buf, "%10s", "-");
    else
      std::snprintf(buf, sizeof buf, "%10.1f", 100.0 * s.f1);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%10.1f\n", 100.0 * overall);
  os << buf;
  for (Category c : kAllCategories) {
    std::snprintf(buf, sizeof buf, "%10zu", (*this)[c].count);
    os << buf;
  }
  os << "   (count)\n";
  return os.str();
}

double acc_at(std::span<const SampleRecord> records, double theta) {
  if (records.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& rec : records) {
    if (rec.ground_truth.size() != 1)
      throw std::invalid_argument("acc_at: every record needs exactly one ground-truth box");
    if (!rec.predicted.empty() && geometry::iou(rec.predicted.front(), rec.ground_truth.front()) >= theta)
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

}  // namespace dlisa::metrics
