#pragma once

#include <cstdint>
#include <vector>

#include "dlisa/autodiff.hpp"
#include "dlisa/geometry.hpp"
#include "dlisa/metrics.hpp"

namespace dlisa {

using geometry::Box3;

// Simulated detector output: parallel arrays of length M.
struct CandidateSet {
  std::vector<Box3> boxes;
  std::vector<double> scores;  // detector confidence in (0, 1)
  ad::Matrix feats3d;          // M x d3

  std::size_t size() const { return boxes.size(); }
};

struct SceneObject {
  Box3 box;
  int cls = 0;
  int color = 0;
};

struct QueryRecord {
  std::vector<int> tokens;
  std::vector<std::size_t> targets;  // indices into Scene::objects, ascending
  metrics::Category kind = metrics::Category::ZeroNoDistractor;
  int target_class = -1;
};

struct Scene {
  std::uint64_t id = 0;
  std::vector<SceneObject> objects;
  ad::Matrix object_feats;  // K x d3, noise-free detector features of the ground-truth boxes
  CandidateSet candidates;
  ad::Matrix points;        // P x 6: x, y, z, r, g, b
  std::vector<QueryRecord> queries;

  std::vector<Box3> object_boxes() const;
  std::vector<int> object_classes() const;
};

}  // namespace dlisa
