#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlisa/scene.hpp"

namespace dlisa::synth {

// ---- vocabulary ------------------------------------------------------------

inline constexpr int kNumClasses = 10;
inline constexpr int kNumColors = 6;
inline constexpr std::array<const char*, kNumClasses> kClassNames{
    "chair", "table", "sofa", "bed", "cabinet", "desk", "lamp", "shelf", "toilet", "sink"};
inline constexpr std::array<const char*, kNumColors> kColorNames{"red",   "green", "blue",
                                                                 "yellow", "white", "black"};

namespace token {
inline constexpr int kThe = 0;
inline constexpr int kNear = 1;
inline constexpr int kAll = 2;
inline constexpr int kFirstColor = 3;
inline constexpr int kFirstClass = kFirstColor + kNumColors;
inline constexpr int kVocabSize = kFirstClass + kNumClasses;
inline constexpr int color(int c) { return kFirstColor + c; }
inline constexpr int cls(int c) { return kFirstClass + c; }
}  // namespace token

std::string token_text(int id);
std::string query_text(const std::vector<int>& tokens);

// ---- generation ------------------------------------------------------------

struct DetectorConfig {
  std::size_t min_copies = 1;
  std::size_t max_copies = 3;
  std::size_t false_positives = 4;
  double center_noise = 0.06;  // std-dev as a fraction of the object extent
  double size_noise = 0.06;    // std-dev of the log-scale size jitter
  double score_noise = 0.05;
  double feature_noise = 0.05;
};

struct SceneConfig {
  double room_x = 6.0;
  double room_y = 6.0;
  std::size_t min_objects = 5;
  std::size_t max_objects = 8;
  std::size_t classes_per_scene = 3;
  std::size_t colors_per_scene = 2;
  std::size_t points_per_object = 150;
  double placement_gap = 0.15;
  std::size_t max_placement_tries = 2000;
  std::size_t d3 = 32;
  std::uint64_t feature_seed = 11;  // fixed detector embedding
  DetectorConfig detector;
};

struct DataConfig {
  std::uint64_t seed = 1;
  std::size_t num_scenes = 16;
  std::size_t queries_per_scene = 5;
  // Kinds requested round-robin per scene; unrealizable kinds are skipped.
  std::vector<metrics::Category> kinds{std::begin(metrics::kAllCategories),
                                       std::end(metrics::kAllCategories)};
  double near_fraction = 0.5;  // share of distractor queries phrased with "near" when possible
  SceneConfig scene;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Deterministic in (seed, cfg). Throws GenerationError when the objects
// cannot be placed without overlap within the retry budget.
Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg);

// Jittered copies of each ground-truth box plus false positives, scored by
// overlap with the ground truth. At least one copy per object has IoU >= 0.5.
CandidateSet simulate_detector(const Scene& scene, std::uint64_t seed, const SceneConfig& cfg);

// Noise-free detector embedding of a box given its class and its offset from
// the matched object's centre.
std::vector<double> detector_feature(int cls, const Box3& box, const geometry::Vec3& offset,
                                     const SceneConfig& cfg);

// Objects of class `cls` whose nearest other object has class `other`.
std::vector<std::size_t> near_targets(const Scene& scene, int cls, int other);
// Resolves a templated token sequence against the scene. Throws on tokens
// outside the supported templates.
std::vector<std::size_t> resolve_query(const Scene& scene, const std::vector<int>& tokens);

// A query whose target set realises `kind` in this scene, or nullopt when the
// scene cannot realise it.
std::optional<QueryRecord> gen_query(const Scene& scene, metrics::Category kind, std::uint64_t seed,
                                     double near_fraction = 0.5);

// Fixed seeded unit vector per token; L x d.
ad::Matrix toy_text_encode(const std::vector<int>& tokens, std::size_t d, std::uint64_t seed);
// Sinusoidal position codes, one unit-norm row per position; L x d.
ad::Matrix position_codes(std::size_t length, std::size_t d);

std::vector<Scene> gen_dataset(const DataConfig& cfg);

// ---- files -----------------------------------------------------------------
//
// <dir>/scenes.jsonl   one scene per line, "schema": 1
// <dir>/feats3d.bin    float64 array; candidate/object "feat_ref" is a row index
// <dir>/points.bin     float64 array; scene "points_ref" = {offset, count} rows
// Each .bin file: "DLSA" magic, u32 version (1), u64 rows, u64 cols, then
// rows * cols little-endian float64 values.

inline constexpr int kSchemaVersion = 1;

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

void write_array(const std::filesystem::path& file, const ad::Matrix& m);
ad::Matrix read_array(const std::filesystem::path& file);

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

}  // namespace dlisa::synth
