#include "dlisa/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dlisa/rng.hpp"

namespace dlisa {

std::vector<Box3> Scene::object_boxes() const {
  std::vector<Box3> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.box);
  return out;
}

std::vector<int> Scene::object_classes() const {
  std::vector<int> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.cls);
  return out;
}

}  // namespace dlisa

namespace dlisa::synth {

namespace {

using geometry::Vec3;

// Nominal (width, depth, height) per class, metres.
constexpr std::array<Vec3, kNumClasses> kClassSizes{{{0.5, 0.5, 0.9},
                                                     {1.2, 0.8, 0.75},
                                                     {1.8, 0.8, 0.8},
                                                     {2.0, 1.5, 0.5},
                                                     {0.6, 0.5, 1.2},
                                                     {1.2, 0.6, 0.75},
                                                     {0.3, 0.3, 1.5},
                                                     {1.0, 0.35, 1.8},
                                                     {0.4, 0.6, 0.8},
                                                     {0.5, 0.45, 0.9}}};

constexpr std::array<Vec3, kNumColors> kPalette{{{0.85, 0.10, 0.10},
                                                 {0.10, 0.70, 0.20},
                                                 {0.10, 0.20, 0.85},
                                                 {0.90, 0.85, 0.10},
                                                 {0.92, 0.92, 0.92},
                                                 {0.08, 0.08, 0.08}}};

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

Box3 inflate(const Box3& b, double gap) {
  return Box3(b.center(), {b.size()[0] + gap, b.size()[1] + gap, b.size()[2] + gap});
}

Box3 jitter(const Box3& b, const DetectorConfig& cfg, Rng& rng) {
  Vec3 c = b.center(), s = b.size();
  for (int k = 0; k < 3; ++k) {
    c[k] += rng.normal() * cfg.center_noise * b.size()[k];
    s[k] *= std::exp(rng.normal() * cfg.size_noise);
  }
  return Box3(c, s);
}

ad::Matrix detector_embedding(const SceneConfig& cfg) {
  Rng rng(cfg.feature_seed);
  const std::size_t in = kNumClasses + 6;
  ad::Matrix e(in, cfg.d3);
  for (double& v : e.data) v = rng.normal() / std::sqrt(2.0);
  return e;
}

std::size_t nearest_other(const Scene& scene, std::size_t i) {
  std::size_t best = i;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    if (j == i) continue;
    const double d = geometry::center_distance(scene.objects[i].box, scene.objects[j].box);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

int class_of_token(int t) {
  if (t < token::kFirstClass || t >= token::kVocabSize)
    throw std::invalid_argument("expected a class token, got " + token_text(t));
  return t - token::kFirstClass;
}

int color_of_token(int t) {
  if (t < token::kFirstColor || t >= token::kFirstClass)
    throw std::invalid_argument("expected a colour token, got " + token_text(t));
  return t - token::kFirstColor;
}

metrics::Category category_of(const Scene& scene, const std::vector<std::size_t>& targets, int cls) {
  metrics::SampleRecord rec;
  rec.ground_truth.reserve(targets.size());
  for (std::size_t t : targets) rec.ground_truth.push_back(scene.objects[t].box);
  rec.target_class = cls;
  rec.scene_classes = scene.object_classes();
  rec.target_objects = targets;
  return metrics::categorize(rec);
}

std::uint64_t to_u64(std::size_t v) { return static_cast<std::uint64_t>(v); }

}  // namespace

std::string token_text(int id) {
  if (id == token::kThe) return "the";
  if (id == token::kNear) return "near";
  if (id == token::kAll) return "all";
  if (id >= token::kFirstColor && id < token::kFirstClass) return kColorNames[id - token::kFirstColor];
  if (id >= token::kFirstClass && id < token::kVocabSize) return kClassNames[id - token::kFirstClass];
  return "<unk:" + std::to_string(id) + ">";
}

std::string query_text(const std::vector<int>& tokens) {
  std::string s;
  for (int t : tokens) {
    if (!s.empty()) s += ' ';
    s += token_text(t);
  }
  return s;
}

std::vector<double> detector_feature(int cls, const Box3& box, const Vec3& offset,
                                     const SceneConfig& cfg) {
  static thread_local std::pair<std::pair<std::uint64_t, std::size_t>, ad::Matrix> cache{{~0ULL, 0}, {}};
  if (cache.first != std::pair{cfg.feature_seed, cfg.d3}) cache = {{cfg.feature_seed, cfg.d3}, detector_embedding(cfg)};
  const ad::Matrix& e = cache.second;
  std::vector<double> x(kNumClasses + 6, 0.0);
  if (cls >= 0 && cls < kNumClasses) x[static_cast<std::size_t>(cls)] = 1.0;
  for (int k = 0; k < 3; ++k) {
    x[kNumClasses + k] = box.size()[k];
    x[kNumClasses + 3 + k] = 2.0 * offset[k];
  }
  std::vector<double> out(cfg.d3, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < cfg.d3; ++j) out[j] += x[i] * e(i, j);
  for (double& v : out) v = std::tanh(v);
  return out;
}

constexpr std::size_t kLayoutRestarts = 50;

Scene gen_scene(std::uint64_t seed, const SceneConfig& cfg) {
  if (cfg.min_objects == 0 || cfg.max_objects < cfg.min_objects)
    throw GenerationError("gen_scene: need 1 <= min_objects <= max_objects");
  if (cfg.classes_per_scene == 0 || cfg.classes_per_scene > kNumClasses || cfg.colors_per_scene == 0 ||
      cfg.colors_per_scene > kNumColors)
    throw GenerationError("gen_scene: classes/colours per scene out of range");
  Rng rng(seed);
  Scene scene;
  scene.id = seed;

  std::vector<int> classes(kNumClasses), colors(kNumColors);
  std::iota(classes.begin(), classes.end(), 0);
  std::iota(colors.begin(), colors.end(), 0);
  shuffle(classes, rng);
  shuffle(colors, rng);
  classes.resize(cfg.classes_per_scene);
  colors.resize(cfg.colors_per_scene);

  const std::size_t k = cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
  // A crowded layout can leave no room for the last objects; start the layout
  // over (same random stream) a few times before giving up.
  bool complete = false;
  for (std::size_t restart = 0; restart < kLayoutRestarts && !complete; ++restart) {
    scene.objects.clear();
    complete = true;
    for (std::size_t i = 0; i < k && complete; ++i) {
      const int cls = classes[rng.below(classes.size())];
      const int color = colors[rng.below(colors.size())];
      Vec3 size = kClassSizes[static_cast<std::size_t>(cls)];
      for (double& s : size) s *= rng.uniform(0.85, 1.15);
      if (rng.uniform() < 0.5) std::swap(size[0], size[1]);
      bool placed = false;
      for (std::size_t attempt = 0; attempt < cfg.max_placement_tries && !placed; ++attempt) {
        const double x = rng.uniform(0.5 * size[0], cfg.room_x - 0.5 * size[0]);
        const double y = rng.uniform(0.5 * size[1], cfg.room_y - 0.5 * size[1]);
        const Box3 box({x, y, 0.5 * size[2]}, size);
        const Box3 padded = inflate(box, cfg.placement_gap);
        const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
          return geometry::intersection_volume(padded, o.box) > 0.0;
        });
        if (!clash) {
          scene.objects.push_back({box, cls, color});
          placed = true;
        }
      }
      complete = placed;
    }
  }
  if (!complete)
    throw GenerationError("gen_scene: could not place " + std::to_string(k) + " objects without overlap (seed " +
                          std::to_string(seed) + ")");

  scene.points = ad::Matrix(k * cfg.points_per_object, 6);
  std::size_t row = 0;
  for (const auto& o : scene.objects) {
    const Vec3 lo = o.box.min_corner(), hi = o.box.max_corner();
    const Vec3& rgb = kPalette[static_cast<std::size_t>(o.color)];
    for (std::size_t p = 0; p < cfg.points_per_object; ++p, ++row) {
      for (int a = 0; a < 3; ++a) scene.points(row, a) = rng.uniform(lo[a], hi[a]);
      for (int a = 0; a < 3; ++a) scene.points(row, 3 + a) = std::clamp(rgb[a] + rng.normal(0.0, 0.03), 0.0, 1.0);
    }
  }

  scene.object_feats = ad::Matrix(k, cfg.d3);
  for (std::size_t i = 0; i < k; ++i) {
    const auto f = detector_feature(scene.objects[i].cls, scene.objects[i].box, {0, 0, 0}, cfg);
    std::copy(f.begin(), f.end(), &scene.object_feats(i, 0));
  }
  scene.candidates = simulate_detector(scene, mix_seed(seed, 1), cfg);
  return scene;
}

CandidateSet simulate_detector(const Scene& scene, std::uint64_t seed, const SceneConfig& cfg) {
  const DetectorConfig& det = cfg.detector;
  if (det.min_copies == 0 || det.max_copies < det.min_copies)
    throw std::invalid_argument("simulate_detector: need 1 <= min_copies <= max_copies");
  Rng rng(seed);
  std::vector<Box3> boxes;
  for (const auto& o : scene.objects) {
    const std::size_t copies = det.min_copies + rng.below(det.max_copies - det.min_copies + 1);
    for (std::size_t c = 0; c < copies; ++c) {
      Box3 b = jitter(o.box, det, rng);
      if (c == 0) {
        for (int attempt = 0; attempt < 100 && geometry::iou(b, o.box) < 0.5; ++attempt) b = jitter(o.box, det, rng);
        if (geometry::iou(b, o.box) < 0.5) b = o.box;
      }
      boxes.push_back(b);
    }
  }
  for (std::size_t f = 0; f < det.false_positives; ++f) {
    const Vec3 size{rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.2), rng.uniform(0.3, 1.5)};
    const Vec3 center{rng.uniform(0.5 * size[0], cfg.room_x - 0.5 * size[0]),
                      rng.uniform(0.5 * size[1], cfg.room_y - 0.5 * size[1]), 0.5 * size[2]};
    boxes.emplace_back(center, size);
  }
  shuffle(boxes, rng);

  CandidateSet out;
  out.feats3d = ad::Matrix(boxes.size(), cfg.d3);
  for (std::size_t m = 0; m < boxes.size(); ++m) {
    double best = 0.0;
    std::size_t match = 0;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const double v = geometry::iou(boxes[m], scene.objects[i].box);
      if (v > best) {
        best = v;
        match = i;
      }
    }
    out.scores.push_back(std::clamp(best + rng.normal(0.0, det.score_noise), 1e-3, 1.0 - 1e-3));
    int cls;
    Vec3 offset;
    if (best > 0.1) {
      cls = scene.objects[match].cls;
      for (int a = 0; a < 3; ++a) offset[a] = boxes[m].center()[a] - scene.objects[match].box.center()[a];
    } else {
      cls = static_cast<int>(rng.below(kNumClasses));
      for (int a = 0; a < 3; ++a) offset[a] = rng.normal(0.0, 0.3);
    }
    auto f = detector_feature(cls, boxes[m], offset, cfg);
    for (std::size_t j = 0; j < cfg.d3; ++j) out.feats3d(m, j) = f[j] + rng.normal(0.0, det.feature_noise);
  }
  out.boxes = std::move(boxes);
  return out;
}

std::vector<std::size_t> near_targets(const Scene& scene, int cls, int other) {
  std::vector<std::size_t> out;
  if (scene.objects.size() < 2) return out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].cls != cls) continue;
    if (scene.objects[nearest_other(scene, i)].cls == other) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> resolve_query(const Scene& scene, const std::vector<int>& tokens) {
  std::vector<std::size_t> out;
  auto select = [&](auto pred) {
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      if (pred(scene.objects[i])) out.push_back(i);
  };
  const std::size_t n = tokens.size();
  if (n == 3 && tokens[0] == token::kThe) {
    const int color = color_of_token(tokens[1]);
    const int cls = class_of_token(tokens[2]);
    select([&](const SceneObject& o) { return o.cls == cls && o.color == color; });
  } else if (n == 2 && tokens[0] == token::kThe) {
    const int cls = class_of_token(tokens[1]);
    select([&](const SceneObject& o) { return o.cls == cls; });
  } else if (n == 3 && tokens[0] == token::kAll && tokens[1] == token::kThe) {
    const int cls = class_of_token(tokens[2]);
    select([&](const SceneObject& o) { return o.cls == cls; });
  } else if (n == 5 && tokens[0] == token::kThe && tokens[2] == token::kNear && tokens[3] == token::kThe) {
    out = near_targets(scene, class_of_token(tokens[1]), class_of_token(tokens[4]));
  } else {
    throw std::invalid_argument("resolve_query: unsupported template '" + query_text(tokens) + "'");
  }
  return out;
}

std::optional<QueryRecord> gen_query(const Scene& scene, metrics::Category kind, std::uint64_t seed,
                                     double near_fraction) {
  using metrics::Category;
  std::vector<std::vector<int>> plain, near;
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& o : scene.objects) ++counts[static_cast<std::size_t>(o.cls)];

  auto consider = [&](std::vector<int> tokens, int cls, bool is_near) {
    const auto targets = resolve_query(scene, tokens);
    if (category_of(scene, targets, cls) != kind) return;
    (is_near ? near : plain).push_back(std::move(tokens));
  };
  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < kNumColors; ++k) consider({token::kThe, token::color(k), token::cls(c)}, c, false);
    if (counts[static_cast<std::size_t>(c)] <= 1)
      consider({token::kThe, token::cls(c)}, c, false);
    else
      consider({token::kAll, token::kThe, token::cls(c)}, c, false);
    if (kind == Category::SingleDistractor || kind == Category::Multi || kind == Category::ZeroDistractor) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      for (int o = 0; o < kNumClasses; ++o) {
        if (o == c || counts[static_cast<std::size_t>(o)] == 0) continue;
        consider({token::kThe, token::cls(c), token::kNear, token::kThe, token::cls(o)}, c, true);
      }
    }
  }
  if (plain.empty() && near.empty()) return std::nullopt;

  Rng rng(seed);
  const bool use_near = !near.empty() && (plain.empty() || rng.uniform() < near_fraction);
  const auto& pool = use_near ? near : plain;
  QueryRecord q;
  q.tokens = pool[rng.below(pool.size())];
  q.targets = resolve_query(scene, q.tokens);
  q.kind = kind;
  for (int t : q.tokens) {
    if (t >= token::kFirstClass) {
      q.target_class = t - token::kFirstClass;
      break;
    }
  }
  return q;
}

ad::Matrix toy_text_encode(const std::vector<int>& tokens, std::size_t d, std::uint64_t seed) {
  if (tokens.empty()) throw std::invalid_argument("toy_text_encode: empty token list");
  ad::Matrix out(tokens.size(), d);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int t = tokens[i];
    if (t < 0 || t >= token::kVocabSize)
      throw std::invalid_argument("toy_text_encode: unknown token id " + std::to_string(t));
    Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(t)));
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = rng.normal();
      norm += out(i, j) * out(i, j);
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) out(i, j) /= norm;
  }
  return out;
}

ad::Matrix position_codes(std::size_t length, std::size_t d) {
  ad::Matrix out(length, d);
  for (std::size_t i = 0; i < length; ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      out(i, j) = j % 2 == 0 ? std::sin(static_cast<double>(i) * freq) : std::cos(static_cast<double>(i) * freq);
      norm += out(i, j) * out(i, j);
    }
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < d; ++j) out(i, j) /= norm;
  }
  return out;
}

std::vector<Scene> gen_dataset(const DataConfig& cfg) {
  if (cfg.kinds.empty()) throw std::invalid_argument("gen_dataset: no query kinds requested");
  std::vector<Scene> scenes;
  scenes.reserve(cfg.num_scenes);
  for (std::size_t s = 0; s < cfg.num_scenes; ++s) {
    const std::uint64_t scene_seed = cfg.seed + to_u64(s);
    Scene scene = gen_scene(scene_seed, cfg.scene);
    for (std::size_t q = 0; q < cfg.queries_per_scene; ++q) {
      const auto kind = cfg.kinds[(s + q) % cfg.kinds.size()];
      if (auto rec = gen_query(scene, kind, mix_seed(scene_seed, 100 + to_u64(q)), cfg.near_fraction))
        scene.queries.push_back(std::move(*rec));
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// ---- files -----------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "array files assume a little-endian host");

void write_array(const std::filesystem::path& file, const ad::Matrix& m) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  const std::uint32_t version = 1;
  const std::uint64_t rows = m.rows, cols = m.cols;
  out.write("DLSA", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write to " + file.string());
}

ad::Matrix read_array(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t rows = 0, cols = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || std::memcmp(magic, "DLSA", 4) != 0 || version != 1)
    throw std::runtime_error(file.string() + ": not a version-1 DLSA array file");
  ad::Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error(file.string() + ": truncated array data");
  return m;
}

namespace {

nlohmann::json box_json(const Box3& b) {
  return {{"center", {b.center()[0], b.center()[1], b.center()[2]}},
          {"size", {b.size()[0], b.size()[1], b.size()[2]}}};
}

Box3 box_from_json(const nlohmann::json& j) {
  const auto c = j.at("center").get<std::vector<double>>();
  const auto s = j.at("size").get<std::vector<double>>();
  if (c.size() != 3 || s.size() != 3) throw std::runtime_error("box needs 3-vector center and size");
  return Box3({c[0], c[1], c[2]}, {s[0], s[1], s[2]});
}

void append_rows(ad::Matrix& dst, const ad::Matrix& src) {
  if (src.rows == 0) return;
  if (dst.cols == 0 && dst.rows == 0) dst.cols = src.cols;
  if (src.cols != dst.cols) throw std::runtime_error("write_dataset: inconsistent feature widths");
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
  dst.rows += src.rows;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
  std::ofstream jsonl(dir / "scenes.jsonl");
  if (!jsonl) throw std::runtime_error("cannot write " + (dir / "scenes.jsonl").string());

  ad::Matrix feats, points;
  for (const auto& s : scenes) {
    nlohmann::json j;
    j["schema"] = kSchemaVersion;
    j["id"] = s.id;
    auto objects = nlohmann::json::array();
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      auto o = box_json(s.objects[i].box);
      o["class"] = s.objects[i].cls;
      o["class_name"] = kClassNames[static_cast<std::size_t>(s.objects[i].cls)];
      o["color"] = s.objects[i].color;
      o["color_name"] = kColorNames[static_cast<std::size_t>(s.objects[i].color)];
      o["feat_ref"] = feats.rows + i;
      objects.push_back(o);
    }
    append_rows(feats, s.object_feats);
    auto candidates = nlohmann::json::array();
    for (std::size_t m = 0; m < s.candidates.size(); ++m) {
      auto c = box_json(s.candidates.boxes[m]);
      c["score"] = s.candidates.scores[m];
      c["feat_ref"] = feats.rows + m;
      candidates.push_back(c);
    }
    append_rows(feats, s.candidates.feats3d);
    auto queries = nlohmann::json::array();
    for (const auto& q : s.queries) {
      queries.push_back({{"tokens", q.tokens},
                         {"text", query_text(q.tokens)},
                         {"targets", q.targets},
                         {"kind", metrics::short_name(q.kind)},
                         {"target_class", q.target_class}});
    }
    j["objects"] = objects;
    j["candidates"] = candidates;
    j["queries"] = queries;
    j["points_ref"] = {{"offset", points.rows}, {"count", s.points.rows}};
    append_rows(points, s.points);
    jsonl << j.dump() << '\n';
  }
  if (!jsonl) throw std::runtime_error("short write to scenes.jsonl");
  write_array(dir / "feats3d.bin", feats);
  write_array(dir / "points.bin", points);
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  std::ifstream jsonl(dir / "scenes.jsonl");
  if (!jsonl) throw std::runtime_error("cannot read " + (dir / "scenes.jsonl").string());
  const ad::Matrix feats = read_array(dir / "feats3d.bin");
  const ad::Matrix points = read_array(dir / "points.bin");

  auto feat_rows = [&](const nlohmann::json& items) {
    ad::Matrix m(items.size(), feats.cols);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const std::size_t r = items[i].at("feat_ref").get<std::size_t>();
      if (r >= feats.rows) throw std::runtime_error("feat_ref out of range");
      std::copy_n(&feats.data[r * feats.cols], feats.cols, &m(i, 0));
    }
    return m;
  };

  std::vector<Scene> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(jsonl, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("schema").get<int>() != kSchemaVersion)
        throw std::runtime_error("unsupported schema version");
      Scene s;
      s.id = j.at("id").get<std::uint64_t>();
      for (const auto& o : j.at("objects"))
        s.objects.push_back({box_from_json(o), o.at("class").get<int>(), o.at("color").get<int>()});
      s.object_feats = feat_rows(j.at("objects"));
      for (const auto& c : j.at("candidates")) {
        s.candidates.boxes.push_back(box_from_json(c));
        s.candidates.scores.push_back(c.at("score").get<double>());
      }
      s.candidates.feats3d = feat_rows(j.at("candidates"));
      for (const auto& q : j.at("queries")) {
        QueryRecord r;
        r.tokens = q.at("tokens").get<std::vector<int>>();
        r.targets = q.at("targets").get<std::vector<std::size_t>>();
        r.kind = metrics::category_from_short_name(q.at("kind").get<std::string>());
        r.target_class = q.at("target_class").get<int>();
        s.queries.push_back(std::move(r));
      }
      const std::size_t off = j.at("points_ref").at("offset").get<std::size_t>();
      const std::size_t cnt = j.at("points_ref").at("count").get<std::size_t>();
      if (off + cnt > points.rows) throw std::runtime_error("points_ref out of range");
      s.points = ad::Matrix(cnt, points.cols);
      std::copy_n(&points.data[off * points.cols], cnt * points.cols, s.points.data.begin());
      scenes.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error("scenes.jsonl line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return scenes;
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = {{"room_x", c.room_x},
       {"room_y", c.room_y},
       {"min_objects", c.min_objects},
       {"max_objects", c.max_objects},
       {"classes_per_scene", c.classes_per_scene},
       {"colors_per_scene", c.colors_per_scene},
       {"points_per_object", c.points_per_object},
       {"placement_gap", c.placement_gap},
       {"max_placement_tries", c.max_placement_tries},
       {"d3", c.d3},
       {"feature_seed", c.feature_seed},
       {"detector",
        {{"min_copies", c.detector.min_copies},
         {"max_copies", c.detector.max_copies},
         {"false_positives", c.detector.false_positives},
         {"center_noise", c.detector.center_noise},
         {"size_noise", c.detector.size_noise},
         {"score_noise", c.detector.score_noise},
         {"feature_noise", c.detector.feature_noise}}}};
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
  SceneConfig d;
  c.room_x = j.value("room_x", d.room_x);
  c.room_y = j.value("room_y", d.room_y);
  c.min_objects = j.value("min_objects", d.min_objects);
  c.max_objects = j.value("max_objects", d.max_objects);
  c.classes_per_scene = j.value("classes_per_scene", d.classes_per_scene);
  c.colors_per_scene = j.value("colors_per_scene", d.colors_per_scene);
  c.points_per_object = j.value("points_per_object", d.points_per_object);
  c.placement_gap = j.value("placement_gap", d.placement_gap);
  c.max_placement_tries = j.value("max_placement_tries", d.max_placement_tries);
  c.d3 = j.value("d3", d.d3);
  c.feature_seed = j.value("feature_seed", d.feature_seed);
  const auto det = j.value("detector", nlohmann::json::object());
  c.detector.min_copies = det.value("min_copies", d.detector.min_copies);
  c.detector.max_copies = det.value("max_copies", d.detector.max_copies);
  c.detector.false_positives = det.value("false_positives", d.detector.false_positives);
  c.detector.center_noise = det.value("center_noise", d.detector.center_noise);
  c.detector.size_noise = det.value("size_noise", d.detector.size_noise);
  c.detector.score_noise = det.value("score_noise", d.detector.score_noise);
  c.detector.feature_noise = det.value("feature_noise", d.detector.feature_noise);
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  auto kinds = nlohmann::json::array();
  for (auto k : c.kinds) kinds.push_back(metrics::short_name(k));
  j = {{"seed", c.seed},
       {"num_scenes", c.num_scenes},
       {"queries_per_scene", c.queries_per_scene},
       {"kinds", kinds},
       {"near_fraction", c.near_fraction},
       {"scene", c.scene}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  DataConfig d;
  c.seed = j.value("seed", d.seed);
  c.num_scenes = j.value("num_scenes", d.num_scenes);
  c.queries_per_scene = j.value("queries_per_scene", d.queries_per_scene);
  if (j.contains("kinds")) {
    c.kinds.clear();
    for (const auto& k : j.at("kinds")) c.kinds.push_back(metrics::category_from_short_name(k.get<std::string>()));
  } else {
    c.kinds = d.kinds;
  }
  c.near_fraction = j.value("near_fraction", d.near_fraction);
  c.scene = j.value("scene", d.scene);
}

}  // namespace dlisa::synth
