#include "dlisa/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "dlisa/assignment.hpp"
#include "dlisa/losses.hpp"

namespace dlisa::train {

using nlohmann::json;
using ad::Var;

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, Mode mode) {
  std::vector<Sample> out;
  for (const auto& scene : scenes)
    for (const auto& q : scene.queries) {
      if (mode != Mode::Multi && q.targets.size() != 1) continue;
      out.push_back({&scene, &q});
    }
  return out;
}

Model::Model(const RunConfig& cfg) : cfg_(cfg), vision_(cfg.model), fusion_(cfg.model) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 3));
  vision_.register_params(params_, rng);
  fusion_.register_params(params_, rng);
}

ad::Matrix Model::word_features(const QueryRecord& q) const {
  // Token vectors carry no order; the position codes let the fusion module
  // tell "the X near the Y" from "the Y near the X".
  ad::Matrix words = synth::toy_text_encode(q.tokens, cfg_.model.d, mix_seed(cfg_.model.encoder_seed, 2));
  const ad::Matrix pos = synth::position_codes(words.rows, words.cols);
  for (std::size_t k = 0; k < words.data.size(); ++k) words.data[k] += pos.data[k];
  return words;
}

SamplePlan plan_sample(Model& model, const Sample& s) {
  const auto& cfg = model.config();
  SamplePlan p;
  p.vision = model.vision().plan(*s.scene, model.params(), cfg.mode == Mode::GivenProposals);
  p.dist = geometry::distance_matrix(p.vision.proposals.boxes);
  p.words = model.word_features(*s.query);
  for (std::size_t t : s.query->targets) p.targets.push_back(s.scene->objects.at(t).box);

  const auto& boxes = p.vision.proposals.boxes;
  const auto iou = geometry::iou_matrix(boxes, p.targets);
  p.labels = assignment::multi_target_labels(iou, boxes.size(), p.targets.size(), cfg.loss.tau_train);
  if (p.targets.size() == 1) p.single_target = assignment::best_single(iou, cfg.loss.tau_train);
  return p;
}

SampleForward forward_sample(Tape& tape, Model& model, const Sample& s, const SamplePlan& plan) {
  SampleForward f;
  f.vision = model.vision().forward(tape, model.params(), *s.scene, plan.vision);
  f.fusion = model.fusion().forward(tape, model.params(), f.vision.feats, tape.constant(plan.words), plan.dist);
  return f;
}

BatchLoss batch_loss(Tape& tape, Model& model, std::span<const Sample> samples,
                     std::span<const SamplePlan> plans) {
  if (samples.size() != plans.size()) throw std::invalid_argument("batch_loss: samples and plans differ in size");
  const auto& cfg = model.config();
  const bool multi = cfg.mode == Mode::Multi;

  BatchLoss out;
  Var total = tape.constant(ad::Matrix(1, 1, 0.0));
  std::vector<Var> objects, sentences;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& plan = plans[i];
    const auto f = forward_sample(tape, model, samples[i], plan);

    losses::LossParts parts;
    parts.ref = multi ? losses::loss_ref_multi(f.fusion.probs, plan.labels)
                      : losses::loss_ref_single(tape, f.fusion.logits, plan.single_target);
    if (plan.vision.gated) parts.dyn = losses::loss_dyn(f.vision.all_alphas);
    total = ad::add(total, losses::loss_total(tape, parts, cfg.loss));
    out.ref += parts.ref.scalar();
    if (parts.dyn.valid()) out.dyn += parts.dyn.scalar();
    out.proposals += static_cast<double>(plan.vision.proposals.boxes.size());
    out.candidates += static_cast<double>(plan.vision.gated ? samples[i].scene->candidates.size()
                                                            : samples[i].scene->objects.size());

    std::vector<std::size_t> positives;
    if (multi) {
      for (std::size_t n = 0; n < plan.labels.size(); ++n)
        if (plan.labels[n] == 1) positives.push_back(n);
    } else if (plan.single_target) {
      positives.push_back(*plan.single_target);
    }
    if (!positives.empty()) {
      objects.push_back(ad::mean_rows(ad::gather_rows(f.fusion.fused, positives)));
      sentences.push_back(f.fusion.sentence);
    }
  }
  Var ctr = losses::loss_contrastive(tape, objects, sentences, cfg.loss.temperature);
  out.ctr = ctr.scalar();
  out.total = ad::add(total, ad::scale(ctr, cfg.loss.lambda_ctr));
  return out;
}

// ---- optimiser -------------------------------------------------------------------

void AdamW::step(ad::ParamStore& params) {
  auto& ps = params.params();
  if (m_.empty()) {
    for (const auto& p : ps) {
      m_.emplace_back(p->value.rows, p->value.cols, 0.0);
      v_.emplace_back(p->value.rows, p->value.cols, 0.0);
    }
  }
  if (m_.size() != ps.size()) throw std::logic_error("AdamW::step: parameter set changed");
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double decay = 1.0 - cfg_.lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& val = ps[i]->value.data;
    const auto& g = ps[i]->grad.data;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    for (std::size_t k = 0; k < val.size(); ++k) {
      val[k] *= decay;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      val[k] -= cfg_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
    }
  }
}

json AdamW::state() const {
  json j;
  j["step"] = step_;
  json m = json::array(), v = json::array();
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m.push_back(m_[i].data);
    v.push_back(v_[i].data);
  }
  j["m"] = std::move(m);
  j["v"] = std::move(v);
  return j;
}

void AdamW::load_state(const json& j, const ad::ParamStore& params) {
  step_ = j.at("step").get<std::size_t>();
  m_.clear();
  v_.clear();
  const auto& m = j.at("m");
  const auto& v = j.at("v");
  if (m.empty()) return;
  const auto& ps = params.params();
  if (m.size() != ps.size() || v.size() != ps.size())
    throw std::runtime_error("checkpoint: optimizer state does not match the parameter set");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ad::Matrix mi(ps[i]->value.rows, ps[i]->value.cols), vi(ps[i]->value.rows, ps[i]->value.cols);
    mi.data = m[i].get<std::vector<double>>();
    vi.data = v[i].get<std::vector<double>>();
    if (mi.data.size() != ps[i]->value.data.size() || vi.data.size() != ps[i]->value.data.size())
      throw std::runtime_error("checkpoint: optimizer moment size mismatch for " + ps[i]->name);
    m_.push_back(std::move(mi));
    v_.push_back(std::move(vi));
  }
}

// ---- training ----------------------------------------------------------------------

EpochRecord train_epoch(TrainState& state, std::span<const Sample> train) {
  if (train.empty()) throw std::invalid_argument("train_epoch: empty training set");
  auto& model = state.model;
  const std::size_t batch = model.config().optim.batch_size;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[state.rng.below(i)]);

  EpochRecord rec;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    std::vector<Sample> samples;
    std::vector<SamplePlan> plans;
    for (std::size_t k = start; k < end; ++k) {
      samples.push_back(train[order[k]]);
      plans.push_back(plan_sample(model, samples.back()));
    }
    model.params().zero_grad();
    Tape tape;
    const auto loss = batch_loss(tape, model, samples, plans);
    const double value = loss.total.scalar();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss at epoch " << state.epoch + 1 << ", batch " << batches << " (ref " << loss.ref
          << ", ctr " << loss.ctr << ", dyn " << loss.dyn << ")";
      throw TrainingError(msg.str());
    }
    tape.backward(loss.total);
    state.optimizer.step(model.params());

    rec.loss += value;
    rec.ref += loss.ref;
    rec.dyn += loss.dyn;
    rec.ctr += loss.ctr;
    rec.mean_proposals += loss.proposals;
    rec.mean_candidates += loss.candidates;
    ++batches;
  }
  const double n = static_cast<double>(train.size());
  rec.loss /= n;
  rec.ref /= n;
  rec.dyn /= n;
  rec.ctr /= static_cast<double>(batches);
  rec.mean_proposals /= n;
  rec.mean_candidates /= n;
  return rec;
}

std::vector<EpochRecord> train(TrainState& state, std::span<const Sample> train_set,
                               std::span<const Sample> val_set, const TrainOptions& opt) {
  const std::size_t epochs = opt.epochs ? opt.epochs : state.model.config().optim.epochs;
  std::vector<EpochRecord> out;
  for (std::size_t e = 0; e < epochs; ++e) {
    auto rec = train_epoch(state, train_set);
    ++state.epoch;
    rec.epoch = state.epoch;
    if (opt.eval_every && !val_set.empty() && state.epoch % opt.eval_every == 0)
      rec.val_score = evaluate(state.model, val_set, state.model.config().tau_pred).score();
    state.history.push_back(rec);
    out.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------------------

std::vector<SamplePrediction> predict(Model& model, std::span<const Sample> samples) {
  std::vector<SamplePrediction> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto plan = plan_sample(model, s);
    Tape tape;
    const auto f = forward_sample(tape, model, s, plan);
    SamplePrediction p;
    p.probs = f.fusion.probs.value().data;
    p.proposals = plan.vision.proposals.boxes;
    p.candidates = plan.vision.gated ? s.scene->candidates.size() : s.scene->objects.size();
    out.push_back(std::move(p));
  }
  return out;
}

EvalReport score_predictions(const Model& model, std::span<const Sample> samples,
                             std::span<const SamplePrediction> preds, double tau_pred) {
  if (!(tau_pred > 0.0 && tau_pred < 1.0)) throw std::invalid_argument("tau_pred must lie in (0, 1)");
  if (samples.size() != preds.size()) throw std::invalid_argument("score_predictions: size mismatch");
  const auto& cfg = model.config();
  EvalReport r;
  r.mode = cfg.mode;
  r.tau_pred = tau_pred;
  r.samples = samples.size();

  std::vector<metrics::SampleRecord> records;
  records.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = preds[i];
    metrics::SampleRecord rec;
    if (cfg.mode == Mode::Multi) {
      rec.predicted = fusion::predict_multi(p.probs, p.proposals, tau_pred);
    } else {
      rec.predicted = {fusion::predict_single(p.probs, p.proposals)};
    }
    for (std::size_t t : s.query->targets) rec.ground_truth.push_back(s.scene->objects.at(t).box);
    rec.target_class = s.query->target_class;
    rec.scene_classes = s.scene->object_classes();
    rec.target_objects = s.query->targets;
    records.push_back(std::move(rec));
    r.mean_proposals += static_cast<double>(p.proposals.size());
    r.mean_candidates += static_cast<double>(p.candidates);
  }
  if (!samples.empty()) {
    r.mean_proposals /= static_cast<double>(samples.size());
    r.mean_candidates /= static_cast<double>(samples.size());
  }
  r.f1 = metrics::dataset_f1(records, cfg.eval_iou);
  if (cfg.mode != Mode::Multi && !records.empty()) r.accuracy = metrics::acc_at(records, cfg.eval_iou);
  return r;
}

EvalReport evaluate(Model& model, std::span<const Sample> samples, double tau_pred) {
  const auto preds = predict(model, samples);
  return score_predictions(model, samples, preds, tau_pred);
}

json EvalReport::to_json() const {
  json j;
  j["mode"] = dlisa::to_string(mode);
  j["tau_pred"] = tau_pred;
  j["samples"] = samples;
  j["mean_proposals"] = mean_proposals;
  j["mean_candidates"] = mean_candidates;
  j["f1"] = f1.to_json();
  if (mode != Mode::Multi) j["accuracy"] = accuracy;
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << f1.to_table();
  os << std::fixed << std::setprecision(1);
  if (mode != Mode::Multi) os << "Acc@" << f1.theta << ": " << 100.0 * accuracy << "\n";
  os << "samples " << samples << ", tau_pred " << std::setprecision(2) << tau_pred << ", proposals "
     << mean_proposals << " of " << mean_candidates << " candidates\n";
  return os.str();
}

SweepResult sweep_predictions(const Model& model, std::span<const Sample> samples,
                              std::span<const SamplePrediction> preds, const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty tau_pred grid");
  SweepResult r;
  double best = -1.0;
  for (double tau : grid) {
    auto rep = score_predictions(model, samples, preds, tau);
    const double score = rep.score();
    r.table.emplace_back(tau, score);
    if (score > best) {
      best = score;
      r.best_tau = tau;
    }
    r.reports.push_back(std::move(rep));
  }
  return r;
}

SweepResult sweep_tau_pred(Model& model, std::span<const Sample> samples, const std::vector<double>& grid) {
  const auto preds = predict(model, samples);
  return sweep_predictions(model, samples, preds, grid);
}

// ---- checkpoints -------------------------------------------------------------------------

namespace {

json history_json(const std::vector<EpochRecord>& history) {
  json arr = json::array();
  for (const auto& r : history) {
    json j{{"epoch", r.epoch}, {"loss", r.loss}, {"ref", r.ref}, {"ctr", r.ctr}, {"dyn", r.dyn},
           {"mean_proposals", r.mean_proposals}, {"mean_candidates", r.mean_candidates}};
    j["val_score"] = r.val_score ? json(*r.val_score) : json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr;
}

std::vector<EpochRecord> history_from_json(const json& arr) {
  std::vector<EpochRecord> out;
  for (const auto& j : arr) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<std::size_t>();
    r.loss = j.at("loss").get<double>();
    r.ref = j.at("ref").get<double>();
    r.ctr = j.at("ctr").get<double>();
    r.dyn = j.at("dyn").get<double>();
    r.mean_proposals = j.at("mean_proposals").get<double>();
    r.mean_candidates = j.at("mean_candidates").get<double>();
    if (!j.at("val_score").is_null()) r.val_score = j.at("val_score").get<double>();
    out.push_back(r);
  }
  return out;
}

}  // namespace

json checkpoint_json(const TrainState& state) {
  json j;
  j["format"] = "dlisa-checkpoint";
  j["version"] = 1;
  j["config"] = state.model.config();
  j["epoch"] = state.epoch;
  j["rng_state"] = state.rng.state();
  j["optimizer"] = state.optimizer.state();
  json params = json::array();
  for (const auto& p : state.model.params().params())
    params.push_back({{"name", p->name}, {"shape", {p->value.rows, p->value.cols}}, {"values", p->value.data}});
  j["params"] = std::move(params);
  j["history"] = history_json(state.history);
  return j;
}

void save_checkpoint(const std::filesystem::path& file, const TrainState& state) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write checkpoint " + file.string());
  os << checkpoint_json(state).dump() << "\n";
  if (!os) throw std::runtime_error("failed writing checkpoint " + file.string());
}

TrainState state_from_json(const json& j) {
  if (j.value("format", "") != "dlisa-checkpoint") throw std::runtime_error("not a checkpoint file");
  if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported checkpoint version");
  TrainState st(j.at("config").get<RunConfig>());
  auto& ps = st.model.params().params();
  const auto& saved = j.at("params");
  if (saved.size() != ps.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& rec = saved[i];
    auto& p = *ps[i];
    if (rec.at("name").get<std::string>() != p.name)
      throw std::runtime_error("checkpoint: expected parameter " + p.name);
    const auto shape = rec.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p.value.rows || shape[1] != p.value.cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    p.value.data = rec.at("values").get<std::vector<double>>();
    if (p.value.data.size() != p.value.rows * p.value.cols)
      throw std::runtime_error("checkpoint: value count mismatch for " + p.name);
  }
  st.epoch = j.at("epoch").get<std::size_t>();
  st.rng.set_state(j.at("rng_state").get<std::string>());
  st.optimizer.load_state(j.at("optimizer"), st.model.params());
  st.history = history_from_json(j.value("history", json::array()));
  return st;
}

TrainState load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open checkpoint " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + file.string() + ": " + e.what());
  }
  return state_from_json(j);
}

static const char* kHistoryHeader = "epoch,loss,ref,ctr,dyn,mean_proposals,mean_candidates,val_score";

void write_history_csv(const std::filesystem::path& file, const std::vector<EpochRecord>& history) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << kHistoryHeader << "\n" << std::setprecision(17);
  for (const auto& r : history) {
    os << r.epoch << ',' << r.loss << ',' << r.ref << ',' << r.ctr << ',' << r.dyn << ',' << r.mean_proposals << ','
       << r.mean_candidates << ',';
    if (r.val_score) os << *r.val_score;
    os << "\n";
  }
}

std::vector<EpochRecord> read_history_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open history " + file.string());
  std::string line;
  if (!std::getline(is, line) || line != kHistoryHeader)
    throw std::runtime_error("history " + file.string() + ": unexpected header");
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 7) cells.emplace_back();
    if (cells.size() != 8) throw std::runtime_error("history " + file.string() + ": bad row '" + line + "'");
    try {
      EpochRecord r;
      r.epoch = std::stoul(cells[0]);
      r.loss = std::stod(cells[1]);
      r.ref = std::stod(cells[2]);
      r.ctr = std::stod(cells[3]);
      r.dyn = std::stod(cells[4]);
      r.mean_proposals = std::stod(cells[5]);
      r.mean_candidates = std::stod(cells[6]);
      if (!cells[7].empty()) r.val_score = std::stod(cells[7]);
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw std::runtime_error("history " + file.string() + ": bad row '" + line + "'");
    }
  }
  return out;
}

// ---- gradient check --------------------------------------------------------------------

GradcheckSpec small_gradcheck_spec(std::uint64_t seed) {
  GradcheckSpec spec;
  spec.seed = seed;
  auto& m = spec.cfg.model;
  m.d = 8;
  m.d3 = 6;
  m.d2 = 6;
  m.layers = 2;
  m.heads = 1;
  m.views = 2;
  m.render_res = 8;
  m.pose_hidden = 4;
  spec.cfg.seed = seed;
  spec.cfg.mode = Mode::Multi;
  auto& s = spec.scene;
  s.d3 = m.d3;
  s.min_objects = 2;
  s.max_objects = 3;
  s.points_per_object = 40;
  s.detector.min_copies = 1;
  s.detector.max_copies = 1;
  s.detector.false_positives = 2;
  return spec;
}

ad::FdReport gradcheck_all(const GradcheckSpec& spec) {
  if (spec.scene.d3 != spec.cfg.model.d3) throw std::invalid_argument("gradcheck: scene d3 != model d3");
  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < spec.samples; ++i) {
    const std::uint64_t seed = mix_seed(spec.seed, 1000 + i);
    Scene scene = synth::gen_scene(seed, spec.scene);
    std::optional<QueryRecord> q;
    for (std::size_t k = 0; k < metrics::kNumCategories && !q; ++k) {
      const auto kind = metrics::kAllCategories[(i + k) % metrics::kNumCategories];
      if (kind == metrics::Category::ZeroNoDistractor || kind == metrics::Category::ZeroDistractor) continue;
      q = synth::gen_query(scene, kind, mix_seed(seed, 7), 0.5);
    }
    if (!q) {
      QueryRecord fallback;
      fallback.tokens = {synth::token::kThe, synth::token::cls(scene.objects.front().cls)};
      fallback.targets = synth::resolve_query(scene, fallback.tokens);
      fallback.target_class = scene.objects.front().cls;
      q = fallback;
    }
    scene.queries = {*q};
    scenes.push_back(std::move(scene));
  }

  Model model(spec.cfg);
  const auto samples = make_samples(scenes, spec.cfg.mode);
  std::vector<SamplePlan> plans;
  for (const auto& s : samples) plans.push_back(plan_sample(model, s));

  auto build = [&](Tape& tape) { return batch_loss(tape, model, samples, plans).total; };
  std::function<void(Tape&)> configure;
  if (!spec.fault_param.empty()) {
    if (!model.params().contains(spec.fault_param))
      throw std::invalid_argument("gradcheck: unknown parameter " + spec.fault_param);
    configure = [&](Tape& tape) { tape.inject_gradient_fault(spec.fault_param, 2.0); };
  }
  return ad::fd_check(model.params(), build, spec.h, spec.tolerance, configure);
}

}  // namespace dlisa::train
