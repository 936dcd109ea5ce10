// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>

#include "dlisa/trainer.hpp"
#include "dlisa_oracles.hpp"

using namespace dlisa;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

const oracle::SuiteRow* find_row(const std::vector<oracle::SuiteRow>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

std::string suite_summary(const std::vector<oracle::SuiteRow>& rows, std::initializer_list<const char*> names,
                          bool& ok) {
  std::ostringstream os;
  ok = true;
  for (const char* n : names) {
    const auto* r = find_row(rows, n);
    const bool good = r && r->passed();
    ok = ok && good;
    os << n << " " << (r ? r->cases - r->failures : 0) << "/" << (r ? r->cases : 0) << "  ";
    if (r && !good) os << "(" << r->first_failure << ")  ";
  }
  return os.str();
}

// Gradient check of the full loss on five small random instances.
Outcome criterion1() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t i = 0; i < 5; ++i) {
    auto spec = train::small_gradcheck_spec(mix_seed(101, i));
    spec.cfg.model.d = 16;
    spec.cfg.model.heads = i % 2 + 1;
    const auto r = train::gradcheck_all(spec);
    ok = ok && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  const double t = seconds_since(t0);
  std::ostringstream os;
  os << "5 instances, max rel error " << worst << ", " << t << " s";
  return {ok && worst < 1e-4 && t < 60.0, os.str()};
}

// ---- training helpers --------------------------------------------------------------

RunConfig desk_config(std::uint64_t seed) {
  RunConfig cfg;
  auto& m = cfg.model;
  m.d = 16;
  m.d3 = 16;
  m.d2 = 16;
  m.views = 4;
  m.render_res = 16;
  m.pose_hidden = 16;
  cfg.optim.lr = 5e-4;
  cfg.optim.batch_size = 4;
  cfg.seed = seed;
  return cfg;
}

synth::DataConfig desk_data(std::uint64_t seed, std::size_t scenes) {
  synth::DataConfig dc;
  dc.seed = seed;
  dc.num_scenes = scenes;
  dc.queries_per_scene = 4;
  dc.scene.d3 = 16;
  return dc;
}

// Proposal-count statistics after a fixed budget at two settings of lambda_dyn.
Outcome criterion4() {
  const auto t0 = Clock::now();
  const auto scenes = synth::gen_dataset(desk_data(41, 16));
  const auto samples = train::make_samples(scenes, Mode::Multi);
  auto run = [&](double lambda_dyn) {
    RunConfig cfg = desk_config(41);
    cfg.loss.lambda_dyn = lambda_dyn;
    train::TrainState st(cfg);
    train::TrainOptions opt;
    opt.epochs = 100;
    opt.eval_every = 0;
    train::train(st, samples, {}, opt);
    return train::evaluate(st.model, samples, cfg.tau_pred);
  };
  const auto with = run(5.0);
  const auto without = run(0.0);
  const double margin_with = with.mean_candidates - with.mean_proposals;
  const double margin_without = without.mean_candidates - without.mean_proposals;
  const double t = seconds_since(t0);
  std::ostringstream os;
  os.precision(3);
  os << "M " << with.mean_candidates << "; proposals lambda_dyn=5: " << with.mean_proposals
     << ", lambda_dyn=0: " << without.mean_proposals << "; F1 " << with.f1.overall << " vs " << without.f1.overall
     << "; " << t << " s";
  return {with.mean_proposals < with.mean_candidates && margin_without < margin_with && t < 600.0, os.str()};
}

// Fit a fixed 64-sample multi-target split, then sweep tau_pred.
Outcome criterion5() {
  const auto t0 = Clock::now();
  const auto scenes = synth::gen_dataset(desk_data(3, 20));
  auto samples = train::make_samples(scenes, Mode::Multi);
  if (samples.size() < 64) return {false, "split has only " + std::to_string(samples.size()) + " samples"};
  samples.resize(64);
  RunConfig cfg = desk_config(1);
  cfg.loss.lambda_dyn = 0.0;
  train::TrainState st(cfg);
  std::size_t reached = 0;
  double best = 0.0;
  while (st.epoch < 500 && !reached) {
    train::TrainOptions opt;
    opt.epochs = 10;
    opt.eval_every = 10;
    const auto h = train::train(st, samples, samples, opt);
    best = std::max(best, *h.back().val_score);
    if (*h.back().val_score >= 0.9) reached = st.epoch;
  }
  const auto sweep = train::sweep_tau_pred(st.model, samples, cfg.tau_pred_grid);
  const double t = seconds_since(t0);
  std::ostringstream os;
  os.precision(3);
  os << "64 samples, lambda_dyn=0; ";
  if (reached)
    os << "F1 >= 0.9 at epoch " << reached;
  else
    os << "best F1 " << best << " in 500 epochs";
  os << "; sweep";
  for (const auto& [tau, score] : sweep.table) os << " " << tau << ":" << score;
  os << " -> argmax " << sweep.best_tau << "; " << t << " s";
  return {reached != 0 && !sweep.table.empty() && t < 600.0, os.str()};
}

// LISA against B forced to 0 on distractor-heavy queries over five seeds.
// Objects sit 25 cm apart so no neighbour points fall inside a proposal's
// render box; spatial context then has to come through attention.
Outcome criterion6() {
  const auto t0 = Clock::now();
  using metrics::Category;
  auto data = [](std::uint64_t seed, std::size_t scenes) {
    auto dc = desk_data(seed, scenes);
    dc.kinds = {Category::SingleDistractor, Category::SingleDistractor, Category::Multi, Category::ZeroDistractor};
    dc.near_fraction = 1.0;
    dc.scene.room_x = dc.scene.room_y = 5.0;
    dc.scene.placement_gap = 0.25;
    dc.scene.max_objects = 7;
    return dc;
  };
  const auto train_scenes = synth::gen_dataset(data(600, 600));
  const auto val_scenes = synth::gen_dataset(data(900, 150));
  const auto train_set = train::make_samples(train_scenes, Mode::Multi);
  const auto val_set = train::make_samples(val_scenes, Mode::Multi);

  std::size_t st_wins = 0;
  double overall_full = 0.0, overall_plain = 0.0;
  std::ostringstream per_seed;
  per_seed.precision(3);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto run = [&](bool lisa) {
      RunConfig cfg = desk_config(seed);
      cfg.loss.lambda_dyn = 0.0;
      cfg.model.lisa = lisa;
      cfg.optim.lr = 1e-3;
      train::TrainState st(cfg);
      train::TrainOptions opt;
      opt.epochs = 30;
      opt.eval_every = 0;
      train::train(st, train_set, {}, opt);
      return train::evaluate(st.model, val_set, cfg.tau_pred).f1;
    };
    const auto full = run(true);
    const auto plain = run(false);
    const double st_full = full[Category::SingleDistractor].f1, st_plain = plain[Category::SingleDistractor].f1;
    st_wins += st_full >= st_plain;
    overall_full += full.overall / 5.0;
    overall_plain += plain.overall / 5.0;
    per_seed << " " << st_full << "/" << st_plain;
  }
  const double t = seconds_since(t0);
  std::ostringstream os;
  os.precision(3);
  os << "overall F1 " << overall_full << " (LISA) vs " << overall_plain << " (B=0); ST w/D per seed" << per_seed.str()
     << "; " << st_wins << "/5 seeds; " << t << " s";
  return {overall_full >= overall_plain && st_wins >= 3, os.str()};
}

// Two identical train + eval runs give identical reports.
Outcome criterion8() {
  const auto scenes = synth::gen_dataset(desk_data(77, 6));
  const auto samples = train::make_samples(scenes, Mode::Multi);
  auto run = [&] {
    RunConfig cfg = desk_config(5);
    train::TrainState st(cfg);
    train::TrainOptions opt;
    opt.epochs = 5;
    train::train(st, samples, samples, opt);
    auto j = train::evaluate(st.model, samples, cfg.tau_pred).to_json();
    j["sweep"] = train::sweep_tau_pred(st.model, samples, cfg.tau_pred_grid).best_tau;
    j["checkpoint"] = train::checkpoint_json(st);
    return j.dump();
  };
  const std::string a = run(), b = run();
  return {a == b, a == b ? "reports and checkpoints identical (" + std::to_string(a.size()) + " bytes)"
                         : "reports differ"};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  report(1, "gradient fidelity", criterion1());

  const auto rows = oracle::run_oracle_suites(2024);
  bool ok = false;
  std::string detail = suite_summary(rows, {"nms", "hungarian", "sample-f1"}, ok);
  report(2, "oracle equivalence", {ok, detail});
  detail = suite_summary(rows, {"lisa-b0", "lisa-b1"}, ok);
  report(3, "LISA reductions", {ok, detail});

  report(4, "dynamic proposals", criterion4());
  report(5, "desk-scale learnability", criterion5());
  report(6, "ablation direction", criterion6());

  detail = suite_summary(rows, {"metric-fixture"}, ok);
  report(7, "metric protocol", {ok, detail});

  report(8, "determinism", criterion8());
  return failures;
}
