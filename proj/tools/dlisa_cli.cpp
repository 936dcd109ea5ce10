// dlisa: data generation, training, evaluation and verification entry points.
//
// Exit codes: 0 success, 1 invalid input (flags, files, configs), 2 a check
// or assertion failed (gradcheck, oracle suites, non-finite loss).

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dlisa/report.hpp"
#include "dlisa/synthdata.hpp"
#include "dlisa/trainer.hpp"
#include "dlisa_oracles.hpp"

namespace fs = std::filesystem;
using namespace dlisa;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kCheckFailed = 2;

std::string default_data_dir() {
  const char* env = std::getenv("DLISA_DATA_DIR");
  return env && *env ? env : "data";
}

json read_json(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open " + file.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << j.dump(2) << "\n";
}

void check_tau(double tau, const char* flag) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument(std::string(flag) + " must lie in (0, 1)");
}

std::vector<Scene> load_data(const std::string& dir) {
  if (!fs::exists(fs::path(dir) / "scenes.jsonl"))
    throw std::runtime_error("no dataset at '" + dir + "' (expected scenes.jsonl; see gen-data)");
  return synth::read_dataset(dir);
}

train::TrainState load_state(const std::string& ckpt, const std::string& mode_override) {
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint '" + ckpt + "' not found");
  json j = read_json(ckpt);
  if (!mode_override.empty()) {
    mode_from_string(mode_override);  // validates
    j["config"]["mode"] = mode_override;
  }
  return train::state_from_json(j);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      check_tau(v, "--grid values");
      grid.push_back(v);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("--grid: cannot parse '" + cell + "'");
    }
  }
  if (grid.empty()) throw std::invalid_argument("--grid is empty");
  return grid;
}

// ---- commands -------------------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::uint64_t seed = 1;
  std::size_t scenes = 16;
  std::size_t queries = 5;
  std::size_t d3 = 32;
  std::string out = default_data_dir();
};

int cmd_gen_data(const GenDataArgs& a, const CLI::App& sub) {
  synth::DataConfig cfg;
  if (!a.config.empty()) cfg = read_json(a.config).get<synth::DataConfig>();
  if (a.config.empty() || sub.count("--seed")) cfg.seed = a.seed;
  if (a.config.empty() || sub.count("--scenes")) cfg.num_scenes = a.scenes;
  if (a.config.empty() || sub.count("--queries")) cfg.queries_per_scene = a.queries;
  if (a.config.empty() || sub.count("--d3")) cfg.scene.d3 = a.d3;
  const auto scenes = synth::gen_dataset(cfg);
  synth::write_dataset(a.out, scenes);
  std::size_t queries = 0;
  for (const auto& s : scenes) queries += s.queries.size();
  std::cout << "wrote " << scenes.size() << " scenes, " << queries << " queries to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string data = default_data_dir();
  std::string val_data;
  std::string out = "run";
  std::string resume;
  std::size_t epochs = 0;
  std::size_t eval_every = 1;
};

int cmd_train(const TrainArgs& a) {
  std::optional<train::TrainState> state;
  if (!a.resume.empty()) {
    state.emplace(load_state(a.resume, ""));
  } else {
    RunConfig cfg;
    if (!a.config.empty()) cfg = load_run_config(a.config);
    cfg.validate();
    state.emplace(cfg);
  }
  const auto& cfg = state->model.config();
  const auto scenes = load_data(a.data);
  std::vector<Scene> val_scenes;
  if (!a.val_data.empty()) val_scenes = load_data(a.val_data);
  const auto train_set = train::make_samples(scenes, cfg.mode);
  const auto val_set = train::make_samples(val_scenes, cfg.mode);
  if (train_set.empty()) throw std::invalid_argument("no usable training samples for mode " + to_string(cfg.mode));
  if (!scenes.empty() && scenes.front().candidates.feats3d.cols != cfg.model.d3)
    throw std::invalid_argument("dataset feature width " + std::to_string(scenes.front().candidates.feats3d.cols) +
                                " does not match model.d3 = " + std::to_string(cfg.model.d3));

  fs::create_directories(a.out);
  train::TrainOptions opt;
  opt.epochs = a.epochs;
  opt.eval_every = a.eval_every;
  opt.on_epoch = [](const train::EpochRecord& r) {
    std::cout << "epoch " << std::setw(4) << r.epoch << "  loss " << std::fixed << std::setprecision(5) << r.loss
              << "  ref " << r.ref << "  ctr " << r.ctr << "  dyn " << r.dyn << "  proposals " << std::setprecision(2)
              << r.mean_proposals << "/" << r.mean_candidates;
    if (r.val_score) std::cout << "  val " << std::setprecision(4) << *r.val_score;
    std::cout << std::defaultfloat << "\n";
  };
  train::train(*state, train_set, val_set, opt);

  const fs::path out(a.out);
  train::save_checkpoint(out / "checkpoint.json", *state);
  train::write_history_csv(out / "history.csv", state->history);
  const auto& eval_set = val_set.empty() ? train_set : val_set;
  const auto rep = train::evaluate(state->model, eval_set, cfg.tau_pred);
  write_json(out / "eval.json", rep.to_json());
  std::cout << rep.to_table();
  std::cout << "saved " << (out / "checkpoint.json").string() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data = default_data_dir();
  double tau_pred = 0.0;
  std::string mode;
  std::string json_out;
};

int cmd_eval(const EvalArgs& a, const CLI::App& sub) {
  if (sub.count("--tau-pred")) check_tau(a.tau_pred, "--tau-pred");
  auto state = load_state(a.ckpt, a.mode);
  const double tau = sub.count("--tau-pred") ? a.tau_pred : state.model.config().tau_pred;
  const auto scenes = load_data(a.data);
  const auto samples = train::make_samples(scenes, state.model.config().mode);
  const auto rep = train::evaluate(state.model, samples, tau);
  std::cout << rep.to_table();
  if (!a.json_out.empty()) write_json(a.json_out, rep.to_json());
  return kOk;
}

struct SweepArgs {
  std::string ckpt;
  std::string data = default_data_dir();
  std::string grid;
  std::string json_out;
};

int cmd_sweep(const SweepArgs& a) {
  const auto grid_override = a.grid.empty() ? std::vector<double>{} : parse_grid(a.grid);
  auto state = load_state(a.ckpt, "");
  const auto& cfg = state.model.config();
  const auto grid = grid_override.empty() ? cfg.tau_pred_grid : grid_override;
  const auto scenes = load_data(a.data);
  const auto samples = train::make_samples(scenes, cfg.mode);
  const auto res = train::sweep_tau_pred(state.model, samples, grid);
  std::cout << "tau_pred  " << (cfg.mode == Mode::Multi ? "overall F1" : "accuracy") << "\n";
  for (const auto& [tau, score] : res.table)
    std::cout << std::fixed << std::setprecision(2) << std::setw(8) << tau << "  " << std::setprecision(4) << score
              << (tau == res.best_tau ? "  <- best" : "") << "\n";
  std::cout << std::defaultfloat << "best tau_pred " << res.best_tau << "\n";
  if (!a.json_out.empty()) {
    json j;
    j["best_tau_pred"] = res.best_tau;
    for (const auto& [tau, score] : res.table) j["table"].push_back({{"tau_pred", tau}, {"score", score}});
    write_json(a.json_out, j);
  }
  return kOk;
}

struct GradcheckArgs {
  std::size_t instances = 5;
  std::uint64_t seed = 1;
  std::size_t heads = 1;
  bool edge = true;
  std::string fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<train::GradcheckSpec> specs;
  for (std::size_t i = 0; i < a.instances; ++i) {
    auto s = train::small_gradcheck_spec(mix_seed(a.seed, i));
    s.cfg.model.heads = a.heads;
    s.fault_param = a.fault;
    specs.push_back(s);
  }
  if (a.edge) {
    auto s = train::small_gradcheck_spec(mix_seed(a.seed, 999));
    s.scene.min_objects = s.scene.max_objects = 1;
    s.scene.detector.false_positives = 0;
    s.cfg.model.heads = a.heads;
    s.fault_param = a.fault;
    specs.push_back(s);
  }
  bool all = true;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto r = train::gradcheck_all(specs[i]);
    all = all && r.passed;
    const bool edge = a.edge && i + 1 == specs.size();
    std::cout << "instance " << i << (edge ? " (N=1)" : "") << ": " << r.params.size() << " parameters, max rel error "
              << std::scientific << std::setprecision(2) << r.max_rel_error << std::defaultfloat << "  "
              << (r.passed ? "PASS" : "FAIL") << "\n";
    if (!r.passed)
      for (const auto& p : r.params)
        if (p.max_rel_error >= r.tolerance)
          std::cout << "  " << p.name << "[" << p.worst_index << "]: analytic " << p.analytic << ", numeric "
                    << p.numeric << ", rel error " << p.max_rel_error << "\n";
  }
  std::cout << (all ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all ? kOk : kCheckFailed;
}

int cmd_oracle_suite(std::uint64_t seed, const std::string& corrupt) {
  const auto rows = oracle::run_oracle_suites(seed, corrupt);
  std::cout << oracle::format_suite_table(rows);
  bool all = true;
  for (const auto& r : rows) all = all && r.passed();
  std::cout << (all ? "all suites passed" : "oracle suites FAILED") << "\n";
  return all ? kOk : kCheckFailed;
}

int cmd_report(const std::string& history, const std::string& out) {
  if (!fs::exists(history)) throw std::runtime_error("history file '" + history + "' not found");
  const auto records = train::read_history_csv(history);
  for (const auto& f : report::write_report(out, records)) std::cout << "wrote " << f.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D-LISA selection stage: synthetic data, training, evaluation and checks"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 invalid input, 2 failed check.\n"
             "DLISA_DATA_DIR sets the default dataset directory (currently '" + default_data_dir() + "').");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a seeded synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "DataConfig JSON; explicit flags override it");
  gen_cmd->add_option("--seed", gen.seed, "Base seed")->capture_default_str();
  gen_cmd->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
  gen_cmd->add_option("--queries", gen.queries, "Queries requested per scene")->capture_default_str();
  gen_cmd->add_option("--d3", gen.d3, "Detector feature width")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoint, history and eval report");
  train_cmd->add_option("--config", tr.config, "RunConfig JSON (defaults when omitted)");
  train_cmd->add_option("--data", tr.data, "Training dataset directory")->capture_default_str();
  train_cmd->add_option("--val-data", tr.val_data, "Validation dataset directory (evaluated every --eval-every epochs)");
  train_cmd->add_option("--out", tr.out, "Run output directory")->capture_default_str();
  train_cmd->add_option("--epochs", tr.epochs, "Epochs to run; 0 uses the config value")->capture_default_str();
  train_cmd->add_option("--eval-every", tr.eval_every, "Validation interval in epochs; 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--resume", tr.resume, "Continue from this checkpoint (its config wins)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint JSON")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->capture_default_str();
  eval_cmd->add_option("--tau-pred", ev.tau_pred, "Prediction threshold in (0, 1); default from the checkpoint");
  eval_cmd->add_option("--mode", ev.mode, "Override mode: multi, single or given-proposals");
  eval_cmd->add_option("--json", ev.json_out, "Also write the report as JSON");

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep tau_pred on a dataset and report the best value");
  sweep_cmd->add_option("--ckpt", sw.ckpt, "Checkpoint JSON")->required();
  sweep_cmd->add_option("--data", sw.data, "Dataset directory")->capture_default_str();
  sweep_cmd->add_option("--grid", sw.grid, "Comma separated thresholds; default from the checkpoint config");
  sweep_cmd->add_option("--json", sw.json_out, "Also write the table as JSON");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full loss on small instances");
  gc_cmd->add_option("--instances", gc.instances, "Random instances")->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  gc_cmd->add_option("--heads", gc.heads, "Attention heads (must divide d = 8)")->capture_default_str();
  gc_cmd->add_flag("--edge,!--no-edge", gc.edge, "Also check a single-proposal instance")->capture_default_str();
  gc_cmd->add_option("--fault", gc.fault, "Corrupt the gradient of this parameter (negative control)");

  std::uint64_t oracle_seed = 2024;
  std::string corrupt;
  auto* oracle_cmd = app.add_subcommand("oracle-suite", "Compare NMS, Hungarian, F1 and attention against brute force");
  oracle_cmd->add_option("--seed", oracle_seed, "Seed")->capture_default_str();
  oracle_cmd->add_option("--corrupt", corrupt, "Perturb one suite's results (negative control)")
      ->check(CLI::IsMember(oracle::suite_names()));

  std::string history, report_out = "report";
  auto* report_cmd = app.add_subcommand("report", "Write loss and F1 curves (SVG) and a CSV from a history file");
  report_cmd->add_option("--history", history, "history.csv written by train")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, *gen_cmd);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev, *eval_cmd);
    if (*sweep_cmd) return cmd_sweep(sw);
    if (*gc_cmd) return cmd_gradcheck(gc);
    if (*oracle_cmd) return cmd_oracle_suite(oracle_seed, corrupt);
    if (*report_cmd) return cmd_report(history, report_out);
  } catch (const train::TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kInvalid;
}
