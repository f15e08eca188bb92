// gradia: command-line driver for the attention-alignment workflow.
//
//   gen-data -> train -> matrix -> finetune -> evaluate -> report
//   fewshot, serve
//
// Workspace layout under --out (or $GRADIA_DATA_DIR):
//   data/manifest.jsonl, data/images/*.png
//   runs/baseline, runs/matrix, runs/finetune-<C>, runs/fewshot
//   service/  (annotation log and job runs of `serve`)

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "gradia/config.hpp"
#include "gradia/error.hpp"
#include "gradia/io.hpp"
#include "gradia/report.hpp"
#include "gradia/runtime.hpp"
#include "gradia/service/service.hpp"
#include "gradia/service/store.hpp"
#include "gradia/trainer.hpp"

namespace fs = std::filesystem;
using namespace gradia;

namespace {

enum Exit { kOk = 0, kUserError = 2, kMissing = 3, kRuntime = 4 };

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  std::string condition;
  std::optional<double> alpha, beta, gamma;
  std::string higher_order;
  std::string annotations;
  std::string run;
  std::string matrices;
  std::string host = "127.0.0.1";
  std::optional<int> port;
  bool quiet = false;
};

fs::path workspace(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("GRADIA_DATA_DIR"); env && *env) return env;
  return "gradia-work";
}

fs::path runs_dir(const Options& o) { return workspace(o) / "runs"; }

WorkbenchConfig load(const Options& o) {
  WorkbenchConfig c = o.config_path.empty() ? WorkbenchConfig{} : load_config(o.config_path);
  if (o.seed) {
    c.scene.seed = *o.seed;
    c.baseline.seed = *o.seed;
    c.finetune.seed = *o.seed;
    c.fewshot.settings.seed = *o.seed;
  }
  if (!o.condition.empty()) {
    auto cond = parse_condition(o.condition);
    if (!cond) throw ConfigError("unknown condition '" + o.condition + "'");
    c.finetune.condition = *cond;
  }
  if (o.alpha) c.finetune.factors.alpha = *o.alpha;
  if (o.beta) c.finetune.factors.beta = *o.beta;
  if (o.gamma) c.finetune.factors.gamma = *o.gamma;
  if (!o.higher_order.empty()) {
    c.finetune.higher_order = o.higher_order == "on";
    c.fewshot.settings.tuning.higher_order = c.finetune.higher_order;
  }
  c.fewshot.settings.jobs = o.jobs;
  c.validate();
  return c;
}

fs::path data_dir(const Options& o, const WorkbenchConfig& c) {
  return c.dataset_dir.empty() ? workspace(o) / "data" : c.dataset_dir;
}

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) {
    throw MissingArtifact("missing " + path.string() + " (run `gradia " + hint + "` first)");
  }
}

std::vector<SyntheticInstance> load_data(const Options& o, const WorkbenchConfig& c) {
  const fs::path dir = data_dir(o, c);
  require(dir / kManifestName, "gen-data");
  return read_dataset(dir);
}

Parameters load_params(const fs::path& run, const WorkbenchConfig& c, const std::string& hint) {
  require(run / kRunParams, hint);
  return load_parameters(run / kRunParams, c.model);
}

ProgressFn progress_printer(const Options& o, std::string label) {
  if (o.quiet) return {};
  return [label, next = 0.1](double f) mutable {
    if (f + 1e-12 < next && f < 1.0) return;
    std::fprintf(stderr, "%s %3.0f%%\n", label.c_str(), 100.0 * f);
    while (next <= f + 1e-12) next += 0.1;
  };
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Oracle by default; with --annotations, the verdicts and masks stored by
// `serve` in that directory.
Annotator make_annotator(const Options& o, const WorkbenchConfig& c,
                         const std::vector<const SyntheticInstance*>& instances) {
  if (o.annotations.empty()) return Annotator::oracle_annotator(c.oracle);
  require(fs::path(o.annotations) / "annotations.ndjson", "serve");
  const service::AnnotationLog log(o.annotations);
  return service::stored_annotator(log.recover(), instances, c.oracle);
}

void print_rows(const std::vector<ConditionRow>& rows) {
  std::cout << format_condition_table(rows);
}

int cmd_gen_data(const Options& o) {
  const WorkbenchConfig c = load(o);
  const auto data = generate_dataset(c.scene, c.counts);
  const fs::path dir = workspace(o) / "data";
  write_dataset(data, dir);
  std::size_t n[3] = {};
  for (const auto& inst : data) ++n[static_cast<int>(inst.split)];
  std::cout << (dir / kManifestName).string() << ": train " << n[0] << ", validation "
            << n[1] << ", test " << n[2] << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const WorkbenchConfig c = load(o);
  const auto data = load_data(o, c);
  const auto start = std::chrono::steady_clock::now();
  TrainResult result = train_baseline(c.model, select_split(data, Split::kTrain), c.baseline,
                                      progress_printer(o, "train"));
  RunReport report;
  report.condition = "baseline";
  report.curve = std::move(result.curve);
  report.config_snapshot = format_config(c);
  report.wall_time_seconds = seconds_since(start);
  const fs::path dir = runs_dir(o) / "baseline";
  write_run(dir, report, &result.params);
  std::cout << "baseline trained in " << report.wall_time_seconds << " s -> " << dir.string()
            << "\n";
  return kOk;
}

int cmd_matrix(const Options& o) {
  const WorkbenchConfig c = load(o);
  const auto data = load_data(o, c);
  const Parameters params = load_params(runs_dir(o) / "baseline", c, "train");
  const auto validation = select_split(data, Split::kValidation);
  const ValidationResult v =
      build_validation_matrix(params, validation, make_annotator(o, c, validation));
  std::vector<double> ious;
  for (const auto& a : v.assessments) ious.push_back(a.iou);
  const MetricsReport metrics = make_report(v.matrix, ious);
  const fs::path dir = runs_dir(o) / "matrix";
  fs::create_directories(dir);
  write_text(dir / kRunMatrix, matrix_to_json(v.matrix) + "\n");
  write_text(dir / kRunMetrics, format_report(metrics));
  write_text(dir / kRunConfig, format_config(c));
  print_rows({{"validation", v.matrix, metrics}});
  std::cout << "pool: UA " << v.pool[Quadrant::kUA].size() << ", RIA "
            << v.pool[Quadrant::kRIA].size() << ", UIA " << v.pool[Quadrant::kUIA].size()
            << "\n";
  return kOk;
}

std::string finetune_name(const WorkbenchConfig& c) {
  return std::string("finetune-") + to_string(c.finetune.condition);
}

int cmd_finetune(const Options& o) {
  const WorkbenchConfig c = load(o);
  const auto data = load_data(o, c);
  const Parameters base = load_params(runs_dir(o) / "baseline", c, "train");
  require(runs_dir(o) / "matrix" / kRunMatrix, "matrix");
  const auto validation = select_split(data, Split::kValidation);
  const ValidationResult v =
      build_validation_matrix(base, validation, make_annotator(o, c, validation));
  const auto stored = matrix_from_json(read_text(runs_dir(o) / "matrix" / kRunMatrix));
  if (!(stored == v.matrix)) {
    std::cerr << "warning: matrix differs from runs/matrix; rerun `gradia matrix`\n";
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult result = finetune_gradia(base, select_split(data, Split::kTrain), v.pool,
                                       c.finetune, progress_printer(o, "finetune"));
  RunReport report;
  report.condition = to_string(c.finetune.condition);
  report.curve = std::move(result.curve);
  report.config_snapshot = format_config(c);
  report.wall_time_seconds = seconds_since(start);
  const fs::path dir = runs_dir(o) / finetune_name(c);
  write_run(dir, report, &result.params);
  std::cout << report.condition << " fine-tuned in " << report.wall_time_seconds << " s -> "
            << dir.string() << "\n";
  return kOk;
}

// Without --condition (or --run) the baseline is evaluated; otherwise the
// fine-tuned run is, with the baseline as its "before".
int cmd_evaluate(const Options& o) {
  const WorkbenchConfig c = load(o);
  std::string name = o.run;
  if (name.empty()) name = o.condition.empty() ? "baseline" : finetune_name(c);
  const fs::path dir = runs_dir(o) / name;
  const Parameters params = load_params(dir, c, name == "baseline" ? "train" : "finetune");
  const auto data = load_data(o, c);
  const auto test = select_split(data, Split::kTest);
  const Annotator oracle = Annotator::oracle_annotator(c.oracle);

  RunReport report;
  if (fs::exists(dir / kRunReport)) report = run_report_from_json(read_text(dir / kRunReport));
  if (fs::exists(dir / kRunConfig)) report.config_snapshot = read_text(dir / kRunConfig);
  if (report.condition.empty()) report.condition = name;
  if (name != "baseline") {
    report.before = evaluate(load_params(runs_dir(o) / "baseline", c, "train"), test, oracle);
  }
  report.after = evaluate(params, test, oracle);
  write_run(dir, report, nullptr);

  std::vector<ConditionRow> rows;
  if (report.before) rows.push_back({"before", report.before->matrix, report.before->metrics});
  rows.push_back({report.condition, report.after->matrix, report.after->metrics});
  print_rows(rows);
  if (report.after->metrics.auc) std::cout << "auc " << *report.after->metrics.auc << "\n";
  return kOk;
}

int cmd_fewshot(const Options& o) {
  const WorkbenchConfig c = load(o);
  const auto data = load_data(o, c);
  const fs::path dir = runs_dir(o) / "fewshot";
  fs::create_directories(dir);

  const fs::path pretrained = dir / "pretrained.bin";
  Parameters base;
  if (fs::exists(pretrained)) {
    base = load_parameters(pretrained, c.model);
  } else {
    const auto pre = generate_dataset(pretraining_scene(c.scene), c.counts);
    TrainConfig pc = c.baseline;
    pc.epochs = c.fewshot.pretrain_epochs;
    base = train_baseline(c.model, select_split(pre, Split::kTrain), pc,
                          progress_printer(o, "pretrain"))
               .params;
    save_parameters(base, pretrained);
  }

  const auto pool = select_split(data, Split::kTrain);
  const auto test = select_split(data, Split::kTest);
  const FewShotSettings& st = c.fewshot.settings;
  std::vector<FewShotResult> studies;
  std::printf("%6s %16s %16s %8s %6s\n", "shots", "baseline", "gradia", "gain", "wins");
  for (std::size_t shots : c.fewshot.shots) {
    const FewShotScenario sc{shots, c.fewshot.num_seeds};
    FewShotResult r = few_shot_study(base, pool, test, sc, st);
    std::size_t wins = 0;
    for (std::size_t s = 0; s < sc.num_seeds; ++s) {
      wins += r.gradia.per_seed[s] > r.baseline.per_seed[s];
    }
    std::printf("%6zu %8.4f+-%.4f %8.4f+-%.4f %+8.4f %3zu/%zu\n", shots, r.baseline.mean_auc,
                r.baseline.std_auc, r.gradia.mean_auc, r.gradia.std_auc,
                r.gradia.mean_auc - r.baseline.mean_auc, wins, sc.num_seeds);
    std::fflush(stdout);
    studies.push_back(std::move(r));
  }
  const FewShotScenario sweep_sc{c.fewshot.sweep_shots, c.fewshot.num_seeds};
  const auto sweep = sensitivity_sweep(base, pool, test, c.fewshot.sweep_weights, sweep_sc, st);
  std::printf("\n%8s %8s %8s   (%zu-shot)\n", "weight", "mean", "std", c.fewshot.sweep_shots);
  for (const auto& arm : sweep) {
    std::printf("%8.2f %8.4f %8.4f\n", arm.attention_weight, arm.mean_auc, arm.std_auc);
  }
  write_text(dir / "fewshot.json", few_shot_json(studies, sweep, c.fewshot.sweep_shots) + "\n");
  write_text(dir / kRunConfig, format_config(c));
  return kOk;
}

service::AnnotationService* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

int cmd_serve(const Options& o) {
  const WorkbenchConfig c = load(o);
  auto data = load_data(o, c);
  const std::string run = o.run.empty() ? "baseline" : o.run;
  Parameters params = load_params(runs_dir(o) / run, c, "train");
  int port = 8080;
  if (o.port) {
    port = *o.port;
  } else if (const char* env = std::getenv("GRADIA_PORT"); env && *env) {
    try {
      port = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("GRADIA_PORT is not a port: ") + env);
    }
  }
  if (port < 0 || port > 65535) throw ConfigError("port out of range");

  service::ServiceOptions so;
  so.state_dir = workspace(o) / "service";
  so.config = c;
  service::AnnotationService svc(std::move(data), std::move(params), so);
  g_service = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on http://" << o.host << ":" << port << " (model " << run << ")"
            << std::endl;
  const bool ok = svc.listen(o.host, port);
  g_service = nullptr;
  if (!ok) throw Error("cannot listen on " + o.host + ":" + std::to_string(port));
  return kOk;
}

// Published matrices: [{"label": "C1", "RA": n, "UA": n, "RIA": n, "UIA": n}, ...]
std::vector<ConditionRow> fixture_rows(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("missing matrices file " + path.string());
  std::vector<ConditionRow> rows;
  try {
    for (const auto& j : nlohmann::json::parse(read_text(path))) {
      ConditionRow row;
      row.label = j.at("label").get<std::string>();
      row.matrix = matrix_from_counts(j.at("RA").get<std::size_t>(), j.at("UA").get<std::size_t>(),
                                      j.at("RIA").get<std::size_t>(),
                                      j.at("UIA").get<std::size_t>());
      row.metrics = make_report(row.matrix, {});
      row.has_iou = false;
      rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad matrices file: ") + e.what());
  }
  return rows;
}

int cmd_report(const Options& o) {
  if (!o.matrices.empty()) {
    print_rows(fixture_rows(o.matrices));
    return kOk;
  }
  std::vector<std::string> names = {"baseline"};
  for (const char* c : {"C1", "C2", "C3", "C4"}) names.push_back(std::string("finetune-") + c);
  std::vector<ConditionRow> rows;
  for (const auto& name : names) {
    const fs::path file = runs_dir(o) / name / kRunReport;
    if (!fs::exists(file)) continue;
    const RunReport r = run_report_from_json(read_text(file));
    if (!r.after) continue;
    rows.push_back({r.condition, r.after->matrix, r.after->metrics});
  }
  if (rows.empty()) {
    throw MissingArtifact("no evaluated runs under " + runs_dir(o).string() +
                          " (run `gradia evaluate` first)");
  }
  print_rows(rows);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"gradia: human-steerable attention alignment workbench"};
  app.require_subcommand(1);
  Options o;

  auto common = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "workbench config (INI)");
    cmd->add_option("--seed", o.seed, "seed for data, training and sampling");
    cmd->add_option("--out", o.out, "workspace directory (default $GRADIA_DATA_DIR)");
    cmd->add_flag("--quiet", o.quiet, "no progress output");
  };
  auto tuning = [&o](CLI::App* cmd) {
    cmd->add_option("--condition", o.condition, "C1, C2, C3 or C4")
        ->check(CLI::IsMember({"C1", "C2", "C3", "C4"}));
    cmd->add_option("--alpha", o.alpha, "UA balance factor");
    cmd->add_option("--beta", o.beta, "UIA balance factor");
    cmd->add_option("--gamma", o.gamma, "RIA balance factor");
    cmd->add_option("--higher-order", o.higher_order, "differentiate through Grad-CAM")
        ->check(CLI::IsMember({"on", "off"}));
  };

  struct Command {
    CLI::App* app;
    int (*run)(const Options&);
  };
  std::vector<Command> commands;
  auto add = [&](const char* name, const char* help, int (*run)(const Options&)) {
    CLI::App* cmd = app.add_subcommand(name, help);
    common(cmd);
    commands.push_back({cmd, run});
    return cmd;
  };

  add("gen-data", "render the synthetic dataset", cmd_gen_data);
  add("train", "train the baseline model", cmd_train);
  add("matrix", "build the validation Reasonability Matrix", cmd_matrix)
      ->add_option("--annotations", o.annotations, "annotation directory written by serve");
  {
    auto* cmd = add("finetune", "fine-tune the baseline with attention supervision",
                    cmd_finetune);
    tuning(cmd);
    cmd->add_option("--annotations", o.annotations, "annotation directory written by serve");
  }
  {
    auto* cmd = add("evaluate", "score a run on the test split", cmd_evaluate);
    cmd->add_option("--condition", o.condition, "evaluate finetune-<condition>")
        ->check(CLI::IsMember({"C1", "C2", "C3", "C4"}));
    cmd->add_option("--run", o.run, "run directory name under runs/");
  }
  {
    auto* cmd = add("fewshot", "few-shot study and attention-weight sweep", cmd_fewshot);
    cmd->add_option("--jobs", o.jobs, "worker threads for seeds")->check(CLI::PositiveNumber);
    cmd->add_option("--higher-order", o.higher_order, "differentiate through Grad-CAM")
        ->check(CLI::IsMember({"on", "off"}));
  }
  {
    auto* cmd = add("serve", "annotation HTTP service", cmd_serve);
    cmd->add_option("--port", o.port, "port (default $GRADIA_PORT or 8080)");
    cmd->add_option("--host", o.host, "bind address");
    cmd->add_option("--run", o.run, "run whose parameters to serve (default baseline)");
  }
  add("report", "condition table over evaluated runs", cmd_report)
      ->add_option("--matrices", o.matrices, "JSON list of quadrant counts to tabulate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  try {
    for (const auto& c : commands) {
      if (c.app->parsed()) return c.run(o);
    }
    return kUserError;
  } catch (const MissingArtifact& e) {
    std::cerr << "gradia: " << e.what() << "\n";
    return kMissing;
  } catch (const ConfigError& e) {
    std::cerr << "gradia: config error: " << e.what() << "\n";
    return kUserError;
  } catch (const InputError& e) {
    std::cerr << "gradia: " << e.what() << "\n";
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "gradia: " << e.what() << "\n";
    return kRuntime;
  }
}
