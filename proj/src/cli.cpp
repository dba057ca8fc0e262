#include "cogfuse/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cogfuse/data.hpp"
#include "cogfuse/errors.hpp"
#include "cogfuse/models.hpp"
#include "cogfuse/train.hpp"

namespace cogfuse::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitUsage = 2;

std::uint64_t default_seed() {
  const char* env = std::getenv("COGFUSE_SEED");
  if (env == nullptr || *env == '\0') return 42;
  try {
    std::size_t used = 0;
    const auto value = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return value;
  } catch (const std::exception&) {
    throw ConfigError(std::string("COGFUSE_SEED is not an unsigned integer: ") + env);
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << text;
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

void write_json_file(const fs::path& path, const json& doc) { write_text_file(path, doc.dump(2) + "\n"); }

std::string timestamp(std::chrono::system_clock::time_point t, const char* fmt) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, fmt);
  return os.str();
}

// Fresh directory under `base`; an existing name gets a numeric suffix so
// earlier runs are never touched.
fs::path create_run_dir(const fs::path& base, const std::string& command, std::chrono::system_clock::time_point t) {
  fs::create_directories(base);
  const std::string stem = command + "-" + timestamp(t, "%Y%m%dT%H%M%SZ");
  for (int n = 0;; ++n) {
    fs::path dir = base / (n == 0 ? stem : stem + "-" + std::to_string(n));
    if (fs::create_directory(dir)) return dir;
  }
}

struct RunManifest {
  std::string command;
  std::string config_path;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::system_clock::time_point started;

  json to_json(double duration_seconds) const {
    return json{{"command", command},
                {"config_path", config_path},
                {"config", config},
                {"seeds", seeds},
                {"inputs", inputs},
                {"outputs", outputs},
                {"toolkit_version", kToolkitVersion},
                {"started_at", timestamp(started, "%Y-%m-%dT%H:%M:%SZ")},
                {"duration_seconds", duration_seconds}};
  }
};

class Run {
 public:
  Run(const fs::path& base, std::string command) : start_(std::chrono::steady_clock::now()) {
    manifest.command = std::move(command);
    manifest.started = std::chrono::system_clock::now();
    dir_ = create_run_dir(base, manifest.command, manifest.started);
  }

  const fs::path& dir() const { return dir_; }

  void finish() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json_file(dir_ / "manifest.json", manifest.to_json(secs));
  }

  RunManifest manifest;

 private:
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
};

std::string history_csv(const std::vector<EpochLoss>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss\n";
  for (const auto& h : history) os << h.epoch << ',' << h.train_loss << ',' << h.val_loss << '\n';
  return os.str();
}

// Flat config document: model and training keys share one object.
struct ResolvedConfig {
  ModelConfig model;
  TrainConfig train;
  CrossvalOptions crossval;

  json to_json() const {
    json doc = model.to_json();
    const json train_doc = train.to_json();
    for (const auto& [k, v] : train_doc.items()) doc[k] = v;
    doc["k"] = crossval.k;
    doc["fold_seed"] = crossval.fold_seed;
    doc["subject_mean"] = crossval.subject_mean;
    return doc;
  }
};

struct TrainingFlags {
  std::string corpus;
  std::string variant;
  std::string task;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> init_seed;
  std::optional<std::uint64_t> fold_seed;
  std::optional<double> learning_rate;
  std::optional<std::size_t> max_epochs;
  bool subject_mean = false;
};

void add_training_flags(CLI::App* cmd, TrainingFlags& f) {
  cmd->add_option("--corpus", f.corpus, "Feature file (JSON lines)")->required();
  cmd->add_option("--variant", f.variant, "text, similarity, combination, combined_similarity, audio, multimodal")
      ->required();
  cmd->add_option("--task", f.task, "cls or reg")->required();
  cmd->add_option("--config", f.config, "Flat JSON config; flags override its values");
  cmd->add_option("--seed", f.seed, "Training (batch order) seed");
  cmd->add_option("--init-seed", f.init_seed, "Parameter initialization seed");
  cmd->add_option("--fold-seed", f.fold_seed, "Fold assignment seed");
  cmd->add_option("--learning-rate", f.learning_rate, "Overrides the per-variant default");
  cmd->add_option("--max-epochs", f.max_epochs, "Epoch budget");
}

ResolvedConfig resolve_config(const TrainingFlags& f) {
  json doc = json::object();
  if (!f.config.empty()) {
    doc = read_json_file(f.config);
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  doc["variant"] = f.variant;
  doc["task"] = f.task;

  ResolvedConfig rc;
  rc.model = ModelConfig::from_json(doc);
  const std::uint64_t seed0 = default_seed();
  TrainConfig base = TrainConfig::defaults_for(rc.model.variant, rc.model.task);
  base.seed = seed0;
  base.init_seed = seed0;
  rc.train = TrainConfig::from_json(doc, base);
  if (f.seed) rc.train.seed = *f.seed;
  if (f.init_seed) rc.train.init_seed = *f.init_seed;
  if (f.learning_rate) rc.train.learning_rate = *f.learning_rate;
  if (f.max_epochs) rc.train.max_epochs = *f.max_epochs;
  rc.train.validate();

  rc.crossval.k = doc.value("k", rc.crossval.k);
  rc.crossval.fold_seed = doc.value("fold_seed", seed0);
  if (f.fold_seed) rc.crossval.fold_seed = *f.fold_seed;
  rc.crossval.subject_mean = f.subject_mean || doc.value("subject_mean", false);
  return rc;
}

json seeds_of(const ResolvedConfig& rc) {
  return json{{"train", rc.train.seed}, {"init", rc.train.init_seed}, {"fold", rc.crossval.fold_seed}};
}

void save_fold(const fs::path& dir, const FoldOutcome& outcome) {
  json extra{{"fold", outcome.fold}, {"best_epoch", outcome.fit.best_epoch}, {"epochs_run", outcome.fit.epochs_run}};
  save_checkpoint(dir, outcome.fit.model, &outcome.normalizer, extra);
  write_text_file(dir / "history.csv", history_csv(outcome.fit.history));
  json metrics = json::object();
  for (const auto& [name, value] : outcome.metrics) metrics[name] = value;
  write_json_file(dir / "metrics.json", metrics);
}

// ---- subcommands -----------------------------------------------------------

int cmd_generate(const std::string& spec_path, const std::string& out_path, const fs::path& runs, std::ostream& out) {
  json doc = json::object();
  if (!spec_path.empty()) {
    doc = read_json_file(spec_path);
    if (!doc.is_object()) throw ConfigError("spec file must hold a JSON object");
  }
  if (!doc.contains("seed")) doc["seed"] = default_seed();
  const SyntheticSpec spec = SyntheticSpec::from_json(doc);
  const Corpus corpus = generate_synthetic(spec);
  save_corpus(corpus, out_path);

  Run run(runs, "generate");
  run.manifest.config_path = spec_path;
  run.manifest.config = spec.to_json();
  run.manifest.seeds = json{{"corpus", spec.seed}};
  run.manifest.outputs = json{{"corpus", out_path}};
  write_json_file(run.dir() / "config.json", spec.to_json());
  run.finish();
  out << "wrote " << corpus.records.size() << " records to " << out_path << "\n" << "run: " << run.dir().string() << "\n";
  return kExitOk;
}

int cmd_crossval(const TrainingFlags& f, const fs::path& runs, std::ostream& out) {
  const ResolvedConfig rc = resolve_config(f);
  const Corpus corpus = load_corpus(f.corpus);

  Run run(runs, "crossval");
  run.manifest.config_path = f.config;
  run.manifest.config = rc.to_json();
  run.manifest.seeds = seeds_of(rc);
  run.manifest.inputs = json{{"corpus", f.corpus}};
  write_json_file(run.dir() / "config.json", rc.to_json());

  const CrossvalResult result = crossval(corpus, rc.model, rc.train, rc.crossval);
  write_json_file(run.dir() / "fold_plan.json", result.plan.to_json());
  json fold_dirs = json::array();
  for (const auto& outcome : result.folds) {
    const fs::path dir = run.dir() / ("fold_" + std::to_string(outcome.fold));
    save_fold(dir, outcome);
    fold_dirs.push_back(dir.string());
  }
  write_json_file(run.dir() / "summary.json", result.report.to_json());
  write_text_file(run.dir() / "summary.csv", result.report.to_csv());
  run.manifest.outputs = json{{"summary", (run.dir() / "summary.json").string()}, {"folds", fold_dirs}};
  run.finish();

  out << render_markdown({result.report}) << "run: " << run.dir().string() << "\n";
  return kExitOk;
}

int cmd_train(const TrainingFlags& f, const std::string& plan_path, std::size_t val_fold, const fs::path& runs,
              std::ostream& out) {
  const ResolvedConfig rc = resolve_config(f);
  const Corpus corpus = load_corpus(f.corpus);
  const FoldPlan plan = FoldPlan::from_json(read_json_file(plan_path));
  if (val_fold >= plan.k) {
    throw UsageError("--val-fold " + std::to_string(val_fold) + " outside a " + std::to_string(plan.k) + "-fold plan");
  }

  Run run(runs, "train");
  run.manifest.config_path = f.config;
  run.manifest.config = rc.to_json();
  run.manifest.config["val_fold"] = val_fold;
  run.manifest.seeds = seeds_of(rc);
  run.manifest.inputs = json{{"corpus", f.corpus}, {"folds", plan_path}};
  write_json_file(run.dir() / "config.json", run.manifest.config);
  write_json_file(run.dir() / "fold_plan.json", plan.to_json());

  const FoldOutcome outcome = train_fold(corpus, plan, val_fold, rc.model, rc.train, rc.crossval.subject_mean);
  const fs::path ckpt = run.dir() / "checkpoint";
  save_fold(ckpt, outcome);
  run.manifest.outputs = json{{"checkpoint", ckpt.string()}};
  run.finish();

  for (const auto& [name, value] : outcome.metrics) out << name << ' ' << value << '\n';
  out << "checkpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt_dir, const std::string& corpus_path, bool subject_mean, const fs::path& runs,
                 std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_dir);
  Corpus corpus = load_corpus(corpus_path);
  if (ckpt.normalizer && !corpus.audio_normalized) corpus = ckpt.normalizer->apply(corpus);
  const TaskKind task = ckpt.model.config().task;
  const MetricRow row = evaluate_metrics(ckpt.model, corpus.records, task, subject_mean);

  CrossvalReport report;
  report.task = task;
  report.variant = std::string(to_string(ckpt.model.config().variant));
  report.aggregation = subject_mean ? "subject" : "sample";
  report.folds.push_back(row);
  for (const auto& [name, value] : row) report.summary.push_back({name, MeanSd{value, 0.0}});

  Run run(runs, "evaluate");
  run.manifest.config = json{{"subject_mean", subject_mean}};
  run.manifest.seeds = json{{"model", ckpt.model.seed()}};
  run.manifest.inputs = json{{"checkpoint", ckpt_dir}, {"corpus", corpus_path}};
  write_json_file(run.dir() / "summary.json", report.to_json());
  run.manifest.outputs = json{{"summary", (run.dir() / "summary.json").string()}};
  run.finish();

  out << report.to_json().dump(2) << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& format, std::ostream& out) {
  std::vector<CrossvalReport> reports;
  for (const auto& dir : run_dirs) reports.push_back(CrossvalReport::from_json(read_json_file(fs::path(dir) / "summary.json")));
  if (format == "md") {
    out << render_markdown(reports);
  } else if (format == "csv") {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      std::string csv = reports[i].to_csv();
      if (i > 0) csv.erase(0, csv.find('\n') + 1);  // one header for the whole table
      out << csv;
    }
  } else {
    json doc = json::array();
    for (const auto& r : reports) doc.push_back(r.to_json());
    out << (doc.size() == 1 ? doc[0] : doc).dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cogfuse: MCI detection models over precomputed multimodal features", "cogfuse"};
  app.require_subcommand(1);
  std::string runs_dir = "runs";
  app.add_option("--runs-dir", runs_dir, "Parent directory for run directories")->capture_default_str();
  app.set_version_flag("--version", kToolkitVersion);

  std::string spec_path, out_path;
  auto* gen = app.add_subcommand("generate", "Write a synthetic corpus");
  gen->add_option("--spec", spec_path, "SyntheticSpec JSON; defaults apply to missing keys");
  gen->add_option("--out", out_path, "Output feature file")->required();

  TrainingFlags cv_flags;
  auto* cv = app.add_subcommand("crossval", "Subject-grouped k-fold cross-validation");
  add_training_flags(cv, cv_flags);
  cv->add_flag("--subject-mean", cv_flags.subject_mean, "Average each subject's three outputs");

  TrainingFlags tr_flags;
  std::string plan_path;
  std::size_t val_fold = 0;
  auto* tr = app.add_subcommand("train", "Fit one fold and write its checkpoint");
  add_training_flags(tr, tr_flags);
  tr->add_option("--folds", plan_path, "Fold plan JSON")->required();
  tr->add_option("--val-fold", val_fold, "Held-out fold index")->required();
  tr->add_flag("--subject-mean", tr_flags.subject_mean, "Average each subject's three outputs");

  std::string ckpt_dir, eval_corpus;
  bool eval_subject_mean = false;
  auto* ev = app.add_subcommand("evaluate", "Metrics of a checkpoint on a feature file");
  ev->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
  ev->add_option("--corpus", eval_corpus, "Feature file")->required();
  ev->add_flag("--subject-mean", eval_subject_mean, "Average each subject's three outputs");

  std::vector<std::string> report_runs;
  std::string format = "md";
  auto* rep = app.add_subcommand("report", "Render run summaries");
  rep->add_option("--run", report_runs, "Run directory holding summary.json")->required();
  rep->add_option("--format", format, "json, csv or md")
      ->check(CLI::IsMember({"json", "csv", "md"}))
      ->capture_default_str();

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolkitVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  const fs::path runs(runs_dir);
  try {
    if (*gen) return cmd_generate(spec_path, out_path, runs, out);
    if (*cv) return cmd_crossval(cv_flags, runs, out);
    if (*tr) return cmd_train(tr_flags, plan_path, val_fold, runs, out);
    if (*ev) return cmd_evaluate(ckpt_dir, eval_corpus, eval_subject_mean, runs, out);
    return cmd_report(report_runs, format, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::type_error& e) {
    err << "error: bad config value: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace cogfuse::cli
