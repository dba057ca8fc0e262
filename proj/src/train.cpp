#include "cogfuse/train.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cogfuse/errors.hpp"
#include "cogfuse/random.hpp"

namespace cogfuse {

namespace {

using nlohmann::json;

constexpr std::size_t kEvalChunk = 64;

using Batch = std::vector<const FeatureRecord*>;

Tensor batch_loss(const Model& model, const Batch& batch, TaskKind task) {
  const Tensor out = model.forward(batch).output;
  if (task == TaskKind::classification) {
    std::vector<int> targets;
    targets.reserve(batch.size());
    for (const auto* r : batch) targets.push_back(r->label);
    return cross_entropy(out, targets);
  }
  std::vector<double> targets;
  targets.reserve(batch.size());
  for (const auto* r : batch) targets.push_back(r->mmse);
  return mse(out, targets);
}

std::vector<Batch> chunk(const std::vector<const FeatureRecord*>& recs, std::size_t size) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < recs.size(); i += size) {
    out.emplace_back(recs.begin() + static_cast<std::ptrdiff_t>(i),
                     recs.begin() + static_cast<std::ptrdiff_t>(std::min(recs.size(), i + size)));
  }
  return out;
}

// Groups by language when routed, otherwise a single group; order preserved.
std::vector<std::vector<const FeatureRecord*>> language_groups(const Model& model, std::span<const FeatureRecord> records) {
  if (!model.routed()) {
    std::vector<const FeatureRecord*> all;
    for (const auto& r : records) all.push_back(&r);
    return {all};
  }
  std::vector<std::vector<const FeatureRecord*>> groups(2);
  for (const auto& r : records) groups[static_cast<std::size_t>(r.language)].push_back(&r);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return groups;
}

std::vector<Batch> epoch_batches(const Model& model, std::span<const FeatureRecord> train, std::size_t batch_size,
                                 std::uint64_t seed, std::size_t epoch) {
  Rng rng(seed, epoch);
  std::vector<Batch> batches;
  for (auto& group : language_groups(model, train)) {
    rng.shuffle(group);
    for (auto& b : chunk(group, batch_size)) batches.push_back(std::move(b));
  }
  // Seeded interleave of the per-language batch streams.
  rng.shuffle(batches);
  return batches;
}

std::vector<std::vector<double>> snapshot(const Model& model) {
  std::vector<std::vector<double>> values;
  for (const Parameter* p : model.parameters()) values.push_back(p->value);
  return values;
}

void restore(Model& model, const std::vector<std::vector<double>>& values) {
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::vector<FeatureRecord> normalized(std::span<const FeatureRecord> records, const Normalizer& n) {
  std::vector<FeatureRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(n.apply(r));
  return out;
}

std::vector<std::string> sample_ids(std::span<const FeatureRecord> records) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.sample_id);
  return ids;
}

std::vector<FeatureRecord> sorted_records(const Corpus& corpus) {
  std::vector<FeatureRecord> recs = corpus.records;
  std::sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return recs;
}

Corpus sorted_corpus(const Corpus& corpus) {
  Corpus c;
  c.dims = corpus.dims;
  c.provenance = corpus.provenance;
  c.audio_normalized = corpus.audio_normalized;
  c.records = sorted_records(corpus);
  return c;
}

}  // namespace

// ---- config ---------------------------------------------------------------

double TrainConfig::default_learning_rate(Variant variant, TaskKind task) {
  const double cls = variant == Variant::audio ? 1e-2 : 1e-5;
  return task == TaskKind::classification ? cls : 10.0 * cls;
}

TrainConfig TrainConfig::defaults_for(Variant variant, TaskKind task) {
  TrainConfig c;
  c.task = task;
  c.learning_rate = default_learning_rate(variant, task);
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  for (const auto& lr : {text_branch_learning_rate, audio_branch_learning_rate}) {
    if (lr && !(*lr > 0.0)) throw ConfigError("branch learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience >= max_epochs) throw ConfigError("patience must be smaller than max_epochs");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  json doc{{"task", std::string(to_string(task))},
           {"learning_rate", learning_rate},
           {"weight_decay", weight_decay},
           {"batch_size", batch_size},
           {"max_epochs", max_epochs},
           {"patience", patience},
           {"seed", seed},
           {"init_seed", init_seed},
           {"beta1", beta1},
           {"beta2", beta2},
           {"eps", eps}};
  if (text_branch_learning_rate) doc["text_branch_learning_rate"] = *text_branch_learning_rate;
  if (audio_branch_learning_rate) doc["audio_branch_learning_rate"] = *audio_branch_learning_rate;
  return doc;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc, TrainConfig base) {
  if (doc.contains("task")) base.task = parse_task(doc["task"].get<std::string>());
  base.learning_rate = doc.value("learning_rate", base.learning_rate);
  base.weight_decay = doc.value("weight_decay", base.weight_decay);
  base.batch_size = doc.value("batch_size", base.batch_size);
  base.max_epochs = doc.value("max_epochs", base.max_epochs);
  base.patience = doc.value("patience", base.patience);
  base.seed = doc.value("seed", base.seed);
  base.init_seed = doc.value("init_seed", base.init_seed);
  base.beta1 = doc.value("beta1", base.beta1);
  base.beta2 = doc.value("beta2", base.beta2);
  base.eps = doc.value("eps", base.eps);
  if (doc.contains("text_branch_learning_rate")) base.text_branch_learning_rate = doc["text_branch_learning_rate"].get<double>();
  if (doc.contains("audio_branch_learning_rate")) base.audio_branch_learning_rate = doc["audio_branch_learning_rate"].get<double>();
  base.validate();
  return base;
}

// ---- losses ---------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || logits.dim(0) == 0) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " for " + std::to_string(targets.size()) +
                         " targets");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  auto probs = std::make_shared<std::vector<double>>(b * c);
  std::vector<int> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (tgt[i] < 0 || static_cast<std::size_t>(tgt[i]) >= c) {
      throw ContractError("cross_entropy: target " + std::to_string(tgt[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    const double* row = logits.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - log_z);
    total += log_z - row[tgt[i]];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return record_op(Shape{}, {total * inv_b}, {logits},
                   [probs, tgt, b, c, inv_b](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t i = 0; i < b; ++i) {
                       for (std::size_t j = 0; j < c; ++j) {
                         const double onehot = static_cast<std::size_t>(tgt[i]) == j ? 1.0 : 0.0;
                         (*in[0])[i * c + j] += g[0] * inv_b * ((*probs)[i * c + j] - onehot);
                       }
                     }
                   });
}

Tensor mse(const Tensor& pred, std::span<const double> targets) {
  if (pred.rank() != 2 || pred.dim(1) != 1 || pred.dim(0) != targets.size() || targets.empty()) {
    throw DimensionError("mse: prediction " + to_string(pred.shape()) + " for " + std::to_string(targets.size()) +
                         " targets");
  }
  const std::size_t b = targets.size();
  std::vector<double> residual(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    residual[i] = pred[i] - targets[i];
    total += residual[i] * residual[i];
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  return record_op(Shape{}, {total * inv_b}, {pred},
                   [residual, inv_b](std::span<const double> g, std::span<std::vector<double>* const> in) {
                     for (std::size_t i = 0; i < residual.size(); ++i) (*in[0])[i] += g[0] * 2.0 * inv_b * residual[i];
                   });
}

// ---- optimizer ------------------------------------------------------------

void AdamW::step(std::span<Parameter* const> params, const Gradients& grads) {
  const Options& o = options_;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (!grads.contains(*p)) throw ContractError("adamw: missing gradient for trainable parameter '" + p->name + "'");
    const auto g = grads.of(*p);
    Moments& s = state_[p->name];
    if (s.first.empty()) {
      s.first.assign(p->size(), 0.0);
      s.second.assign(p->size(), 0.0);
    }
    ++s.step;
    const double t = static_cast<double>(s.step);
    const double bias1 = 1.0 - std::pow(o.beta1, t);
    const double bias2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < p->size(); ++i) {
      s.first[i] = o.beta1 * s.first[i] + (1.0 - o.beta1) * g[i];
      s.second[i] = o.beta2 * s.second[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = s.first[i] / bias1;
      const double v_hat = s.second[i] / bias2;
      double& theta = p->value[i];
      theta -= o.learning_rate * o.weight_decay * theta;
      theta -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

const AdamW::Moments& AdamW::moments(const Parameter& p) const {
  auto it = state_.find(p.name);
  if (it == state_.end()) throw ContractError("adamw: no state for parameter '" + p.name + "'");
  return it->second;
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
  improved_ = !any_ || val_loss < best_loss_;
  if (improved_) {
    any_ = true;
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_improvement_ = 0;
  } else {
    ++since_improvement_;
  }
  return since_improvement_ >= patience_;
}

// ---- training -------------------------------------------------------------

double evaluate_loss(const Model& model, std::span<const FeatureRecord> records, TaskKind task) {
  if (records.empty()) throw ConfigError("cannot evaluate a loss on no records");
  NoGradScope no_grad;
  double total = 0.0;
  for (const auto& group : language_groups(model, records)) {
    for (const auto& batch : chunk(group, kEvalChunk)) {
      total += batch_loss(model, batch, task).item() * static_cast<double>(batch.size());
    }
  }
  return total / static_cast<double>(records.size());
}

FitResult fit(Model model, std::span<const FeatureRecord> train, std::span<const FeatureRecord> validation,
              const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty() || validation.empty()) throw ConfigError("fit needs nonempty training and validation splits");
  if (model.config().task != cfg.task) throw ConfigError("model and training config disagree on the task");

  AdamW optimizer(AdamW::Options{cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});
  EarlyStopping stopper(cfg.patience);
  FitResult result;
  result.initial_val_loss = evaluate_loss(model, validation, cfg.task);
  std::vector<std::vector<double>> best = snapshot(model);
  std::set<std::string> trained;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    double train_total = 0.0;
    for (const Batch& batch : epoch_batches(model, train, cfg.batch_size, cfg.seed, epoch)) {
      Tape tape;
      TapeScope scope(tape);
      const Tensor loss = batch_loss(model, batch, cfg.task);
      Gradients grads;
      tape.backward(loss, grads);
      const auto route = model.routed() ? std::optional<Language>(batch.front()->language) : std::nullopt;
      const auto params = model.parameters(route);
      optimizer.step(params, grads);
      train_total += loss.item() * static_cast<double>(batch.size());
      for (const auto* r : batch) trained.insert(r->sample_id);
    }
    const double val_loss = evaluate_loss(model, validation, cfg.task);
    result.history.push_back({epoch, train_total / static_cast<double>(train.size()), val_loss});
    result.epochs_run = epoch;
    const bool stop = stopper.update(epoch, val_loss);
    if (stopper.improved()) best = snapshot(model);
    if (stop) break;
  }
  restore(model, best);
  result.model = std::move(model);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  result.trained_sample_ids.assign(trained.begin(), trained.end());
  return result;
}

// ---- evaluation and cross-validation --------------------------------------

MetricRow evaluate_metrics(const Model& model, std::span<const FeatureRecord> records, TaskKind task, bool subject_mean,
                           std::optional<ClassificationReport>* cls, std::optional<RegressionReport>* reg) {
  const auto outputs = model.predict(records);
  std::vector<std::string> subjects;
  for (const auto& r : records) subjects.push_back(r.subject_id);
  if (task == TaskKind::classification) {
    std::vector<int> labels, preds;
    for (const auto& r : records) labels.push_back(r.label);
    if (subject_mean) {
      preds = aggregate_per_subject(subjects, outputs, task).classes;
    } else {
      for (const auto& o : outputs) preds.push_back(predicted_class(o));
    }
    const auto report = classification_report(confusion_counts(preds, labels));
    if (cls) *cls = report;
    return to_row(report);
  }
  std::vector<double> targets, preds;
  for (const auto& r : records) targets.push_back(r.mmse);
  if (subject_mean) {
    preds = aggregate_per_subject(subjects, outputs, task).scores;
  } else {
    for (const auto& o : outputs) preds.push_back(o.at(0));
  }
  const auto report = regression_report(preds, targets);
  if (reg) *reg = report;
  return to_row(report);
}

FoldOutcome train_fold(const Corpus& corpus, const FoldPlan& plan, std::size_t fold, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, bool subject_mean) {
  if (model_cfg.task != train_cfg.task) throw ConfigError("model and training config disagree on the task");
  const FoldSplit split = split_for_fold(corpus, plan, fold);
  if (split.train.empty() || split.validation.empty()) throw ConfigError("fold " + std::to_string(fold) + " is empty");

  FoldOutcome out;
  out.fold = fold;
  out.normalizer = Normalizer::fit(split.train);
  const auto train = normalized(split.train, out.normalizer);
  const auto validation = normalized(split.validation, out.normalizer);
  out.train_sample_ids = sample_ids(train);
  out.validation_sample_ids = sample_ids(validation);

  TrainConfig cfg = train_cfg;
  cfg.seed = train_cfg.seed + fold;
  cfg.init_seed = train_cfg.init_seed + fold;

  if (model_cfg.variant == Variant::multimodal) {
    const ModelConfig text_cfg = model_cfg.with_variant(Variant::combined_similarity);
    const ModelConfig audio_cfg = model_cfg.with_variant(Variant::audio);
    TrainConfig text_train = cfg;
    text_train.learning_rate =
        cfg.text_branch_learning_rate.value_or(TrainConfig::default_learning_rate(Variant::combined_similarity, cfg.task));
    TrainConfig audio_train = cfg;
    audio_train.learning_rate =
        cfg.audio_branch_learning_rate.value_or(TrainConfig::default_learning_rate(Variant::audio, cfg.task));
    out.branch_fits.push_back(fit(Model::create(text_cfg, cfg.init_seed), train, validation, text_train));
    out.branch_fits.push_back(fit(Model::create(audio_cfg, cfg.init_seed), train, validation, audio_train));
    Model fused = Model::create_multimodal(model_cfg, out.branch_fits[0].model, out.branch_fits[1].model, cfg.init_seed);
    out.fit = fit(std::move(fused), train, validation, cfg);
  } else {
    out.fit = fit(Model::create(model_cfg, cfg.init_seed), train, validation, cfg);
  }
  out.metrics = evaluate_metrics(out.fit.model, validation, cfg.task, subject_mean, &out.classification, &out.regression);
  return out;
}

CrossvalResult crossval(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const CrossvalOptions& options) {
  model_cfg.validate();
  train_cfg.validate();
  // Canonical record order, so results do not depend on file order.
  const Corpus sorted = sorted_corpus(corpus);
  CrossvalResult result;
  result.model_config = model_cfg;
  result.train_config = train_cfg;
  result.options = options;
  result.plan = split_folds(sorted, options.k, options.fold_seed);
  for (std::size_t f = 0; f < options.k; ++f) {
    result.folds.push_back(train_fold(sorted, result.plan, f, model_cfg, train_cfg, options.subject_mean));
  }
  result.report.task = train_cfg.task;
  result.report.variant = std::string(to_string(model_cfg.variant));
  result.report.aggregation = options.subject_mean ? "subject" : "sample";
  for (const auto& f : result.folds) result.report.folds.push_back(f.metrics);
  result.report.summary = summarize_folds(result.report.folds);
  return result;
}

std::pair<std::size_t, std::size_t> best_and_worst_fold(const std::vector<MetricRow>& folds, TaskKind task) {
  if (folds.empty()) throw ContractError("no fold metrics to rank");
  const std::string key = task == TaskKind::classification ? "uar" : "rmse";
  auto primary = [&](const MetricRow& row) {
    for (const auto& [name, v] : row) {
      if (name == key) return v;
    }
    throw ContractError("fold metrics lack '" + key + "'");
  };
  const bool higher_is_better = task == TaskKind::classification;
  std::size_t best = 0, worst = 0;
  for (std::size_t i = 1; i < folds.size(); ++i) {
    const double v = primary(folds[i]);
    const bool better = higher_is_better ? v > primary(folds[best]) : v < primary(folds[best]);
    const bool worse = higher_is_better ? v < primary(folds[worst]) : v > primary(folds[worst]);
    if (better) best = i;
    if (worse) worst = i;
  }
  return {best, worst};
}

RefitResult refit_full(const CrossvalResult& result, const Corpus& corpus, const TrainConfig& cfg) {
  if (result.folds.empty()) throw ContractError("refit_full needs a completed cross-validation");
  std::vector<MetricRow> rows;
  for (const auto& f : result.folds) rows.push_back(f.metrics);
  RefitResult out;
  std::tie(out.best_fold, out.worst_fold) = best_and_worst_fold(rows, result.train_config.task);

  const FoldOutcome& best = result.folds[out.best_fold];
  out.normalizer = best.normalizer;
  const Corpus sorted = sorted_corpus(corpus);
  const auto worst_records = normalized(split_for_fold(sorted, result.plan, out.worst_fold).validation, out.normalizer);
  const auto best_validation = normalized(split_for_fold(sorted, result.plan, out.best_fold).validation, out.normalizer);
  out.fit = fit(best.fit.model, worst_records, best_validation, cfg);

  std::set<std::string> seen(best.fit.trained_sample_ids.begin(), best.fit.trained_sample_ids.end());
  seen.insert(out.fit.trained_sample_ids.begin(), out.fit.trained_sample_ids.end());
  out.seen_sample_ids.assign(seen.begin(), seen.end());
  return out;
}

}  // namespace cogfuse
