#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogfuse/data.hpp"
#include "cogfuse/metrics.hpp"
#include "cogfuse/models.hpp"

namespace cogfuse {

struct TrainConfig {
  TaskKind task = TaskKind::classification;
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 42;       // batch order; per fold this becomes seed + fold
  std::uint64_t init_seed = 42;  // parameter initialization; same per-fold offset
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Multimodal runs train their two branches first; unset means the
  // per-variant default rate for the task.
  std::optional<double> text_branch_learning_rate;
  std::optional<double> audio_branch_learning_rate;

  // 1e-5 for text-based and multimodal variants, 1e-2 for audio; regression
  // rates are ten times the classification ones.
  static double default_learning_rate(Variant variant, TaskKind task);
  static TrainConfig defaults_for(Variant variant, TaskKind task);

  void validate() const;
  nlohmann::json to_json() const;
  // Keys present in `doc` override `base`.
  static TrainConfig from_json(const nlohmann::json& doc, TrainConfig base);
};

// Mean over the batch of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// Mean squared error of a [b, 1] prediction.
Tensor mse(const Tensor& pred, std::span<const double> targets);

// Bias-corrected Adam with decoupled weight decay. Moments are keyed by
// parameter name so the state survives model copies.
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
    std::size_t step = 0;
  };

  explicit AdamW(Options options) : options_(options) {}

  // Updates every trainable parameter in `params`; each needs a gradient.
  void step(std::span<Parameter* const> params, const Gradients& grads);
  const Moments& moments(const Parameter& p) const;
  const Options& options() const noexcept { return options_; }

 private:
  Options options_;
  std::map<std::string, Moments> state_;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records a validation loss for 1-based `epoch`; returns true when
  // training should halt.
  bool update(std::size_t epoch, double val_loss);
  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }
  std::size_t since_improvement() const noexcept { return since_improvement_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = 0.0;
  std::size_t since_improvement_ = 0;
  bool improved_ = false;
  bool any_ = false;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct FitResult {
  Model model;  // parameters of the best validation epoch
  std::vector<EpochLoss> history;
  double initial_val_loss = 0.0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t epochs_run = 0;
  std::vector<std::string> trained_sample_ids;  // every record used in a gradient step
};

// Loss of `model` over `records` for the task, without recording gradients.
double evaluate_loss(const Model& model, std::span<const FeatureRecord> records, TaskKind task);

// Mini-batch training with early stopping on validation loss. Language-routed
// models see single-language batches; the two languages are interleaved in a
// seeded order. Records must already be normalized.
FitResult fit(Model model, std::span<const FeatureRecord> train, std::span<const FeatureRecord> validation,
              const TrainConfig& cfg);

struct CrossvalOptions {
  std::size_t k = 5;
  std::uint64_t fold_seed = 42;
  bool subject_mean = false;
};

struct FoldOutcome {
  std::size_t fold = 0;
  FitResult fit;
  std::vector<FitResult> branch_fits;  // multimodal: text branch, audio branch
  Normalizer normalizer;
  MetricRow metrics;
  std::optional<ClassificationReport> classification;
  std::optional<RegressionReport> regression;
  std::vector<std::string> train_sample_ids;
  std::vector<std::string> validation_sample_ids;
};

struct CrossvalResult {
  ModelConfig model_config;
  TrainConfig train_config;
  CrossvalOptions options;
  FoldPlan plan;
  std::vector<FoldOutcome> folds;
  CrossvalReport report;
};

// Metrics of a trained model on already-normalized records.
MetricRow evaluate_metrics(const Model& model, std::span<const FeatureRecord> records, TaskKind task, bool subject_mean,
                           std::optional<ClassificationReport>* cls = nullptr,
                           std::optional<RegressionReport>* reg = nullptr);

// Trains a model for one held-out fold (including both branches for the
// multimodal variant) and evaluates it on that fold.
FoldOutcome train_fold(const Corpus& corpus, const FoldPlan& plan, std::size_t fold, const ModelConfig& model_cfg,
                       const TrainConfig& train_cfg, bool subject_mean);

CrossvalResult crossval(const Corpus& corpus, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const CrossvalOptions& options = {});

// Index of the best and worst fold by the task's primary metric (UAR up,
// RMSE down). Ties resolve to the lowest fold index.
std::pair<std::size_t, std::size_t> best_and_worst_fold(const std::vector<MetricRow>& folds, TaskKind task);

struct RefitResult {
  std::size_t best_fold = 0;
  std::size_t worst_fold = 0;
  FitResult fit;
  Normalizer normalizer;
  std::vector<std::string> seen_sample_ids;  // union over both training phases
};

// Continues training the best fold's model on the worst fold's records, still
// validating on the best fold.
RefitResult refit_full(const CrossvalResult& result, const Corpus& corpus, const TrainConfig& cfg);

}  // namespace cogfuse
