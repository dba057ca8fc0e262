#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cogfuse/task.hpp"

namespace cogfuse {

// Positive class is MCI (label 1).
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion_counts(std::span<const int> preds, std::span<const int> labels);

// A metric whose denominator is zero is reported as 0 and flagged.
struct ClassificationReport {
  double uar = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
  bool degenerate = false;
};

ClassificationReport classification_report(const ConfusionCounts& c);

struct RegressionReport {
  double rmse = 0.0;
  double r2 = 0.0;          // 1 - SSres / sum (y - mean y)^2
  double r2_predicted = 0.0;  // 1 - SSres / sum (yhat - mean y)^2, the alternative denominator
  std::size_t n = 0;
  double target_mean = 0.0;
  bool r2_undefined = false;
};

RegressionReport regression_report(std::span<const double> preds, std::span<const double> targets);

// argmax of two logits; exact ties go to class 0.
int predicted_class(std::span<const double> logits);
double positive_probability(std::span<const double> logits);

// Per-sample predictions after replacing each subject's three outputs by
// their mean. Classification scores are MCI probabilities; a subject is MCI
// iff its mean probability is strictly above 0.5.
struct AggregatedPredictions {
  std::vector<double> scores;
  std::vector<int> classes;  // classification only
};

AggregatedPredictions aggregate_scores(std::span<const std::string> subject_ids, std::span<const double> scores,
                                       TaskKind task);
// Same, starting from raw model outputs (logits or regression values).
AggregatedPredictions aggregate_per_subject(std::span<const std::string> subject_ids,
                                            std::span<const std::vector<double>> outputs, TaskKind task);

// Named metric values for one fold, in table order.
using MetricRow = std::vector<std::pair<std::string, double>>;

MetricRow to_row(const ClassificationReport& r);
MetricRow to_row(const RegressionReport& r);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

// Mean and population standard deviation per metric; requires k >= 2 rows
// with identical metric names.
std::vector<std::pair<std::string, MeanSd>> summarize_folds(const std::vector<MetricRow>& folds);

struct CrossvalReport {
  TaskKind task = TaskKind::classification;
  std::string variant;
  std::string aggregation = "sample";  // or "subject"
  std::vector<MetricRow> folds;
  std::vector<std::pair<std::string, MeanSd>> summary;

  nlohmann::json to_json() const;
  static CrossvalReport from_json(const nlohmann::json& doc);
  std::string to_csv() const;
};

// Table with one row per variant and columns UAR, F1, σ, ρ, π, RMSE, R²;
// classification values in percent. Reports for the same variant share a row.
std::string render_markdown(const std::vector<CrossvalReport>& reports);

}  // namespace cogfuse
