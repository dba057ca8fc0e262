#include "cogfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cogfuse/errors.hpp"

namespace cogfuse {

namespace {

using nlohmann::json;

double ratio(std::size_t num, std::size_t den, bool& degenerate) {
  if (den == 0) {
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

struct Column {
  const char* header;
  const char* metric;
  TaskKind task;
};

constexpr Column kTableColumns[] = {
    {"UAR", "uar", TaskKind::classification},         {"F1", "f1", TaskKind::classification},
    {"σ", "specificity", TaskKind::classification},   {"ρ", "sensitivity", TaskKind::classification},
    {"π", "precision", TaskKind::classification},     {"RMSE", "rmse", TaskKind::regression},
    {"R²", "r2", TaskKind::regression},
};

}  // namespace

ConfusionCounts confusion_counts(std::span<const int> preds, std::span<const int> labels) {
  require_same_length(preds.size(), labels.size(), "confusion_counts");
  if (preds.empty()) throw ContractError("confusion_counts: no samples");
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool pred_pos = preds[i] == 1;
    const bool true_pos = labels[i] == 1;
    if (pred_pos && true_pos) ++c.tp;
    else if (pred_pos) ++c.fp;
    else if (true_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

ClassificationReport classification_report(const ConfusionCounts& c) {
  ClassificationReport r;
  r.sensitivity = ratio(c.tp, c.tp + c.fn, r.degenerate);
  r.specificity = ratio(c.tn, c.tn + c.fp, r.degenerate);
  r.precision = ratio(c.tp, c.tp + c.fp, r.degenerate);
  r.uar = (r.specificity + r.sensitivity) / 2.0;
  if (r.precision + r.sensitivity == 0.0) {
    r.degenerate = true;
    r.f1 = 0.0;
  } else {
    r.f1 = 2.0 * r.precision * r.sensitivity / (r.precision + r.sensitivity);
  }
  return r;
}

RegressionReport regression_report(std::span<const double> preds, std::span<const double> targets) {
  require_same_length(preds.size(), targets.size(), "regression_report");
  if (preds.size() < 2) throw ContractError("regression_report: need at least 2 samples for R²");
  RegressionReport r;
  r.n = preds.size();
  double sum_y = 0.0;
  for (double y : targets) sum_y += y;
  r.target_mean = sum_y / static_cast<double>(r.n);
  double ss_res = 0.0, ss_tot = 0.0, ss_pred = 0.0;
  for (std::size_t i = 0; i < r.n; ++i) {
    ss_res += (preds[i] - targets[i]) * (preds[i] - targets[i]);
    ss_tot += (targets[i] - r.target_mean) * (targets[i] - r.target_mean);
    ss_pred += (preds[i] - r.target_mean) * (preds[i] - r.target_mean);
  }
  r.rmse = std::sqrt(ss_res / static_cast<double>(r.n));
  if (ss_tot == 0.0) {
    r.r2_undefined = true;
    r.r2 = 0.0;
  } else {
    r.r2 = 1.0 - ss_res / ss_tot;
  }
  r.r2_predicted = ss_pred == 0.0 ? 0.0 : 1.0 - ss_res / ss_pred;
  return r;
}

int predicted_class(std::span<const double> logits) {
  if (logits.size() != 2) throw DimensionError("predicted_class: expected 2 logits");
  return logits[1] > logits[0] ? 1 : 0;
}

double positive_probability(std::span<const double> logits) {
  if (logits.size() != 2) throw DimensionError("positive_probability: expected 2 logits");
  // softmax over two logits
  return 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
}

AggregatedPredictions aggregate_scores(std::span<const std::string> subject_ids, std::span<const double> scores,
                                       TaskKind task) {
  require_same_length(subject_ids.size(), scores.size(), "aggregate_per_subject");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& [total, count] = acc[subject_ids[i]];
    total += scores[i];
    ++count;
  }
  for (const auto& [subject, entry] : acc) {
    if (entry.second != 3) {
      throw IntegrityError("subject '" + subject + "' contributes " + std::to_string(entry.second) +
                           " outputs, expected 3");
    }
  }
  AggregatedPredictions out;
  out.scores.reserve(scores.size());
  for (const auto& id : subject_ids) {
    const auto& [total, count] = acc.at(id);
    out.scores.push_back(total / static_cast<double>(count));
  }
  if (task == TaskKind::classification) {
    for (double s : out.scores) out.classes.push_back(s > 0.5 ? 1 : 0);
  }
  return out;
}

AggregatedPredictions aggregate_per_subject(std::span<const std::string> subject_ids,
                                            std::span<const std::vector<double>> outputs, TaskKind task) {
  std::vector<double> scores;
  scores.reserve(outputs.size());
  for (const auto& out : outputs) {
    if (task == TaskKind::classification) {
      scores.push_back(positive_probability(out));
    } else {
      if (out.size() != 1) throw DimensionError("regression output must have width 1");
      scores.push_back(out[0]);
    }
  }
  return aggregate_scores(subject_ids, scores, task);
}

MetricRow to_row(const ClassificationReport& r) {
  return {{"uar", r.uar}, {"f1", r.f1}, {"specificity", r.specificity}, {"sensitivity", r.sensitivity},
          {"precision", r.precision}};
}

MetricRow to_row(const RegressionReport& r) { return {{"rmse", r.rmse}, {"r2", r.r2}}; }

std::vector<std::pair<std::string, MeanSd>> summarize_folds(const std::vector<MetricRow>& folds) {
  if (folds.size() < 2) throw ContractError("summarize_folds: need at least 2 fold reports");
  std::vector<std::pair<std::string, MeanSd>> out;
  for (std::size_t m = 0; m < folds.front().size(); ++m) {
    const std::string& name = folds.front()[m].first;
    double sum = 0.0;
    for (const auto& row : folds) {
      if (row.size() != folds.front().size() || row[m].first != name) {
        throw ContractError("summarize_folds: fold reports carry different metrics");
      }
      sum += row[m].second;
    }
    const double k = static_cast<double>(folds.size());
    // Identical folds keep their exact value so the spread is exactly zero.
    const bool constant = std::all_of(folds.begin(), folds.end(),
                                      [&](const MetricRow& r) { return r[m].second == folds.front()[m].second; });
    const double mu = constant ? folds.front()[m].second : sum / k;
    double ss = 0.0;
    for (const auto& row : folds) ss += (row[m].second - mu) * (row[m].second - mu);
    out.push_back({name, MeanSd{mu, std::sqrt(ss / k)}});
  }
  return out;
}

nlohmann::json CrossvalReport::to_json() const {
  json folds_doc = json::array();
  for (std::size_t i = 0; i < folds.size(); ++i) {
    json f{{"fold", i}};
    for (const auto& [name, value] : folds[i]) f[name] = value;
    folds_doc.push_back(f);
  }
  json summary_doc = json::object();
  for (const auto& [name, ms] : summary) summary_doc[name] = {{"mean", ms.mean}, {"sd", ms.sd}};
  return json{{"task", std::string(to_string(task))},
              {"variant", variant},
              {"aggregation", aggregation},
              {"folds", folds_doc},
              {"summary", summary_doc}};
}

CrossvalReport CrossvalReport::from_json(const nlohmann::json& doc) {
  CrossvalReport r;
  r.task = parse_task(doc.at("task").get<std::string>());
  r.variant = doc.at("variant").get<std::string>();
  r.aggregation = doc.value("aggregation", std::string("sample"));
  const std::vector<std::string> order = r.task == TaskKind::classification
                                             ? std::vector<std::string>{"uar", "f1", "specificity", "sensitivity", "precision"}
                                             : std::vector<std::string>{"rmse", "r2"};
  for (const auto& f : doc.at("folds")) {
    MetricRow row;
    for (const auto& name : order) row.push_back({name, f.at(name).get<double>()});
    r.folds.push_back(row);
  }
  for (const auto& name : order) {
    const auto& s = doc.at("summary").at(name);
    r.summary.push_back({name, MeanSd{s.at("mean").get<double>(), s.at("sd").get<double>()}});
  }
  return r;
}

std::string CrossvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "task,variant,aggregation,fold";
  if (!folds.empty()) {
    for (const auto& [name, v] : folds.front()) os << ',' << name;
  }
  os << '\n';
  const std::string prefix = std::string(to_string(task)) + ',' + variant + ',' + aggregation + ',';
  for (std::size_t i = 0; i < folds.size(); ++i) {
    os << prefix << i;
    for (const auto& [name, v] : folds[i]) os << ',' << v;
    os << '\n';
  }
  os << prefix << "mean";
  for (const auto& [name, ms] : summary) os << ',' << ms.mean;
  os << '\n' << prefix << "sd";
  for (const auto& [name, ms] : summary) os << ',' << ms.sd;
  os << '\n';
  return os.str();
}

std::string render_markdown(const std::vector<CrossvalReport>& reports) {
  std::vector<std::string> variants;
  std::map<std::string, std::map<std::string, MeanSd>> cells;
  for (const auto& r : reports) {
    std::string row_name = r.variant + (r.aggregation == "subject" ? "*" : "");
    if (!cells.count(row_name)) variants.push_back(row_name);
    for (const auto& [name, ms] : r.summary) cells[row_name][name] = ms;
  }
  std::ostringstream os;
  os << "| Model |";
  for (const auto& c : kTableColumns) os << ' ' << c.header << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < std::size(kTableColumns); ++i) os << "---|";
  os << '\n';
  for (const auto& v : variants) {
    os << "| " << v << " |";
    for (const auto& c : kTableColumns) {
      auto it = cells[v].find(c.metric);
      if (it == cells[v].end()) {
        os << " - |";
        continue;
      }
      const double mul = c.task == TaskKind::classification ? 100.0 : 1.0;
      os << ' ' << fixed2(it->second.mean * mul) << " ± " << fixed2(it->second.sd * mul) << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cogfuse
