#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "cogfuse/errors.hpp"
#include "cogfuse/metrics.hpp"
#include "cogfuse/random.hpp"

using namespace cogfuse;

namespace {

struct Oracle {
  double uar, f1, specificity, sensitivity, precision;
};

// Recomputes every metric from raw pairs without going through ConfusionCounts.
Oracle brute_force(const std::vector<int>& preds, const std::vector<int>& labels) {
  double pos = 0, neg = 0, hit_pos = 0, hit_neg = 0, called_pos = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 1) {
      pos += 1;
      if (preds[i] == 1) hit_pos += 1;
    } else {
      neg += 1;
      if (preds[i] == 0) hit_neg += 1;
    }
    if (preds[i] == 1) called_pos += 1;
  }
  Oracle o{};
  o.sensitivity = pos > 0 ? hit_pos / pos : 0.0;
  o.specificity = neg > 0 ? hit_neg / neg : 0.0;
  o.precision = called_pos > 0 ? hit_pos / called_pos : 0.0;
  o.uar = (o.specificity + o.sensitivity) / 2.0;
  o.f1 = o.precision + o.sensitivity > 0 ? 2.0 * o.precision * o.sensitivity / (o.precision + o.sensitivity) : 0.0;
  return o;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion counts examples") {
  const std::vector<int> y{1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<int> yhat{1, 1, 1, 0, 0, 0, 1, 1};
  const auto c = confusion_counts(yhat, y);
  CHECK(c == ConfusionCounts{3, 2, 2, 1});
  CHECK(c.total() == 8);

  const auto perfect = confusion_counts(y, y);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);

  const std::vector<int> negatives(5, 0), positives(5, 1);
  const auto all_pos = confusion_counts(positives, negatives);
  CHECK(all_pos.tp == 0);
  CHECK(all_pos.tn == 0);

  CHECK_THROWS_AS(confusion_counts(std::vector<int>{1}, std::vector<int>{1, 0}), DimensionError);
  CHECK_THROWS_AS(confusion_counts(std::vector<int>{}, std::vector<int>{}), ContractError);
}

TEST_CASE("classification report examples") {
  const auto r = classification_report(ConfusionCounts{3, 2, 2, 1});
  CHECK(r.sensitivity == 0.75);
  CHECK(r.specificity == 0.5);
  CHECK(r.uar == 0.625);
  CHECK(r.precision == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(std::abs(r.f1 - 0.666667) < 1e-6);
  CHECK_FALSE(r.degenerate);

  const auto p = classification_report(ConfusionCounts{4, 0, 6, 0});
  CHECK(p.uar == 1.0);
  CHECK(p.f1 == 1.0);

  const auto d = classification_report(ConfusionCounts{0, 0, 5, 3});
  CHECK(d.precision == 0.0);
  CHECK(d.f1 == 0.0);
  CHECK(d.degenerate);
}

TEST_CASE("classification report matches a brute-force oracle over 1000 trials") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.engine()() % 199;
    const double p_label = rng.uniform(0.0, 1.0), p_pred = rng.uniform(0.0, 1.0);
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform(0.0, 1.0) < p_label;
      preds[i] = rng.uniform(0.0, 1.0) < p_pred;
    }
    const auto got = classification_report(confusion_counts(preds, labels));
    const Oracle want = brute_force(preds, labels);
    CHECK(got.uar == want.uar);
    CHECK(got.f1 == want.f1);
    CHECK(got.specificity == want.specificity);
    CHECK(got.sensitivity == want.sensitivity);
    CHECK(got.precision == want.precision);
    CHECK(got.uar == (got.specificity + got.sensitivity) / 2.0);
  }
}

TEST_CASE("UAR is invariant under duplicating every sample") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.engine()() % 50;
    std::vector<int> preds(n), labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng.engine()() % 2);
      preds[i] = static_cast<int>(rng.engine()() % 2);
    }
    auto p2 = preds, l2 = labels;
    p2.insert(p2.end(), preds.begin(), preds.end());
    l2.insert(l2.end(), labels.begin(), labels.end());
    CHECK(classification_report(confusion_counts(preds, labels)).uar ==
          classification_report(confusion_counts(p2, l2)).uar);
  }
}

TEST_CASE("regression report examples") {
  const std::vector<double> y{1, 2, 3};
  const auto exact = regression_report(y, y);
  CHECK(exact.rmse == 0.0);
  CHECK(exact.r2 == 1.0);

  CHECK(regression_report(std::vector<double>{3, 4}, std::vector<double>{1, 2}).rmse == 2.0);

  const auto r = regression_report(std::vector<double>{1.5, 2, 2.5}, y);
  CHECK(r.rmse == doctest::Approx(std::sqrt(0.5 / 3.0)).epsilon(1e-14));
  CHECK(std::abs(r.rmse - 0.40825) < 1e-5);
  CHECK(r.r2 == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(r.target_mean == 2.0);
  // Alternative denominator: sum (yhat - ybar)^2 = 0.5, so 1 - 0.5 / 0.5.
  CHECK(r.r2_predicted == doctest::Approx(0.0));

  const std::vector<double> flat{2, 2, 2};
  CHECK(regression_report(y, flat).r2_undefined);
  CHECK_THROWS_AS(regression_report(std::vector<double>{1}, std::vector<double>{1}), ContractError);
  CHECK_THROWS_AS(regression_report(std::vector<double>{1, 2}, std::vector<double>{1}), DimensionError);
}

TEST_CASE("regression report matches the closed forms over random sets") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.engine()() % 199;
    std::vector<double> y(n), yhat(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(0.0, 30.0);
      yhat[i] = y[i] + rng.normal(0.0, 3.0);
    }
    long double mean = 0.0L;
    for (double v : y) mean += v;
    mean /= static_cast<long double>(n);
    long double ss_res = 0.0L, ss_tot = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      ss_res += (static_cast<long double>(yhat[i]) - y[i]) * (static_cast<long double>(yhat[i]) - y[i]);
      ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    const auto r = regression_report(yhat, y);
    CHECK(std::abs(r.rmse - static_cast<double>(std::sqrt(ss_res / n))) <= 1e-12);
    CHECK(std::abs(r.r2 - static_cast<double>(1.0L - ss_res / ss_tot)) <= 1e-12);
    CHECK(r.r2 <= 1.0);
  }
}

TEST_CASE("RMSE is invariant under a common permutation") {
  Rng rng(3);
  std::vector<double> y(40), yhat(40);
  for (std::size_t i = 0; i < 40; ++i) {
    y[i] = rng.uniform(0.0, 30.0);
    yhat[i] = rng.uniform(0.0, 30.0);
  }
  const double base = regression_report(yhat, y).rmse;
  std::vector<std::size_t> idx(40);
  for (std::size_t i = 0; i < 40; ++i) idx[i] = i;
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(idx);
    std::vector<double> py, pyhat;
    for (std::size_t i : idx) {
      py.push_back(y[i]);
      pyhat.push_back(yhat[i]);
    }
    CHECK(regression_report(pyhat, py).rmse == doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("predicted class and probability") {
  CHECK(predicted_class(std::vector<double>{0.0, 1.0}) == 1);
  CHECK(predicted_class(std::vector<double>{1.0, 0.0}) == 0);
  CHECK(predicted_class(std::vector<double>{0.25, 0.25}) == 0);
  CHECK(positive_probability(std::vector<double>{0.0, 0.0}) == 0.5);
  CHECK(positive_probability(std::vector<double>{0.0, std::log(3.0)}) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("per-subject aggregation examples") {
  const std::vector<std::string> s{"a", "a", "a"};
  auto agg = aggregate_scores(s, std::vector<double>{0.2, 0.9, 0.7}, TaskKind::classification);
  CHECK(agg.scores[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(agg.classes == std::vector<int>{1, 1, 1});

  agg = aggregate_scores(s, std::vector<double>{0.5, 0.5, 0.5}, TaskKind::classification);
  CHECK(agg.classes == std::vector<int>{0, 0, 0});

  agg = aggregate_scores(s, std::vector<double>{22, 24, 26}, TaskKind::regression);
  CHECK(agg.scores == std::vector<double>{24.0, 24.0, 24.0});
  CHECK(agg.classes.empty());

  CHECK_THROWS_AS(aggregate_scores(std::vector<std::string>{"a", "a"}, std::vector<double>{0.1, 0.2},
                                   TaskKind::classification),
                  IntegrityError);
}

TEST_CASE("aggregation from logits uses softmax probabilities") {
  const std::vector<std::string> s{"a", "a", "a", "b", "b", "b"};
  // Probabilities 0.2, 0.9, 0.7 for a; 0.5 for b.
  auto logit = [](double p) { return std::vector<double>{0.0, std::log(p / (1.0 - p))}; };
  const std::vector<std::vector<double>> out{logit(0.2), logit(0.9), logit(0.7), logit(0.5), logit(0.5), logit(0.5)};
  const auto agg = aggregate_per_subject(s, out, TaskKind::classification);
  CHECK(agg.classes == std::vector<int>{1, 1, 1, 0, 0, 0});
}

TEST_CASE("aggregation is invariant under reordering within a subject") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> subjects;
    std::vector<double> scores;
    for (int s = 0; s < 6; ++s)
      for (int k = 0; k < 3; ++k) {
        subjects.push_back("S" + std::to_string(s));
        scores.push_back(rng.uniform(0.0, 1.0));
      }
    const auto base = aggregate_scores(subjects, scores, TaskKind::classification);
    auto shuffled = scores;
    for (std::size_t s = 0; s < 6; ++s) {
      std::vector<double> part(shuffled.begin() + s * 3, shuffled.begin() + s * 3 + 3);
      rng.shuffle(part);
      std::copy(part.begin(), part.end(), shuffled.begin() + s * 3);
    }
    const auto again = aggregate_scores(subjects, shuffled, TaskKind::classification);
    CHECK(again.classes == base.classes);
    for (std::size_t i = 0; i < scores.size(); ++i) CHECK(again.scores[i] == doctest::Approx(base.scores[i]).epsilon(1e-15));
  }
}

TEST_CASE("fold summaries") {
  const MetricRow a{{"uar", 0.7}}, b{{"uar", 0.8}};
  auto s = summarize_folds({a, b});
  CHECK(s[0].first == "uar");
  CHECK(s[0].second.mean == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s[0].second.sd == doctest::Approx(0.05).epsilon(1e-12));

  s = summarize_folds({a, a, a});
  CHECK(s[0].second.sd == 0.0);
  CHECK_THROWS_AS(summarize_folds({a}), ContractError);
}

TEST_CASE("rows carry exactly the table metrics for the task") {
  std::vector<std::string> names;
  for (const auto& [n, v] : to_row(ClassificationReport{})) names.push_back(n);
  CHECK(names == std::vector<std::string>{"uar", "f1", "specificity", "sensitivity", "precision"});
  names.clear();
  for (const auto& [n, v] : to_row(RegressionReport{})) names.push_back(n);
  CHECK(names == std::vector<std::string>{"rmse", "r2"});
}

TEST_CASE("report serialization") {
  CrossvalReport r;
  r.task = TaskKind::classification;
  r.variant = "text";
  r.folds = {to_row(classification_report({3, 2, 2, 1})), to_row(classification_report({4, 0, 6, 0}))};
  r.summary = summarize_folds(r.folds);
  const auto doc = r.to_json();
  CHECK(doc.at("folds").size() == 2);
  CHECK(doc.at("folds")[1].at("fold") == 1);
  CHECK(doc.at("summary").at("uar").at("mean") == doctest::Approx(0.8125));
  CHECK(doc.at("aggregation") == "sample");
  CHECK(CrossvalReport::from_json(doc).to_json() == doc);

  const std::string csv = r.to_csv();
  CHECK(csv.rfind("task,variant,aggregation,fold,uar,f1,specificity,sensitivity,precision\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("markdown table follows the column order") {
  CrossvalReport cls;
  cls.variant = "multimodal";
  cls.folds = {to_row(classification_report({3, 2, 2, 1})), to_row(classification_report({3, 2, 2, 1}))};
  cls.summary = summarize_folds(cls.folds);
  CrossvalReport reg;
  reg.task = TaskKind::regression;
  reg.variant = "multimodal";
  reg.folds = {MetricRow{{"rmse", 2.0}, {"r2", 0.5}}, MetricRow{{"rmse", 3.0}, {"r2", 0.3}}};
  reg.summary = summarize_folds(reg.folds);
  const std::string md = render_markdown({cls, reg});
  CHECK(md.find("| Model | UAR | F1 | σ | ρ | π | RMSE | R² |") == 0);
  CHECK(md.find("| multimodal | 62.50 ± 0.00 | 66.67 ± 0.00 | 50.00 ± 0.00 | 75.00 ± 0.00 | 60.00 ± 0.00 | 2.50 ± 0.50 | "
                "0.40 ± 0.10 |") != std::string::npos);
  cls.aggregation = "subject";
  CHECK(render_markdown({cls}).find("| multimodal* |") != std::string::npos);
}

}  // TEST_SUITE
