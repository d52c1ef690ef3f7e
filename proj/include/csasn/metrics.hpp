#pragma once

// Binary classification metrics: rank AUC, ROC points, confusion counts.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csasn/error.hpp"
#include "csasn/sample.hpp"

namespace csasn {

inline void check_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw DimensionError("metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  for (double s : scores)
    if (!std::isfinite(s)) throw ConfigError("metrics: non-finite score");
  for (int y : labels)
    if (y != 0 && y != 1) throw ConfigError("metrics: labels must be 0 or 1");
}

// Mann-Whitney U / (n_pos * n_neg) with midranks for ties. Absent when only
// one class is present.
inline std::optional<double> auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank[idx[k]] = mid;
    i = j;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i]) {
      n_pos += 1;
      rank_sum += rank[i];
    }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

inline constexpr double kRocEpsilon = 1e-6;

// One point per distinct score (predict positive when score >= threshold),
// bracketed by (max+eps, 0, 0) and (min-eps, 1, 1).
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<int>& labels) {
  check_scores(scores, labels);
  if (scores.empty()) throw ConfigError("roc: empty predictions");
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  if (P == 0 || N == 0) throw ConfigError("roc: both classes are required");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{scores[idx.front()] + kRocEpsilon, 0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] ? tp : fp) += 1;
      ++i;
    }
    out.push_back({s, fp / N, tp / P});
  }
  out.push_back({scores[idx.back()] - kRocEpsilon, 1.0, 1.0});
  return out;
}

inline double trapezoid_auc(const std::vector<RocPoint>& roc) {
  double a = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    a += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  return a;
}

struct Confusion {
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
  std::size_t total() const { return tn + fp + fn + tp; }
};

inline Confusion confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                           double threshold = 0.5) {
  check_scores(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i]) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

struct TaskMetrics {
  std::optional<double> auc;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  Confusion confusion;
};

// Precision, recall and F1 are 0 when their denominator is 0.
inline TaskMetrics task_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                                double threshold = 0.5) {
  if (scores.empty()) throw ConfigError("metrics: empty evaluation set");
  TaskMetrics m;
  m.auc = auc(scores, labels);
  m.confusion = confusion(scores, labels, threshold);
  const auto& c = m.confusion;
  const double tp = static_cast<double>(c.tp);
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = c.tp + c.fp ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
  m.recall = c.tp + c.fn ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

struct MetricsReport {
  std::array<TaskMetrics, kNumTasks> tasks;
  std::optional<double> macro_auc;  // mean over tasks whose AUC is defined
};

inline MetricsReport metrics_report(const std::array<std::vector<double>, kNumTasks>& scores,
                                    const std::array<std::vector<int>, kNumTasks>& labels) {
  MetricsReport r;
  double s = 0;
  int n = 0;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    r.tasks[t] = task_metrics(scores[t], labels[t]);
    if (r.tasks[t].auc) {
      s += *r.tasks[t].auc;
      ++n;
    }
  }
  if (n) r.macro_auc = s / n;
  return r;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  for (std::size_t t = 0; t < kNumTasks; ++t) {
    const auto& m = r.tasks[t];
    const auto& c = m.confusion;
    j[std::string(to_string(kTaskSubtypes[t]))] = {
        {"auc", opt(m.auc)},
        {"accuracy", m.accuracy},
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"confusion", {{"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}, {"tp", c.tp}}}};
  }
  j["macro_auc"] = opt(r.macro_auc);
  return j;
}

}  // namespace csasn
