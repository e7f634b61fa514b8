#include "damnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace damnet {

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw std::invalid_argument("confusion: empty input");
  ConfusionMatrix cm;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1))
      throw std::invalid_argument("confusion: values must be in {0, 1}");
    if (y == 1)
      (p == 1 ? cm.tp : cm.fn) += 1;
    else
      (p == 1 ? cm.fp : cm.tn) += 1;
  }
  return cm;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw std::invalid_argument("roc_auc: scores and labels must be equal-length and nonempty");
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");

  // rank-sum with average ranks for ties
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<RocPoint> roc_points(const std::vector<double>& scores, const std::vector<int>& labels) {
  int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_points: both classes must be present");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> pts;
  pts.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos), thr});
  }
  return pts;
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_roc_csv: cannot open '" + path + "'");
  f << "fpr,tpr,threshold\n";
  for (const RocPoint& p : points) f << p.fpr << "," << p.tpr << "," << p.threshold << "\n";
}

MetricsReport aggregate_cv(const std::vector<MetricsReport>& folds) {
  if (folds.size() < 2) throw std::invalid_argument("aggregate_cv: need >= 2 folds, got " + std::to_string(folds.size()));
  auto mean_std = [&](auto getter, double& mean, double& stddev) {
    double s = 0.0;
    for (const MetricsReport& f : folds) s += getter(f);
    mean = s / static_cast<double>(folds.size());
    double sq = 0.0;
    for (const MetricsReport& f : folds) {
      const double d = getter(f) - mean;
      sq += d * d;
    }
    stddev = std::sqrt(sq / static_cast<double>(folds.size() - 1));
  };
  MetricsReport out;
  out.folds = folds;
  out.has_std = true;
  out.dataset_tag = folds.front().dataset_tag;
  for (const MetricsReport& f : folds) out.n += f.n;
  mean_std([](const MetricsReport& f) { return f.accuracy; }, out.accuracy, out.accuracy_std);
  mean_std([](const MetricsReport& f) { return f.sensitivity; }, out.sensitivity, out.sensitivity_std);
  mean_std([](const MetricsReport& f) { return f.specificity; }, out.specificity, out.specificity_std);
  mean_std([](const MetricsReport& f) { return f.auc; }, out.auc, out.auc_std);
  return out;
}

static json report_json(const MetricsReport& r) {
  json j = {{"dataset_tag", r.dataset_tag}, {"n", r.n},           {"accuracy", r.accuracy},
            {"sensitivity", r.sensitivity}, {"specificity", r.specificity}, {"auc", r.auc}};
  j["folds"] = json::array();
  for (const MetricsReport& f : r.folds) j["folds"].push_back(report_json(f));
  if (r.has_std)
    j["std"] = {{"accuracy", r.accuracy_std},
                {"sensitivity", r.sensitivity_std},
                {"specificity", r.specificity_std},
                {"auc", r.auc_std}};
  return j;
}

std::string render_report(const MetricsReport& r, ReportStyle style) {
  if (style == ReportStyle::json) return report_json(r).dump(2);
  char buf[256];
  std::string out = "Acc (%)  Sen (%)  Spec (%)  AUC\n";
  std::snprintf(buf, sizeof(buf), "%7.2f  %7.2f  %8.2f  %5.3f\n", 100.0 * r.accuracy, 100.0 * r.sensitivity,
                100.0 * r.specificity, r.auc);
  out += buf;
  if (r.has_std) {
    std::snprintf(buf, sizeof(buf), "±%6.2f  ±%6.2f  ±%7.2f  ±%.3f\n", 100.0 * r.accuracy_std,
                  100.0 * r.sensitivity_std, 100.0 * r.specificity_std, r.auc_std);
    out += buf;
  }
  return out;
}

}  // namespace damnet
