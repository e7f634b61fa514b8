#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace damnet {

// Positive class is 1.
struct ConfusionMatrix {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  int64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const { return static_cast<double>(tp + tn) / static_cast<double>(total()); }
  double sensitivity() const { return static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double specificity() const { return static_cast<double>(tn) / static_cast<double>(tn + fp); }
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels);

// Mann-Whitney AUC: pairs with tied scores get half credit. Throws when only
// one class is present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RocPoint {
  double fpr, tpr, threshold;
};

// ROC staircase from (0,0) to (1,1), thresholds descending.
std::vector<RocPoint> roc_points(const std::vector<double>& scores, const std::vector<int>& labels);

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points);

struct MetricsReport {
  std::string dataset_tag;
  int64_t n = 0;
  double accuracy = 0, sensitivity = 0, specificity = 0, auc = 0;
  std::vector<MetricsReport> folds;  // per-fold reports when produced by CV
  bool has_std = false;              // set by aggregate_cv
  double accuracy_std = 0, sensitivity_std = 0, specificity_std = 0, auc_std = 0;
};

// Unweighted mean and sample (n-1) standard deviation across folds.
MetricsReport aggregate_cv(const std::vector<MetricsReport>& folds);

enum class ReportStyle { table, json };

// table: Acc/Sen/Spec as percentages to two decimals (plus AUC as a
// fraction); json: machine-readable fractions.
std::string render_report(const MetricsReport& r, ReportStyle style);

}  // namespace damnet
