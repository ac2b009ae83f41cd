#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "faircl/datastream.hpp"
#include "faircl/model.hpp"

namespace faircl {

/// Thrown when a metric has no defined value (e.g. single-class inputs),
/// so degeneracy is never silently reported as 0.
class undefined_metric_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rank-statistic ROC AUC with the 0.5-per-tied-pair convention
/// (equivalently average ranks). Requires >=1 positive and >=1 negative.
double roc_auc(const Eigen::Ref<const Vector<double>>& scores,
               const Eigen::Ref<const Vector<double>>& truths);

/// F1 of the classifier (score >= t); 0 when 2TP+FP+FN == 0.
double f1_at_threshold(const Eigen::Ref<const Vector<double>>& scores,
                       const Eigen::Ref<const Vector<double>>& truths, double threshold);

struct ThresholdSearchResult {
  double threshold = 0.5;
  double f1 = 0.0;
};

/// Exhaustive search over {0, 1} + distinct scores + midpoints of consecutive
/// distinct scores; ties broken by the smallest threshold.
ThresholdSearchResult best_f1_threshold(const Eigen::Ref<const Vector<double>>& scores,
                                        const Eigen::Ref<const Vector<double>>& truths);

/// Fraction of the group's positives with score >= threshold.
double tpr_for_group(const Eigen::Ref<const Vector<double>>& scores,
                     const Eigen::Ref<const Vector<double>>& truths, const ArrayXb& group_mask,
                     double threshold, const std::string& group_name = "group");

enum class Grouping { gender, age };

/// TPR(advantaged) - TPR(disadvantaged) on the given test set:
/// gender is male - female, age is (0-20) - (60-80).
double eo_for_pathology(std::span<const Sample> test_set, int label_index,
                        const Eigen::Ref<const Vector<double>>& scores, double threshold,
                        Grouping grouping);

/// Per-pathology binarization thresholds, tagged with the origin task whose
/// validation set produced them.
struct ThresholdEntry {
  int label_index = 0;
  std::string label_name;
  int origin_task = 0;
  double threshold = 0.5;
  double f1 = 0.0;
  bool fallback = false;  // validation set had no positives; 0.5 used
};

struct ThresholdTable {
  std::vector<ThresholdEntry> entries;

  const ThresholdEntry* find(int label_index) const {
    for (const auto& e : entries)
      if (e.label_index == label_index) return &e;
    return nullptr;
  }
};

struct PathologyMetrics {
  int label_index = 0;
  std::string name;
  int origin_task = 0;
  std::optional<double> auc;
  double threshold = 0.5;
  bool threshold_fallback = false;
  std::optional<double> tpr_male, tpr_female;
  std::array<std::optional<double>, kNumAgeGroups> tpr_age;
  std::optional<double> gender_eo;  // male - female
  std::optional<double> age_eo;     // (0-20) - (60-80)
  std::vector<std::string> exclusions;
};

/// Metrics after finishing task `upto_task`: per-pathology values on the
/// pathology's origin-task test set plus arithmetic means over everything
/// seen so far (degenerate pathologies excluded and flagged).
struct MetricReport {
  int upto_task = 0;
  std::vector<PathologyMetrics> pathologies;
  std::optional<double> avg_auc;
  std::optional<double> avg_gender_eo;
  std::optional<double> avg_age_eo;
  std::optional<double> avg_tpr_male, avg_tpr_female;
  std::array<std::optional<double>, kNumAgeGroups> avg_tpr_age;
  std::vector<std::string> notes;
};

MetricReport evaluate_checkpoint(const Mlp<double>& model, const TaskStream& stream,
                                 int upto_task, const ThresholdTable& thresholds);

}  // namespace faircl
