#include "faircl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace faircl {

namespace {

void check_scored_set(const Eigen::Ref<const Vector<double>>& scores,
                      const Eigen::Ref<const Vector<double>>& truths) {
  if (scores.size() != truths.size())
    throw std::invalid_argument("scores and truths must have equal length");
  for (Eigen::Index i = 0; i < truths.size(); ++i)
    if (truths[i] != 0.0 && truths[i] != 1.0)
      throw std::invalid_argument("truths must be binary (0 or 1)");
}

}  // namespace

double roc_auc(const Eigen::Ref<const Vector<double>>& scores,
               const Eigen::Ref<const Vector<double>>& truths) {
  check_scored_set(scores, truths);
  const Eigen::Index n = scores.size();
  Eigen::Index positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) positives += truths[i] == 1.0;
  const Eigen::Index negatives = n - positives;
  if (positives == 0 || negatives == 0)
    throw undefined_metric_error("roc_auc undefined: need at least one positive and one negative");

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });

  double positive_rank_sum = 0.0;
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j - 1) + 1.0;  // 1-based
    for (Eigen::Index k = i; k < j; ++k)
      if (truths[order[k]] == 1.0) positive_rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

double f1_at_threshold(const Eigen::Ref<const Vector<double>>& scores,
                       const Eigen::Ref<const Vector<double>>& truths, double threshold) {
  check_scored_set(scores, truths);
  Eigen::Index tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = truths[i] == 1.0;
    tp += predicted && actual;
    fp += predicted && !actual;
    fn += !predicted && actual;
  }
  const Eigen::Index denom = 2 * tp + fp + fn;
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ThresholdSearchResult best_f1_threshold(const Eigen::Ref<const Vector<double>>& scores,
                                        const Eigen::Ref<const Vector<double>>& truths) {
  check_scored_set(scores, truths);
  if ((truths.array() == 1.0).count() == 0)
    throw undefined_metric_error("best_f1_threshold undefined: no positive samples");

  std::vector<double> distinct(scores.data(), scores.data() + scores.size());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  std::vector<double> candidates{0.0, 1.0};
  candidates.insert(candidates.end(), distinct.begin(), distinct.end());
  for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
    candidates.push_back(0.5 * (distinct[i] + distinct[i + 1]));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  ThresholdSearchResult best{candidates.front(), -1.0};
  for (double t : candidates) {
    const double f1 = f1_at_threshold(scores, truths, t);
    if (f1 > best.f1) best = {t, f1};  // ascending scan keeps the smallest optimum
  }
  return best;
}

double tpr_for_group(const Eigen::Ref<const Vector<double>>& scores,
                     const Eigen::Ref<const Vector<double>>& truths, const ArrayXb& group_mask,
                     double threshold, const std::string& group_name) {
  check_scored_set(scores, truths);
  if (group_mask.size() != scores.size())
    throw std::invalid_argument("tpr_for_group: group mask length mismatch");
  Eigen::Index positives = 0, hits = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!group_mask[i] || truths[i] != 1.0) continue;
    ++positives;
    hits += scores[i] >= threshold;
  }
  if (positives == 0)
    throw undefined_metric_error("tpr undefined for group '" + group_name +
                                 "': no positive samples");
  return static_cast<double>(hits) / static_cast<double>(positives);
}

double eo_for_pathology(std::span<const Sample> test_set, int label_index,
                        const Eigen::Ref<const Vector<double>>& scores, double threshold,
                        Grouping grouping) {
  const auto n = static_cast<Eigen::Index>(test_set.size());
  if (scores.size() != n) throw std::invalid_argument("eo_for_pathology: score length mismatch");
  Vector<double> truths(n);
  ArrayXb advantaged(n), disadvantaged(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Sample& s = test_set[static_cast<std::size_t>(i)];
    truths[i] = s.label_values[label_index];
    if (grouping == Grouping::gender) {
      advantaged[i] = s.sex == Sex::male;
      disadvantaged[i] = s.sex == Sex::female;
    } else {
      advantaged[i] = s.age_group == AgeGroup::a0_20;
      disadvantaged[i] = s.age_group == AgeGroup::a60_80;
    }
  }
  const char* adv_name = grouping == Grouping::gender ? "male" : "age 0-20";
  const char* dis_name = grouping == Grouping::gender ? "female" : "age 60-80";
  const double tpr_adv = tpr_for_group(scores, truths, advantaged, threshold, adv_name);
  const double tpr_dis = tpr_for_group(scores, truths, disadvantaged, threshold, dis_name);
  return tpr_adv - tpr_dis;
}

namespace {

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

MetricReport evaluate_checkpoint(const Mlp<double>& model, const TaskStream& stream,
                                 int upto_task, const ThresholdTable& thresholds) {
  if (upto_task < 0 || upto_task >= stream.num_tasks())
    throw std::invalid_argument("evaluate_checkpoint: task index out of range");
  const Eigen::Index seen = stream.head_sizes[upto_task];
  if (model.num_outputs() < seen)
    throw std::invalid_argument("evaluate_checkpoint: model head does not cover seen labels");

  MetricReport report;
  report.upto_task = upto_task;
  report.notes.push_back(
      "binarization: per-pathology max-F1 threshold from the origin task's validation set");

  // Score each origin task's test set once.
  std::vector<Matrix<double>> task_scores(static_cast<std::size_t>(upto_task) + 1);
  for (int k = 0; k <= upto_task; ++k) {
    const auto& test = stream.tasks[k].test;
    Matrix<double> features(static_cast<Eigen::Index>(test.size()), stream.feature_dim);
    for (std::size_t i = 0; i < test.size(); ++i)
      features.row(static_cast<Eigen::Index>(i)) = test[i].features.transpose();
    task_scores[k] = test.empty() ? Matrix<double>(0, model.num_outputs())
                                  : forward_batch(model, features);
  }

  std::vector<double> aucs, gender_eos, age_eos, tprs_male, tprs_female;
  std::array<std::vector<double>, kNumAgeGroups> tprs_age;

  for (Eigen::Index label = 0; label < seen; ++label) {
    PathologyMetrics pm;
    pm.label_index = static_cast<int>(label);
    pm.name = stream.label_names[static_cast<std::size_t>(label)];
    pm.origin_task = stream.origin_task[static_cast<std::size_t>(label)];
    const auto& test = stream.tasks[pm.origin_task].test;
    const auto n = static_cast<Eigen::Index>(test.size());
    Vector<double> scores = task_scores[pm.origin_task].col(label);
    Vector<double> truths(n);
    for (Eigen::Index i = 0; i < n; ++i)
      truths[i] = test[static_cast<std::size_t>(i)].label_values[label];

    try {
      pm.auc = roc_auc(scores, truths);
      aucs.push_back(*pm.auc);
    } catch (const undefined_metric_error& e) {
      pm.exclusions.push_back(e.what());
    }

    const ThresholdEntry* entry = thresholds.find(pm.label_index);
    if (entry == nullptr) {
      pm.exclusions.push_back("no calibrated threshold; TPR/EO skipped");
      report.pathologies.push_back(std::move(pm));
      continue;
    }
    pm.threshold = entry->threshold;
    pm.threshold_fallback = entry->fallback;

    auto group_tpr = [&](const ArrayXb& mask, const std::string& name) -> std::optional<double> {
      try {
        return tpr_for_group(scores, truths, mask, pm.threshold, name);
      } catch (const undefined_metric_error& e) {
        pm.exclusions.push_back(e.what());
        return std::nullopt;
      }
    };
    ArrayXb male_mask(n), female_mask(n);
    std::array<ArrayXb, kNumAgeGroups> age_masks;
    for (auto& m : age_masks) m.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Sample& s = test[static_cast<std::size_t>(i)];
      male_mask[i] = s.sex == Sex::male;
      female_mask[i] = s.sex == Sex::female;
      for (int a = 0; a < kNumAgeGroups; ++a)
        age_masks[a][i] = static_cast<int>(s.age_group) == a;
    }
    pm.tpr_male = group_tpr(male_mask, "male");
    pm.tpr_female = group_tpr(female_mask, "female");
    for (int a = 0; a < kNumAgeGroups; ++a)
      pm.tpr_age[a] = group_tpr(age_masks[a], std::string(kAgeGroupTokens[a]));

    if (pm.tpr_male && pm.tpr_female) {
      pm.gender_eo = *pm.tpr_male - *pm.tpr_female;
      gender_eos.push_back(*pm.gender_eo);
    }
    if (pm.tpr_age[0] && pm.tpr_age[kNumAgeGroups - 1]) {
      pm.age_eo = *pm.tpr_age[0] - *pm.tpr_age[kNumAgeGroups - 1];
      age_eos.push_back(*pm.age_eo);
    }
    if (pm.tpr_male) tprs_male.push_back(*pm.tpr_male);
    if (pm.tpr_female) tprs_female.push_back(*pm.tpr_female);
    for (int a = 0; a < kNumAgeGroups; ++a)
      if (pm.tpr_age[a]) tprs_age[a].push_back(*pm.tpr_age[a]);

    report.pathologies.push_back(std::move(pm));
  }

  report.avg_auc = mean_of(aucs);
  report.avg_gender_eo = mean_of(gender_eos);
  report.avg_age_eo = mean_of(age_eos);
  report.avg_tpr_male = mean_of(tprs_male);
  report.avg_tpr_female = mean_of(tprs_female);
  for (int a = 0; a < kNumAgeGroups; ++a) report.avg_tpr_age[a] = mean_of(tprs_age[a]);
  return report;
}

}  // namespace faircl
