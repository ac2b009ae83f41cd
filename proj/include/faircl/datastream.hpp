#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "faircl/model.hpp"

namespace faircl {

enum class Sex { male, female };

enum class AgeGroup { a0_20 = 0, a20_40 = 1, a40_60 = 2, a60_80 = 3 };

inline constexpr int kNumAgeGroups = 4;
inline constexpr std::array<std::string_view, kNumAgeGroups> kAgeGroupTokens{
    "0-20", "20-40", "40-60", "60-80"};

std::string_view to_token(Sex sex);
std::string_view to_token(AgeGroup group);
Sex parse_sex(std::string_view token, const std::string& context);
AgeGroup parse_age_group(std::string_view token, const std::string& context);

/// One labeled record. label_values holds the full ground truth; label_known
/// is all-true at ingestion and becomes the task-time mask inside a stream.
struct Sample {
  std::string sample_id;
  std::string patient_id;
  Sex sex = Sex::male;
  AgeGroup age_group = AgeGroup::a0_20;
  Vector<double> features;
  Vector<double> label_values;
  ArrayXb label_known;
};

struct Dataset {
  std::vector<std::string> label_names;
  Eigen::Index feature_dim = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

/// CSV schema: sample_id,patient_id,sex,age_group,f0..f{D-1},L:<name>...
Dataset load_manifest(const std::filesystem::path& path);
void write_manifest(const Dataset& dataset, const std::filesystem::path& path);

/// Keeps exactly one sample per patient, chosen uniformly at random.
Dataset keep_one_image_per_patient(const Dataset& dataset, std::uint64_t seed);

/// Drops samples that are not associated with any pathology (all labels 0).
Dataset exclude_no_finding(const Dataset& dataset);

struct TaskSpec {
  int task_index = 0;
  std::vector<std::string> pathologies;
};

/// Text format: one task per line, pathology names comma-separated.
std::vector<TaskSpec> load_task_specs(const std::filesystem::path& path);
void write_task_specs(const std::vector<TaskSpec>& specs, const std::filesystem::path& path);

/// Evenly partitions labels into tasks of 2-3 pathologies (larger tasks first).
std::vector<TaskSpec> default_task_partition(const std::vector<std::string>& label_names,
                                             int num_tasks);

struct TaskData {
  TaskSpec spec;
  std::vector<int> label_indices;  // stream indices of this task's pathologies
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

/// Ordered task stream. Sample label vectors are permuted to stream order
/// (labels indexed by first task appearance); each task's copies carry the
/// task-time mask in label_known while label_values keeps full ground truth.
struct TaskStream {
  std::vector<TaskData> tasks;
  std::vector<std::string> label_names;   // stream order
  std::vector<int> origin_task;           // per stream label
  Eigen::Index feature_dim = 0;
  std::size_t source_dataset_size = 0;    // post-filter size; replay capacity base
  std::vector<Eigen::Index> head_sizes;   // labels covered after each task

  int num_labels() const { return static_cast<int>(label_names.size()); }
  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

/// Task j holds every sample positive for at least one of its pathologies,
/// masked to those pathologies; splits are patient-disjoint and consistent
/// across tasks (a patient keeps the same split everywhere).
TaskStream build_task_stream(const Dataset& dataset, const std::vector<TaskSpec>& specs,
                             const std::array<double, 3>& split_ratios, std::uint64_t seed);

struct TaskFrequency {
  int task_index = 0;
  std::size_t num_samples = 0;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  std::vector<std::size_t> visible_positives;  // per stream label; 0 off-task
  std::vector<std::size_t> hidden_positives;   // per stream label; 0 on-task
  std::array<std::size_t, 2> sex_counts{};     // male, female
  std::array<std::size_t, kNumAgeGroups> age_counts{};
};

struct TaskFrequencyReport {
  std::vector<std::string> label_names;
  std::vector<TaskFrequency> tasks;
};

TaskFrequencyReport task_frequency_report(const TaskStream& stream);
std::string render_report(const TaskFrequencyReport& report);

/// Desk-scale generator. Every label gets a standard-basis direction (mutually
/// orthogonal); a sample positive for label m receives signal_strength * g
/// along that axis, g = sex scale * age scale, plus N(0, noise_std^2) noise.
/// Unequal group scales induce group-dependent separability and hence EO gaps.
struct SyntheticConfig {
  int num_labels = 10;
  int num_tasks = 5;
  int samples_per_label = 60;
  Eigen::Index feature_dim = 16;
  double signal_strength = 3.0;
  double noise_std = 1.0;
  double label_correlation = 0.1;  // chance each off-primary label is also positive
  double male_fraction = 0.5;
  std::array<double, kNumAgeGroups> age_frequencies{0.25, 0.25, 0.25, 0.25};
  double male_scale = 1.0;
  double female_scale = 1.0;
  std::array<double, kNumAgeGroups> age_scales{1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  std::vector<std::string> label_names;  // optional; default L00, L01, ...
};

Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace faircl
