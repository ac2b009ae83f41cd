#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "faircl/datastream.hpp"
#include "faircl/metrics.hpp"
#include "faircl/model.hpp"

namespace faircl {

enum class StrategyName { fine_tune, replay, lwf, pseudo_label, lwf_replay, joint };

std::string to_string(StrategyName name);
StrategyName parse_strategy(const std::string& token);

struct StrategyConfig {
  StrategyName name = StrategyName::fine_tune;
  double eta = 0.05;
  int epochs = 20;
  int batch_size = 32;
  double tau_lwf = 2.0;          // weight of the distillation term
  double mix_ratio = 0.5;        // replayed fraction of each batch
  double buffer_fraction = 0.03; // of the post-filter dataset size
  std::vector<Eigen::Index> hidden_sizes{32};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Capacity-bounded rehearsal memory. `seen` accumulates every train set so
/// far (entries keep their origin-task masks); `entries` is the current
/// uniform subset of size min(capacity, |seen|).
struct ReplayBuffer {
  std::size_t capacity = 0;
  std::vector<Sample> seen;
  std::vector<Sample> entries;
};

ReplayBuffer make_replay_buffer(double buffer_fraction, std::size_t source_dataset_size);

/// Adds the task's train set to the seen pool, then resamples the buffer as a
/// uniform subset without replacement.
void update_buffer(ReplayBuffer& buffer, const std::vector<Sample>& task_train_set,
                   std::uint64_t seed);

struct ComposedBatch {
  std::vector<const Sample*> entries;
  ArrayXb from_current;  // false for replayed entries
};

/// ceil(mix_ratio * batch_size) buffer draws (without replacement when the
/// buffer is large enough, otherwise with), remainder taken in order from
/// `current`. An empty buffer yields an all-current batch.
ComposedBatch compose_replay_batch(std::span<const Sample* const> current,
                                   const ReplayBuffer& buffer, int batch_size, double mix_ratio,
                                   std::mt19937_64& rng);

/// Rows = features, targets sliced to the first `head` labels.
Batch<double> make_batch(std::span<const Sample* const> samples, Eigen::Index head);

/// Max-F1 thresholds for every pathology of tasks 0..upto_task, each searched
/// on its origin task's validation set; zero-positive sets fall back to 0.5
/// with the fallback flag set.
ThresholdTable calibrate_thresholds(const Mlp<double>& model, const TaskStream& stream,
                                    int upto_task);

/// Binarizes the teacher's old-label probabilities with the per-label
/// thresholds (>= gives 1) and merges them with each sample's own task
/// targets; the result is hard 0/1 and known on old + current labels.
std::vector<TargetVector<double>> pseudo_label_targets(const Mlp<double>& teacher,
                                                       const ThresholdTable& thresholds,
                                                       std::span<const Sample* const> batch,
                                                       Eigen::Index head);

void fine_tune_task(Mlp<double>& model, const TaskData& task, const StrategyConfig& config,
                    std::mt19937_64& rng);

void lwf_task(Mlp<double>& model, const Mlp<double>& teacher, const TaskData& task,
              const StrategyConfig& config, std::mt19937_64& rng);

void pseudo_label_task(Mlp<double>& model, const Mlp<double>& teacher,
                       const ThresholdTable& thresholds, const TaskData& task,
                       const StrategyConfig& config, std::mt19937_64& rng);

/// Masked BCE over composed replay batches; updates the buffer afterwards.
void replay_task(Mlp<double>& model, ReplayBuffer& buffer, const TaskData& task,
                 const StrategyConfig& config, std::mt19937_64& rng);

/// Replay batches plus tau * distillation on old labels for current-task
/// entries; teacher may be null on the first task. Updates the buffer.
void lwf_replay_task(Mlp<double>& model, const Mlp<double>* teacher, ReplayBuffer& buffer,
                     const TaskData& task, const StrategyConfig& config, std::mt19937_64& rng);

/// One training phase over the union of all task train sets; a sample present
/// in several tasks is supervised on the union of their masks.
void joint_train(Mlp<double>& model, const TaskStream& stream, const StrategyConfig& config,
                 std::mt19937_64& rng);

struct SequenceResult {
  Mlp<double> final_model;
  std::vector<Mlp<double>> checkpoints;       // one per task
  std::vector<ThresholdTable> thresholds;     // calibrated after each task
};

/// Runs the configured strategy over the stream: head expansion before each
/// new task, teacher snapshots (previous checkpoint) for lwf/pseudo_label/
/// lwf_replay, buffer maintenance for replay strategies, and per-task
/// threshold calibration. Joint trains once and replicates its checkpoint.
SequenceResult train_sequence(const StrategyConfig& config, const TaskStream& stream);

}  // namespace faircl
