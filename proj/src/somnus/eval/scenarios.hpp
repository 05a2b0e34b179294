#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "somnus/eval/metrics.hpp"
#include "somnus/eval/probe.hpp"
#include "somnus/model/fusion.hpp"
#include "somnus/model/tcm.hpp"

namespace somnus::eval {

// Per-epoch pooled features plus labels for one split. stage is -1 where the
// epoch is unscored; event labels are 0/1. subject/epoch_index identify rows.
struct LabeledFeatures {
  Eigen::MatrixXd x;
  std::vector<int> stage;
  std::vector<int> apnea, hypopnea;
  std::vector<std::string> subject;
  std::vector<int> epoch_index;
};

struct TaskReport {
  MetricsReport metrics;
  std::vector<int> truth, pred;          // evaluated rows only
  std::vector<std::string> subject;      // parallel to truth/pred
  std::vector<int> epoch_index;
  std::vector<double> train_losses;      // mean loss per training epoch
};

using ScenarioResult = std::map<std::string, TaskReport>;

// Column-wise mean over every fused token of one epoch; the representation
// all downstream heads consume.
Eigen::RowVectorXd pooled_feature(const model::FusionModel& m,
                                  const std::vector<nn::Mat>& frames_per_stream);

struct Scenario1Config {
  int epochs = 150;
  long batch = 512;
  double lr = 2e-4;
  uint64_t seed = 0;
  std::vector<std::string> tasks = {"stage", "apnea", "hypopnea"};
};

// Linear probes over frozen pooled features. The model itself is only
// consulted to verify the freeze contract: every parameter must be
// non-trainable or the call fails with a contract violation.
ScenarioResult run_scenario1(model::FusionModel& m, const LabeledFeatures& train,
                             const LabeledFeatures& test,
                             const Scenario1Config& cfg);

// One subject's chronological epochs, cached as inputs to the final fusion
// block so training only re-runs the last block. train_mask (when nonempty)
// restricts which epochs may serve as training targets; context windows may
// still pass through unselected neighbors.
struct SubjectBlockCache {
  std::string id;
  std::vector<nn::Mat> block_inputs;
  std::vector<int> stage, apnea, hypopnea;
  std::vector<uint8_t> train_mask;
};

struct Scenario2Config {
  int epochs = 50;
  long batch = 128;
  double lr = 2.5e-4;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  model::TcmConfig tcm;
  std::vector<std::string> tasks = {"stage", "apnea", "hypopnea"};
};

// Sequence fine-tuning: unfreezes exactly the attention output projection of
// the final fusion block and trains it jointly with a fresh temporal context
// model per task. Every other model parameter is audited for zero drift and
// the projection is restored afterwards, so tasks and callers always see the
// pretrained state.
ScenarioResult run_scenario2(model::FusionModel& m,
                             const std::vector<SubjectBlockCache>& train,
                             const std::vector<SubjectBlockCache>& test,
                             const Scenario2Config& cfg);

struct Scenario3Config {
  double label_fraction = 0.05;
  uint64_t seed = 0;
  Scenario1Config s1;
  Scenario2Config s2;
};

struct Scenario3Result {
  ScenarioResult s1, s2;
  std::vector<size_t> selected;  // row indices into the train features
};

// Semi-supervised variant: subsamples the stage-labeled train rows (whole
// subjects first, then a stratified remainder), then runs both pipelines with
// only the selected epochs as supervised targets.
Scenario3Result run_scenario3(model::FusionModel& m,
                              const LabeledFeatures& f_train,
                              const LabeledFeatures& f_test,
                              const std::vector<SubjectBlockCache>& c_train,
                              const std::vector<SubjectBlockCache>& c_test,
                              const Scenario3Config& cfg);

}  // namespace somnus::eval
