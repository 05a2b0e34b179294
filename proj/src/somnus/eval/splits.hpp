#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace somnus::eval {

struct SplitFold {
  std::vector<std::string> pretrain_subjects;
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

struct SplitPlan {
  int fold_count = 0;
  std::vector<SplitFold> folds;
};

// Deterministic subject-level cross-validation plan. The test role rotates so
// every subject is tested exactly once; the rest of each fold is split into a
// large pretrain set and a small labeled train set by pretrain_ratio.
SplitPlan make_splits(std::vector<std::string> subject_ids, int fold_count,
                      uint64_t seed, double pretrain_ratio = 0.8);

struct LabeledEpochRef {
  std::string subject;
  int label = 0;
};

// Selects floor(fraction * n) epochs for semi-supervised training: whole
// subjects first, then a class-stratified remainder drawn from one more
// subject. If an observed class would be absent, single epochs are swapped in
// from inside already-touched subjects (with a warning).
std::vector<size_t> label_fraction_subset(
    const std::vector<LabeledEpochRef>& epochs, double fraction, uint64_t seed);

}  // namespace somnus::eval
