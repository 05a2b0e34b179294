#include "somnus/eval/splits.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "somnus/common.hpp"
#include "somnus/log.hpp"
#include "somnus/rng.hpp"

namespace somnus::eval {

SplitPlan make_splits(std::vector<std::string> subject_ids, int fold_count,
                      uint64_t seed, double pretrain_ratio) {
  std::sort(subject_ids.begin(), subject_ids.end());
  subject_ids.erase(std::unique(subject_ids.begin(), subject_ids.end()),
                    subject_ids.end());
  if (fold_count < 2) throw_invalid("fold_count must be at least 2");
  if (subject_ids.size() < static_cast<size_t>(fold_count))
    throw_invalid("need at least fold_count subjects");
  if (!(pretrain_ratio > 0.0 && pretrain_ratio < 1.0))
    throw_invalid("pretrain_ratio must lie in (0, 1)");

  Rng rng(derive_seed(seed, "splits"));
  rng.shuffle(subject_ids);

  SplitPlan plan;
  plan.fold_count = fold_count;
  for (int f = 0; f < fold_count; ++f) {
    SplitFold fold;
    std::vector<std::string> rest;
    for (size_t i = 0; i < subject_ids.size(); ++i) {
      if (static_cast<int>(i % static_cast<size_t>(fold_count)) == f)
        fold.test_subjects.push_back(subject_ids[i]);
      else
        rest.push_back(subject_ids[i]);
    }
    if (rest.size() < 2)
      throw_invalid("too few subjects to fill pretrain and train roles");
    const long train_n = std::clamp<long>(
        std::llround((1.0 - pretrain_ratio) * static_cast<double>(rest.size())),
        1, static_cast<long>(rest.size()) - 1);
    const size_t pre_n = rest.size() - static_cast<size_t>(train_n);
    fold.pretrain_subjects.assign(rest.begin(), rest.begin() + pre_n);
    fold.train_subjects.assign(rest.begin() + pre_n, rest.end());
    std::sort(fold.pretrain_subjects.begin(), fold.pretrain_subjects.end());
    std::sort(fold.train_subjects.begin(), fold.train_subjects.end());
    std::sort(fold.test_subjects.begin(), fold.test_subjects.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

namespace {

// Proportional per-class allocation of `need` picks with largest-remainder
// rounding; classes iterate in sorted order for determinism.
std::map<int, size_t> stratified_counts(const std::map<int, size_t>& avail,
                                        size_t need) {
  size_t total = 0;
  for (const auto& [cls, cnt] : avail) total += cnt;
  std::map<int, size_t> take;
  std::vector<std::pair<double, int>> remainders;
  size_t assigned = 0;
  for (const auto& [cls, cnt] : avail) {
    const double exact =
        static_cast<double>(need) * static_cast<double>(cnt) /
        static_cast<double>(total);
    const size_t base = static_cast<size_t>(std::floor(exact));
    take[cls] = std::min(base, cnt);
    assigned += take[cls];
    remainders.push_back({exact - std::floor(exact), cls});
  }
  std::sort(remainders.begin(), remainders.end(), [](auto& a, auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (const auto& [frac, cls] : remainders) {
    if (assigned >= need) break;
    if (take[cls] < avail.at(cls)) {
      ++take[cls];
      ++assigned;
    }
  }
  // top up from any class with spare epochs if rounding still fell short
  for (auto& [cls, cnt] : take) {
    while (assigned < need && cnt < avail.at(cls)) {
      ++cnt;
      ++assigned;
    }
  }
  return take;
}

}  // namespace

std::vector<size_t> label_fraction_subset(
    const std::vector<LabeledEpochRef>& epochs, double fraction,
    uint64_t seed) {
  if (epochs.empty()) throw_invalid("no labeled epochs to subsample");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw_invalid("label fraction must lie in (0, 1]");

  std::vector<size_t> all(epochs.size());
  for (size_t i = 0; i < epochs.size(); ++i) all[i] = i;
  if (fraction == 1.0) return all;

  const size_t target = static_cast<size_t>(
      std::floor(fraction * static_cast<double>(epochs.size())));
  if (target == 0)
    throw_invalid("label fraction selects zero epochs at this dataset size");

  // Subject order: first appearance, then seeded shuffle.
  std::vector<std::string> subjects;
  std::map<std::string, std::vector<size_t>> by_subject;
  for (size_t i = 0; i < epochs.size(); ++i) {
    auto [it, fresh] = by_subject.try_emplace(epochs[i].subject);
    if (fresh) subjects.push_back(epochs[i].subject);
    it->second.push_back(i);
  }
  Rng rng(derive_seed(seed, "label-fraction"));
  rng.shuffle(subjects);

  std::vector<bool> chosen(epochs.size(), false);
  size_t count = 0;
  std::vector<std::string> skipped;
  for (const auto& s : subjects) {
    const auto& idx = by_subject[s];
    if (count + idx.size() <= target) {
      for (size_t i : idx) chosen[i] = true;
      count += idx.size();
    } else {
      skipped.push_back(s);
    }
  }

  std::set<std::string> relaxed;
  if (count < target && !skipped.empty()) {
    // Fill the remainder from one more subject, stratified by class.
    const std::string& s = skipped.front();
    relaxed.insert(s);
    SOMNUS_WARN("label-fraction subsample splits subject '"
                << s << "' to hit the exact target");
    std::map<int, size_t> avail;
    std::map<int, std::vector<size_t>> pool;
    for (size_t i : by_subject[s]) {
      ++avail[epochs[i].label];
      pool[epochs[i].label].push_back(i);
    }
    const auto take = stratified_counts(avail, target - count);
    for (const auto& [cls, cnt] : take) {
      auto& ids = pool[cls];
      rng.shuffle(ids);
      for (size_t j = 0; j < cnt; ++j) {
        chosen[ids[j]] = true;
        ++count;
      }
    }
  }

  // Ensure every observed class appears, swapping single epochs when needed.
  std::map<int, size_t> full_counts, sel_counts;
  for (size_t i = 0; i < epochs.size(); ++i) {
    ++full_counts[epochs[i].label];
    if (chosen[i]) ++sel_counts[epochs[i].label];
  }
  for (const auto& [cls, cnt] : full_counts) {
    if (sel_counts[cls] > 0) continue;
    // victim: the best-represented selected class with more than one epoch
    int victim = -1;
    size_t victim_count = 1;
    for (const auto& [c2, n2] : sel_counts)
      if (n2 > victim_count) {
        victim = c2;
        victim_count = n2;
      }
    if (victim < 0) {
      SOMNUS_WARN("cannot represent class " << cls
                                            << " at this label fraction");
      continue;
    }
    size_t incoming = epochs.size(), outgoing = epochs.size();
    for (size_t i = 0; i < epochs.size() && incoming == epochs.size(); ++i)
      if (!chosen[i] && epochs[i].label == cls) incoming = i;
    for (size_t i = 0; i < epochs.size() && outgoing == epochs.size(); ++i)
      if (chosen[i] && epochs[i].label == victim) outgoing = i;
    chosen[incoming] = true;
    chosen[outgoing] = false;
    ++sel_counts[cls];
    --sel_counts[victim];
    relaxed.insert(epochs[incoming].subject);
    SOMNUS_WARN("swapped in one epoch of class "
                << cls << " from subject '" << epochs[incoming].subject
                << "' to keep the class observable");
  }

  std::vector<size_t> out;
  out.reserve(target);
  for (size_t i = 0; i < epochs.size(); ++i)
    if (chosen[i]) out.push_back(i);
  return out;
}

}  // namespace somnus::eval
