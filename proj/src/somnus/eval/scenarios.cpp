#include "somnus/eval/scenarios.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include "somnus/common.hpp"
#include "somnus/eval/splits.hpp"
#include "somnus/log.hpp"
#include "somnus/nn/checkpoint.hpp"
#include "somnus/nn/optim.hpp"

namespace somnus::eval {

namespace {

int classes_for(const std::string& task) {
  if (task == "stage") return 5;
  if (task == "apnea" || task == "hypopnea") return 2;
  throw_invalid("unknown task '" + task + "'");
}

const std::vector<int>& labels_for(const LabeledFeatures& f,
                                   const std::string& task) {
  if (task == "stage") return f.stage;
  if (task == "apnea") return f.apnea;
  if (task == "hypopnea") return f.hypopnea;
  throw_invalid("unknown task '" + task + "'");
}

const std::vector<int>& labels_for(const SubjectBlockCache& s,
                                   const std::string& task) {
  if (task == "stage") return s.stage;
  if (task == "apnea") return s.apnea;
  if (task == "hypopnea") return s.hypopnea;
  throw_invalid("unknown task '" + task + "'");
}

void check_features(const LabeledFeatures& f, const char* which) {
  const size_t n = static_cast<size_t>(f.x.rows());
  if (n == 0) throw_invalid(std::string(which) + " feature split is empty");
  if (f.stage.size() != n || f.apnea.size() != n || f.hypopnea.size() != n ||
      f.subject.size() != n || f.epoch_index.size() != n)
    throw_invalid(std::string(which) + " feature split has ragged fields");
}

}  // namespace

Eigen::RowVectorXd pooled_feature(
    const model::FusionModel& m, const std::vector<nn::Mat>& frames_per_stream) {
  const auto out = m.forward_features(frames_per_stream);
  return out.tokens.value().colwise().mean();
}

ScenarioResult run_scenario1(model::FusionModel& m, const LabeledFeatures& train,
                             const LabeledFeatures& test,
                             const Scenario1Config& cfg) {
  check_features(train, "train");
  check_features(test, "test");

  nn::Params all;
  m.collect_all(all);
  for (const auto& p : all)
    if (!p.buffer && p.var.requires_grad())
      throw_contract("scenario 1 requires a fully frozen model; '" + p.name +
                     "' is trainable");

  ScenarioResult result;
  for (const auto& task : cfg.tasks) {
    const auto& ytr = labels_for(train, task);
    const auto& yte = labels_for(test, task);

    std::vector<long> tr_rows, te_rows;
    for (long i = 0; i < train.x.rows(); ++i)
      if (ytr[static_cast<size_t>(i)] >= 0) tr_rows.push_back(i);
    for (long i = 0; i < test.x.rows(); ++i)
      if (yte[static_cast<size_t>(i)] >= 0) te_rows.push_back(i);
    if (tr_rows.empty() || te_rows.empty()) {
      SOMNUS_WARN("scenario 1: no labeled rows for task '" << task
                                                           << "', skipped");
      continue;
    }

    Eigen::MatrixXd xtr(static_cast<long>(tr_rows.size()), train.x.cols());
    Eigen::MatrixXd xte(static_cast<long>(te_rows.size()), test.x.cols());
    std::vector<int> ltr(tr_rows.size()), lte(te_rows.size());
    for (size_t i = 0; i < tr_rows.size(); ++i) {
      xtr.row(static_cast<long>(i)) = train.x.row(tr_rows[i]);
      ltr[i] = ytr[static_cast<size_t>(tr_rows[i])];
    }
    for (size_t i = 0; i < te_rows.size(); ++i) {
      xte.row(static_cast<long>(i)) = test.x.row(te_rows[i]);
      lte[i] = yte[static_cast<size_t>(te_rows[i])];
    }

    LinearProbeConfig pc;
    pc.epochs = cfg.epochs;
    pc.batch = cfg.batch;
    pc.lr = cfg.lr;
    pc.seed = derive_seed(cfg.seed, "scenario1-" + task);
    const LinearProbeResult probe =
        train_linear_probe(xtr, ltr, xte, lte, classes_for(task), pc);

    TaskReport rep;
    rep.metrics = probe.report;
    rep.truth = lte;
    rep.pred = probe.predictions;
    rep.train_losses = probe.epoch_losses;
    for (long r : te_rows) {
      rep.subject.push_back(test.subject[static_cast<size_t>(r)]);
      rep.epoch_index.push_back(test.epoch_index[static_cast<size_t>(r)]);
    }
    result[task] = std::move(rep);
  }
  return result;
}

namespace {

struct WindowRef {
  size_t subject;
  int target;  // epoch index inside the subject
};

// Pooled representation of one cached epoch through the late fusion blocks.
nn::Var late_pooled(const model::FusionModel& m, const nn::Mat& block_input,
                    int block, Rng& rng) {
  nn::Var tokens =
      m.encode_from_block(nn::constant(block_input), block, rng, false);
  return nn::scale(nn::colwise_sum(tokens),
                   1.0 / static_cast<double>(tokens.rows()));
}

// Build the T x d window variables for a batch of window references, running
// each distinct epoch through the late blocks exactly once.
std::vector<nn::Var> assemble_windows(
    const model::FusionModel& m, const std::vector<SubjectBlockCache>& data,
    const std::vector<std::vector<std::vector<int>>>& windows,
    const std::vector<WindowRef>& batch, int block, Rng& rng) {
  std::map<std::pair<size_t, int>, nn::Var> pooled;
  for (const WindowRef& w : batch)
    for (int t : windows[w.subject][static_cast<size_t>(w.target)]) {
      const std::pair<size_t, int> key{w.subject, t};
      if (!pooled.count(key))
        pooled[key] = late_pooled(
            m, data[w.subject].block_inputs[static_cast<size_t>(t)], block,
            rng);
    }
  std::vector<nn::Var> out;
  out.reserve(batch.size());
  for (const WindowRef& w : batch) {
    std::vector<nn::Var> rows;
    for (int t : windows[w.subject][static_cast<size_t>(w.target)])
      rows.push_back(pooled.at({w.subject, t}));
    out.push_back(nn::concat_rows(rows));
  }
  return out;
}

void check_cache(const std::vector<SubjectBlockCache>& data, const char* which,
                 long mm_dim) {
  if (data.empty())
    throw_invalid(std::string(which) + " block cache is empty");
  for (const auto& s : data) {
    const size_t n = s.block_inputs.size();
    if (n == 0)
      throw_invalid("subject '" + s.id + "' has no cached epochs");
    if (s.stage.size() != n || s.apnea.size() != n || s.hypopnea.size() != n)
      throw_invalid("subject '" + s.id + "' has ragged label fields");
    if (!s.train_mask.empty() && s.train_mask.size() != n)
      throw_invalid("subject '" + s.id + "' has a ragged train mask");
    for (const auto& b : s.block_inputs)
      if (b.cols() != mm_dim)
        throw_invalid("cached block input width does not match the model");
  }
}

}  // namespace

ScenarioResult run_scenario2(model::FusionModel& m,
                             const std::vector<SubjectBlockCache>& train,
                             const std::vector<SubjectBlockCache>& test,
                             const Scenario2Config& cfg) {
  check_cache(train, "train", m.cfg.mm_dim);
  check_cache(test, "test", m.cfg.mm_dim);
  cfg.tcm.validate();
  if (cfg.epochs < 1 || cfg.batch < 1)
    throw_invalid("scenario 2 epochs and batch size must be positive");

  const int block = m.cfg.mm_depth - 1;

  nn::Params all;
  m.collect_all(all);
  nn::set_trainable(all, false);
  nn::Linear& wo = m.mm_encoder.blocks.back().attn.wo;
  nn::Params open;
  wo.collect(open, "mm.final.attn.out");
  nn::set_trainable(open, true);

  const nn::Mat wo_w0 = wo.w.value();
  const nn::Mat wo_b0 = wo.b.value();
  nn::Params frozen;
  for (const auto& p : all)
    if (p.var.node() != wo.w.node() && p.var.node() != wo.b.node())
      frozen.push_back(p);
  const std::string frozen_before = nn::serialize_params_f64(frozen);

  // One window per epoch; precomputed index lists per subject.
  auto windows_for = [&](const std::vector<SubjectBlockCache>& data) {
    std::vector<std::vector<std::vector<int>>> out;
    for (const auto& s : data)
      out.push_back(model::windowize_indices(
          static_cast<int>(s.block_inputs.size()), cfg.tcm.context_length,
          cfg.tcm.center_target));
    return out;
  };
  const auto train_windows = windows_for(train);
  const auto test_windows = windows_for(test);

  ScenarioResult result;
  for (const auto& task : cfg.tasks) {
    wo.w.value() = wo_w0;
    wo.b.value() = wo_b0;

    std::vector<WindowRef> items;
    for (size_t si = 0; si < train.size(); ++si) {
      const auto& labels = labels_for(train[si], task);
      for (size_t t = 0; t < train[si].block_inputs.size(); ++t) {
        if (labels[t] < 0) continue;
        if (!train[si].train_mask.empty() && !train[si].train_mask[t]) continue;
        items.push_back({si, static_cast<int>(t)});
      }
    }
    if (items.empty()) {
      SOMNUS_WARN("scenario 2: no usable training targets for task '"
                  << task << "', skipped");
      continue;
    }

    Rng rng(derive_seed(cfg.seed, "scenario2-" + task));
    model::TcmConfig tc = cfg.tcm;
    tc.num_classes = classes_for(task);
    model::TemporalContextModel tcm(tc, m.cfg.mm_dim, rng);
    nn::Params tparams;
    tcm.collect(tparams, "tcm");
    nn::set_trainable(tparams, true);

    nn::Params opt_params = open;
    opt_params.insert(opt_params.end(), tparams.begin(), tparams.end());
    nn::AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    nn::AdamW opt(opt_params, oc);

    TaskReport rep;
    const long batch =
        std::min<long>(cfg.batch, static_cast<long>(items.size()));
    for (int e = 0; e < cfg.epochs; ++e) {
      rng.shuffle(items);
      double loss_sum = 0.0;
      long batches = 0;
      for (size_t start = 0; start < items.size();
           start += static_cast<size_t>(batch)) {
        const size_t end =
            std::min(items.size(), start + static_cast<size_t>(batch));
        const std::vector<WindowRef> chunk(items.begin() + start,
                                           items.begin() + end);
        std::vector<int> yb;
        for (const WindowRef& w : chunk)
          yb.push_back(labels_for(train[w.subject],
                                  task)[static_cast<size_t>(w.target)]);
        opt.zero_grad();
        const std::vector<nn::Var> wins =
            assemble_windows(m, train, train_windows, chunk, block, rng);
        const nn::Var loss =
            nn::softmax_cross_entropy(tcm.forward(wins, true), yb);
        nn::backward(loss);
        opt.step();
        loss_sum += loss.value()(0, 0);
        ++batches;
      }
      rep.train_losses.push_back(loss_sum /
                                 static_cast<double>(std::max(1L, batches)));
    }

    // Evaluation: one prediction per test epoch, labeled targets scored.
    for (size_t si = 0; si < test.size(); ++si) {
      const auto& labels = labels_for(test[si], task);
      const size_t n = test[si].block_inputs.size();
      std::vector<WindowRef> chunk;
      auto flush = [&]() {
        if (chunk.empty()) return;
        const std::vector<nn::Var> wins =
            assemble_windows(m, test, test_windows, chunk, block, rng);
        const nn::Mat logits = tcm.forward(wins, false).value();
        for (size_t i = 0; i < chunk.size(); ++i) {
          long arg = 0;
          logits.row(static_cast<long>(i)).maxCoeff(&arg);
          rep.truth.push_back(labels[static_cast<size_t>(chunk[i].target)]);
          rep.pred.push_back(static_cast<int>(arg));
          rep.subject.push_back(test[si].id);
          rep.epoch_index.push_back(chunk[i].target);
        }
        chunk.clear();
      };
      for (size_t t = 0; t < n; ++t) {
        if (labels[t] < 0) continue;
        chunk.push_back({si, static_cast<int>(t)});
        if (chunk.size() == static_cast<size_t>(cfg.batch)) flush();
      }
      flush();
    }
    if (rep.truth.empty()) {
      SOMNUS_WARN("scenario 2: no labeled test targets for task '" << task
                                                                   << "'");
      continue;
    }
    rep.metrics = classification_report(rep.truth, rep.pred);
    result[task] = std::move(rep);
  }

  const std::string frozen_after = nn::serialize_params_f64(frozen);
  if (frozen_before != frozen_after)
    throw_contract("scenario 2 modified parameters outside the allowed set");
  wo.w.value() = wo_w0;
  wo.b.value() = wo_b0;
  nn::set_trainable(open, false);
  nn::zero_grads(all);
  return result;
}

Scenario3Result run_scenario3(model::FusionModel& m,
                              const LabeledFeatures& f_train,
                              const LabeledFeatures& f_test,
                              const std::vector<SubjectBlockCache>& c_train,
                              const std::vector<SubjectBlockCache>& c_test,
                              const Scenario3Config& cfg) {
  check_features(f_train, "train");

  // Labeled pool: rows with a stage label; stratification follows stages.
  std::vector<size_t> pool;
  std::vector<LabeledEpochRef> refs;
  for (size_t i = 0; i < f_train.stage.size(); ++i) {
    if (f_train.stage[i] < 0) continue;
    pool.push_back(i);
    refs.push_back({f_train.subject[i], f_train.stage[i]});
  }
  if (refs.empty()) throw_invalid("no stage-labeled train epochs to subsample");
  const std::vector<size_t> picked =
      label_fraction_subset(refs, cfg.label_fraction, cfg.seed);

  Scenario3Result out;
  for (size_t p : picked) out.selected.push_back(pool[p]);

  LabeledFeatures sub;
  sub.x.resize(static_cast<long>(out.selected.size()), f_train.x.cols());
  for (size_t i = 0; i < out.selected.size(); ++i) {
    const size_t r = out.selected[i];
    sub.x.row(static_cast<long>(i)) = f_train.x.row(static_cast<long>(r));
    sub.stage.push_back(f_train.stage[r]);
    sub.apnea.push_back(f_train.apnea[r]);
    sub.hypopnea.push_back(f_train.hypopnea[r]);
    sub.subject.push_back(f_train.subject[r]);
    sub.epoch_index.push_back(f_train.epoch_index[r]);
  }

  std::vector<SubjectBlockCache> masked = c_train;
  std::set<std::pair<std::string, int>> keys;
  for (size_t i = 0; i < sub.subject.size(); ++i)
    keys.insert({sub.subject[i], sub.epoch_index[i]});
  for (auto& s : masked) {
    s.train_mask.assign(s.block_inputs.size(), 0);
    for (size_t t = 0; t < s.block_inputs.size(); ++t)
      if (keys.count({s.id, static_cast<int>(t)})) s.train_mask[t] = 1;
  }

  out.s1 = run_scenario1(m, sub, f_test, cfg.s1);
  out.s2 = run_scenario2(m, masked, c_test, cfg.s2);
  return out;
}

}  // namespace somnus::eval
