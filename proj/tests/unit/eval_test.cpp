#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "somnus/common.hpp"
#include "somnus/eval/hypnogram.hpp"
#include "somnus/eval/metrics.hpp"
#include "somnus/eval/probe.hpp"
#include "somnus/eval/splits.hpp"
#include "somnus/plot/svg.hpp"
#include "somnus/rng.hpp"
#include "support/testutil.hpp"

using namespace somnus;
using namespace somnus::eval;

namespace {

// Independent map-based reference for all three metrics.
struct OracleMetrics {
  double acc, mf1, kappa;
};

OracleMetrics oracle_metrics(const std::vector<int>& truth,
                             const std::vector<int>& pred) {
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  const double n = static_cast<double>(truth.size());

  std::map<std::pair<int, int>, double> cm;
  for (size_t i = 0; i < truth.size(); ++i) cm[{truth[i], pred[i]}] += 1.0;

  double correct = 0.0;
  for (int c : classes) correct += cm[{c, c}];

  double f1_sum = 0.0, pe = 0.0;
  for (int c : classes) {
    double row = 0.0, col = 0.0;
    for (int d : classes) {
      row += cm[{c, d}];
      col += cm[{d, c}];
    }
    const double tp = cm[{c, c}];
    const double prec = col > 0.0 ? tp / col : 0.0;
    const double rec = row > 0.0 ? tp / row : 0.0;
    f1_sum += prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    pe += (row / n) * (col / n);
  }
  OracleMetrics m;
  m.acc = correct / n;
  m.mf1 = f1_sum / static_cast<double>(classes.size());
  m.kappa = pe >= 1.0 ? 0.0 : (m.acc - pe) / (1.0 - pe);
  return m;
}

}  // namespace

TEST_CASE("metric values on worked examples") {
  const std::vector<int> t{0, 1, 1, 2, 2};
  const std::vector<int> p{0, 0, 1, 2, 1};
  CHECK(metric_acc(t, p) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(metric_mf1(t, p) ==
        doctest::Approx((2.0 / 3.0 + 0.5 + 2.0 / 3.0) / 3.0).epsilon(1e-12));

  CHECK(metric_kappa({0, 1, 0, 1}, {0, 0, 1, 1}) ==
        doctest::Approx(0.0).epsilon(1e-12));

  const std::vector<int> perfect{3, 1, 4, 1, 0, 2};
  CHECK(metric_acc(perfect, perfect) == 1.0);
  CHECK(metric_mf1(perfect, perfect) == 1.0);
  CHECK(metric_kappa(perfect, perfect) == doctest::Approx(1.0).epsilon(1e-12));

  // chance agreement 1: single class on both sides
  CHECK(metric_kappa({2, 2, 2}, {2, 2, 2}) == 0.0);

  CHECK_THROWS_AS(metric_acc({0, 1}, {0}), Error);
  CHECK_THROWS_AS(metric_acc({}, {}), Error);
}

TEST_CASE("metrics match an independent oracle on random label pairs") {
  Rng rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = trial % 2 == 0 ? 2 : 5;
    const size_t n = 3 + rng.below(40);
    std::vector<int> t(n), p(n);
    for (size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
      p[i] = static_cast<int>(rng.below(static_cast<uint64_t>(k)));
    }
    const MetricsReport rep = classification_report(t, p);
    const OracleMetrics o = oracle_metrics(t, p);
    CHECK(rep.acc == doctest::Approx(o.acc).epsilon(1e-12));
    CHECK(rep.mf1 == doctest::Approx(o.mf1).epsilon(1e-12));
    CHECK(rep.kappa == doctest::Approx(o.kappa).epsilon(1e-12));
  }
}

TEST_CASE("accuracy is invariant under a class relabeling of both sides") {
  Rng rng(7);
  std::vector<int> t(60), p(60);
  for (size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<int>(rng.below(5));
    p[i] = static_cast<int>(rng.below(5));
  }
  const int perm[5] = {3, 0, 4, 1, 2};
  std::vector<int> t2(t.size()), p2(p.size());
  for (size_t i = 0; i < t.size(); ++i) {
    t2[i] = perm[t[i]];
    p2[i] = perm[p[i]];
  }
  CHECK(metric_acc(t, p) == doctest::Approx(metric_acc(t2, p2)).epsilon(1e-12));
  CHECK(metric_kappa(t, p) ==
        doctest::Approx(metric_kappa(t2, p2)).epsilon(1e-12));
}

TEST_CASE("confusion matrix row sums equal per-class support") {
  const std::vector<int> t{0, 0, 1, 1, 1, 2};
  const std::vector<int> p{0, 1, 1, 1, 0, 2};
  const MetricsReport rep = classification_report(t, p);
  REQUIRE(rep.classes == std::vector<int>{0, 1, 2});
  CHECK(rep.confusion.row(0).sum() == 2.0);
  CHECK(rep.confusion.row(1).sum() == 3.0);
  CHECK(rep.confusion.row(2).sum() == 1.0);
  CHECK(rep.confusion.sum() == 6.0);
  CHECK(rep.per_class_f1.size() == 3);
}

TEST_CASE("split plans rotate test subjects and keep roles disjoint") {
  std::vector<std::string> subjects;
  for (int i = 0; i < 10; ++i) subjects.push_back("s" + std::to_string(i));

  const SplitPlan plan = make_splits(subjects, 5, 99);
  REQUIRE(plan.folds.size() == 5);

  std::map<std::string, int> tested;
  for (const auto& fold : plan.folds) {
    CHECK(fold.test_subjects.size() == 2);
    CHECK(fold.pretrain_subjects.size() == 6);
    CHECK(fold.train_subjects.size() == 2);
    std::set<std::string> seen;
    for (const auto* role :
         {&fold.pretrain_subjects, &fold.train_subjects, &fold.test_subjects})
      for (const auto& s : *role) {
        CHECK(seen.insert(s).second);  // disjoint within the fold
      }
    CHECK(seen.size() == subjects.size());  // union covers everyone
    for (const auto& s : fold.test_subjects) ++tested[s];
  }
  for (const auto& s : subjects) CHECK(tested[s] == 1);

  const SplitPlan again = make_splits(subjects, 5, 99);
  for (size_t f = 0; f < 5; ++f) {
    CHECK(again.folds[f].test_subjects == plan.folds[f].test_subjects);
    CHECK(again.folds[f].pretrain_subjects == plan.folds[f].pretrain_subjects);
  }
  const SplitPlan other = make_splits(subjects, 5, 100);
  bool any_differs = false;
  for (size_t f = 0; f < 5; ++f)
    if (other.folds[f].test_subjects != plan.folds[f].test_subjects)
      any_differs = true;
  CHECK(any_differs);

  CHECK_THROWS_AS(make_splits({"a", "b"}, 5, 1), Error);
  CHECK_THROWS_AS(make_splits(subjects, 1, 1), Error);
  CHECK_THROWS_AS(make_splits(subjects, 5, 1, 1.5), Error);
}

TEST_CASE("label-fraction subsets are exact, grouped, and deterministic") {
  std::vector<LabeledEpochRef> epochs;
  for (int s = 0; s < 4; ++s)
    for (int e = 0; e < 25; ++e)
      epochs.push_back({"subj" + std::to_string(s), e % 5});

  const auto sel = label_fraction_subset(epochs, 0.2, 11);
  CHECK(sel.size() == 20);  // floor(0.2 * 100)
  CHECK(label_fraction_subset(epochs, 0.2, 11) == sel);

  // Grouping: at most one subject is partially selected.
  std::map<std::string, size_t> per_subject;
  for (size_t i : sel) ++per_subject[epochs[i].subject];
  int partial = 0;
  for (const auto& [s, cnt] : per_subject)
    if (cnt != 25) ++partial;
  CHECK(partial <= 1);

  const auto all = label_fraction_subset(epochs, 1.0, 11);
  CHECK(all.size() == epochs.size());

  CHECK_THROWS_AS(label_fraction_subset(epochs, 0.001, 11), Error);
  CHECK_THROWS_AS(label_fraction_subset(epochs, 0.0, 11), Error);
  CHECK_THROWS_AS(label_fraction_subset({}, 0.5, 11), Error);
}

TEST_CASE("label-fraction subsets keep rare classes observable") {
  // Class 9 exists once, in a subject the greedy pass will skip.
  std::vector<LabeledEpochRef> epochs;
  for (int s = 0; s < 3; ++s)
    for (int e = 0; e < 10; ++e) epochs.push_back({"s" + std::to_string(s), 0});
  for (int e = 0; e < 9; ++e) epochs.push_back({"rare", 0});
  epochs.push_back({"rare", 9});

  const auto sel = label_fraction_subset(epochs, 0.25, 3);
  CHECK(sel.size() == 10);
  bool has_rare = false;
  for (size_t i : sel)
    if (epochs[i].label == 9) has_rare = true;
  CHECK(has_rare);
}

TEST_CASE("PCA recovers the dominant direction and obeys the rank bound") {
  Rng rng(5);
  Eigen::MatrixXd x(200, 3);
  for (long i = 0; i < x.rows(); ++i) {
    const double t = rng.normal();
    x(i, 0) = t + 0.01 * rng.normal();
    x(i, 1) = t + 0.01 * rng.normal();
    x(i, 2) = 0.01 * rng.normal();
  }
  const PcaModel pca = fit_pca(x, 2);
  REQUIRE(pca.components.cols() == 2);
  const double isq = 1.0 / std::sqrt(2.0);
  CHECK(std::abs(pca.components(0, 0)) == doctest::Approx(isq).epsilon(1e-2));
  CHECK(std::abs(pca.components(1, 0)) == doctest::Approx(isq).epsilon(1e-2));
  CHECK(pca.components(0, 0) > 0.0);  // deterministic sign
  const Eigen::MatrixXd gram =
      pca.components.transpose() * pca.components;
  CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
        1e-10);

  CHECK(fit_pca(x, 50).components.cols() == 3);  // min(50, 3, 200)
  Eigen::MatrixXd two(2, 5);
  two.setRandom();
  CHECK(fit_pca(two, 50).components.cols() == 2);  // min(50, 5, 2)

  const Eigen::MatrixXd proj = pca_transform(pca, x);
  CHECK(proj.rows() == x.rows());
  CHECK(proj.cols() == 2);
  CHECK(std::abs(proj.col(0).mean()) < 1e-9);  // centered
}

TEST_CASE("kNN prediction matches a brute-force oracle") {
  Rng rng(31);
  const long n = 80, d = 8;
  Eigen::MatrixXd train(n, d), test(20, d);
  std::vector<int> train_y(n);
  for (long i = 0; i < n; ++i) {
    train_y[static_cast<size_t>(i)] = static_cast<int>(rng.below(3));
    for (long j = 0; j < d; ++j) train(i, j) = rng.normal();
  }
  for (long i = 0; i < test.rows(); ++i)
    for (long j = 0; j < d; ++j) test(i, j) = rng.normal();

  const int k = 5;
  const std::vector<int> pred = knn_predict(train, train_y, test, k);

  for (long q = 0; q < test.rows(); ++q) {
    std::vector<std::pair<double, long>> dist;
    for (long i = 0; i < n; ++i) {
      const double c = train.row(i).dot(test.row(q)) /
                       (train.row(i).norm() * test.row(q).norm());
      dist.push_back({1.0 - c, i});
    }
    std::sort(dist.begin(), dist.end());
    std::map<int, std::pair<int, double>> votes;
    for (int j = 0; j < k; ++j) {
      auto& [cnt, best] =
          votes.try_emplace(train_y[static_cast<size_t>(dist[j].second)], 0,
                            1e300)
              .first->second;
      ++cnt;
      best = std::min(best, dist[j].first);
    }
    int want = votes.begin()->first;
    for (const auto& [cls, cb] : votes) {
      const auto& [cnt, best] = cb;
      if (cnt > votes[want].first ||
          (cnt == votes[want].first && best < votes[want].second))
        want = cls;
    }
    CHECK(pred[static_cast<size_t>(q)] == want);
  }

  CHECK_THROWS_AS(knn_predict(train.topRows(3), {0, 1, 2}, test, 5), Error);
}

TEST_CASE("one-hot features give perfect kNN probe accuracy") {
  Eigen::MatrixXd x(30, 3);
  std::vector<int> y(30);
  x.setZero();
  for (long i = 0; i < 30; ++i) {
    y[static_cast<size_t>(i)] = static_cast<int>(i % 3);
    x(i, i % 3) = 1.0;
  }
  CHECK(knn_probe_accuracy(x, y, x, y, 5, 50) == doctest::Approx(1.0));
  // and without PCA
  CHECK(knn_probe_accuracy(x, y, x, y, 5, 0) == doctest::Approx(1.0));
}

TEST_CASE("the linear probe separates linearly separable blobs") {
  Rng rng(17);
  const long n = 240;
  Eigen::MatrixXd x(n, 4);
  std::vector<int> y(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    y[static_cast<size_t>(i)] = c;
    for (long j = 0; j < 4; ++j)
      x(i, j) = 0.15 * rng.normal() + (j == c ? 2.0 : 0.0);
  }
  LinearProbeConfig cfg;
  cfg.epochs = 120;
  cfg.batch = 64;
  cfg.lr = 5e-3;
  cfg.seed = 3;
  const LinearProbeResult res = train_linear_probe(x, y, x, y, 3, cfg);
  CHECK(res.report.acc >= 0.99);
  REQUIRE(res.epoch_losses.size() == 120);
  CHECK(res.epoch_losses.back() < res.epoch_losses.front());

  const LinearProbeResult again = train_linear_probe(x, y, x, y, 3, cfg);
  CHECK(again.predictions == res.predictions);

  CHECK_THROWS_AS(train_linear_probe(x, y, x, y, 1, cfg), Error);
  std::vector<int> bad = y;
  bad[0] = 7;
  CHECK_THROWS_AS(train_linear_probe(x, bad, x, y, 3, cfg), Error);
}

TEST_CASE("hypnogram data marks exactly the disagreeing epochs") {
  const std::vector<int> truth{0, 1, 2, 3, 4, 2, 2, 0};
  std::vector<int> pred = truth;
  const HypnogramData clean = hypnogram_data(truth, pred);
  CHECK(clean.mismatches.empty());

  pred[1] = 4;
  pred[5] = 0;
  pred[7] = 3;
  const HypnogramData h = hypnogram_data(truth, pred);
  CHECK(h.mismatches == std::vector<size_t>{1, 5, 7});
  CHECK(h.truth.size() == truth.size());

  const std::string svg = hypnogram_svg("subjA", h);
  size_t dots = 0, at = 0;
  while ((at = svg.find("<circle", at)) != std::string::npos) {
    ++dots;
    at += 7;
  }
  CHECK(dots == 3);
  CHECK(svg.find("Wake") != std::string::npos);
  CHECK(svg.find("REM") != std::string::npos);

  const std::string sidecar = hypnogram_text("subjA", h);
  CHECK(sidecar.find("mismatches 3") != std::string::npos);
  CHECK(sidecar.find("epochs 8") != std::string::npos);

  CHECK_THROWS_AS(hypnogram_data({0, 1}, {0}), Error);
  CHECK_THROWS_AS(hypnogram_data({0, 9}, {0, 0}), Error);
  CHECK_THROWS_AS(hypnogram_data({}, {}), Error);
}

TEST_CASE("line charts render every series and escape labels") {
  plot::Series a{"recon & total", {0, 1, 2, 3}, {1.0, 0.7, 0.5, 0.4}, "#123456"};
  plot::Series b{"contra", {0, 1, 2, 3}, {0.9, 0.8, 0.75, 0.7}, "#654321"};
  const std::string svg =
      plot::line_chart_svg("losses <run>", "step", "loss", {a, b});
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("recon &amp; total") != std::string::npos);
  CHECK(svg.find("losses &lt;run&gt;") != std::string::npos);
  size_t lines = 0, at = 0;
  while ((at = svg.find("<polyline", at)) != std::string::npos) {
    ++lines;
    at += 9;
  }
  CHECK(lines == 2);

  CHECK_THROWS_AS(plot::line_chart_svg("t", "x", "y", {}), Error);
  plot::Series ragged{"r", {0, 1}, {0}, "#000"};
  CHECK_THROWS_AS(plot::line_chart_svg("t", "x", "y", {ragged}), Error);
}
