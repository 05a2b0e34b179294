#include "somnus/eval/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "somnus/common.hpp"
#include "somnus/nn/layers.hpp"
#include "somnus/nn/optim.hpp"
#include "somnus/rng.hpp"

namespace somnus::eval {

PcaModel fit_pca(const Eigen::MatrixXd& x, long dims) {
  if (x.rows() < 1 || x.cols() < 1) throw_invalid("PCA needs a nonempty matrix");
  if (dims < 1) throw_invalid("PCA output dimension must be positive");
  const long k = std::min({dims, x.cols(), x.rows()});

  PcaModel pca;
  pca.mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - pca.mean;
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    throw_internal("PCA eigendecomposition failed");

  pca.components.resize(x.cols(), k);
  for (long j = 0; j < k; ++j) {
    // eigenvalues ascend, so take columns from the back
    Eigen::VectorXd v = es.eigenvectors().col(x.cols() - 1 - j);
    long arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    pca.components.col(j) = v;
  }
  return pca;
}

Eigen::MatrixXd pca_transform(const PcaModel& pca, const Eigen::MatrixXd& x) {
  if (x.cols() != pca.mean.cols())
    throw_invalid("PCA transform dimension mismatch");
  return (x.rowwise() - pca.mean) * pca.components;
}

namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  for (long i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 1e-12) out.row(i) /= n;
  }
  return out;
}

}  // namespace

std::vector<int> knn_predict(const Eigen::MatrixXd& train_x,
                             const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, int k) {
  if (k < 1) throw_invalid("k must be positive");
  if (train_x.rows() < k)
    throw_invalid("fewer training samples than neighbors requested");
  if (static_cast<size_t>(train_x.rows()) != train_y.size())
    throw_invalid("training features and labels disagree in length");
  if (train_x.cols() != test_x.cols())
    throw_invalid("train and test feature dimensions differ");

  const Eigen::MatrixXd tr = unit_rows(train_x);
  const Eigen::MatrixXd te = unit_rows(test_x);

  std::vector<int> pred(static_cast<size_t>(te.rows()));
  std::vector<long> order(static_cast<size_t>(tr.rows()));
  for (long q = 0; q < te.rows(); ++q) {
    const Eigen::VectorXd dist =
        Eigen::VectorXd::Ones(tr.rows()) - tr * te.row(q).transpose();
    std::iota(order.begin(), order.end(), 0L);
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](long a, long b) {
                        if (dist(a) != dist(b)) return dist(a) < dist(b);
                        return a < b;
                      });
    std::map<int, std::pair<int, double>> votes;  // class -> (count, best dist)
    for (int j = 0; j < k; ++j) {
      const int cls = train_y[static_cast<size_t>(order[j])];
      auto& [count, best] = votes.try_emplace(cls, 0, 1e300).first->second;
      ++count;
      best = std::min(best, dist(order[j]));
    }
    int win = votes.begin()->first;
    for (const auto& [cls, cb] : votes) {
      const auto& [count, best] = cb;
      const auto& [wc, wb] = votes[win];
      if (count > wc || (count == wc && best < wb)) win = cls;
    }
    pred[static_cast<size_t>(q)] = win;
  }
  return pred;
}

double knn_probe_accuracy(const Eigen::MatrixXd& train_x,
                          const std::vector<int>& train_y,
                          const Eigen::MatrixXd& test_x,
                          const std::vector<int>& test_y, int k,
                          long pca_dims) {
  Eigen::MatrixXd tr = train_x, te = test_x;
  if (pca_dims > 0) {
    const PcaModel pca = fit_pca(train_x, pca_dims);
    tr = pca_transform(pca, train_x);
    te = pca_transform(pca, test_x);
  }
  const std::vector<int> pred = knn_predict(tr, train_y, te, k);
  return metric_acc(test_y, pred);
}

LinearProbeResult train_linear_probe(const Eigen::MatrixXd& train_x,
                                     const std::vector<int>& train_y,
                                     const Eigen::MatrixXd& test_x,
                                     const std::vector<int>& test_y,
                                     int num_classes,
                                     const LinearProbeConfig& cfg) {
  if (num_classes < 2) throw_invalid("probe needs at least two classes");
  if (train_x.rows() < 1) throw_invalid("probe needs training samples");
  if (static_cast<size_t>(train_x.rows()) != train_y.size() ||
      static_cast<size_t>(test_x.rows()) != test_y.size())
    throw_invalid("features and labels disagree in length");
  for (int y : train_y)
    if (y < 0 || y >= num_classes)
      throw_invalid("training label outside [0, num_classes)");
  if (cfg.epochs < 1 || cfg.batch < 1)
    throw_invalid("probe epochs and batch size must be positive");

  // Standardize with train statistics. A lone linear layer is equivalent up
  // to an affine reparameterization, so this only conditions the optimizer.
  const Eigen::RowVectorXd mu = train_x.colwise().mean();
  Eigen::RowVectorXd sd =
      (train_x.rowwise() - mu).array().square().colwise().mean().sqrt();
  for (long j = 0; j < sd.size(); ++j) sd(j) = std::max(sd(j), 1e-8);
  const Eigen::MatrixXd xtr =
      (train_x.rowwise() - mu).array().rowwise() / sd.array();
  Eigen::MatrixXd xte;
  if (test_x.rows() > 0)
    xte = (test_x.rowwise() - mu).array().rowwise() / sd.array();

  Rng rng(derive_seed(cfg.seed, "linear-probe"));
  nn::Linear fc(train_x.cols(), num_classes, rng);
  nn::Params params;
  fc.collect(params, "probe");
  nn::set_trainable(params, true);

  nn::AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  nn::AdamW opt(params, oc);

  const long n = train_x.rows();
  const long batch = std::min(cfg.batch, n);
  std::vector<long> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0L);

  LinearProbeResult res;
  for (int e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    long batches = 0;
    for (long start = 0; start < n; start += batch) {
      const long bn = std::min(batch, n - start);
      Eigen::MatrixXd xb(bn, train_x.cols());
      std::vector<int> yb(static_cast<size_t>(bn));
      for (long i = 0; i < bn; ++i) {
        xb.row(i) = xtr.row(order[static_cast<size_t>(start + i)]);
        yb[static_cast<size_t>(i)] =
            train_y[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
      }
      opt.zero_grad();
      const nn::Var loss =
          nn::softmax_cross_entropy(fc.forward(nn::constant(xb)), yb);
      nn::backward(loss);
      opt.step();
      loss_sum += loss.value()(0, 0);
      ++batches;
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }

  res.predictions.resize(static_cast<size_t>(test_x.rows()));
  if (test_x.rows() > 0) {
    const Eigen::MatrixXd logits = fc.forward(nn::constant(xte)).value();
    for (long i = 0; i < logits.rows(); ++i) {
      long arg = 0;
      logits.row(i).maxCoeff(&arg);
      res.predictions[static_cast<size_t>(i)] = static_cast<int>(arg);
    }
    res.report = classification_report(test_y, res.predictions);
  }
  return res;
}

}  // namespace somnus::eval
