#include "somnus/eval/metrics.hpp"

#include <algorithm>
#include <set>

#include "somnus/common.hpp"
#include "somnus/log.hpp"

namespace somnus::eval {

MetricsReport classification_report(const std::vector<int>& truth,
                                    const std::vector<int>& pred) {
  if (truth.empty()) throw_invalid("metrics need at least one label");
  if (truth.size() != pred.size())
    throw_invalid("truth and prediction lengths differ");

  std::set<int> seen(truth.begin(), truth.end());
  seen.insert(pred.begin(), pred.end());

  MetricsReport rep;
  rep.classes.assign(seen.begin(), seen.end());
  const long k = static_cast<long>(rep.classes.size());
  auto index_of = [&](int label) {
    return static_cast<long>(std::lower_bound(rep.classes.begin(),
                                              rep.classes.end(), label) -
                             rep.classes.begin());
  };

  rep.confusion = Eigen::MatrixXd::Zero(k, k);
  for (size_t i = 0; i < truth.size(); ++i)
    rep.confusion(index_of(truth[i]), index_of(pred[i])) += 1.0;

  const double n = static_cast<double>(truth.size());
  rep.acc = rep.confusion.trace() / n;

  double f1_sum = 0.0;
  double pe = 0.0;
  for (long c = 0; c < k; ++c) {
    const double tp = rep.confusion(c, c);
    const double support = rep.confusion.row(c).sum();
    const double predicted = rep.confusion.col(c).sum();
    const double prec = predicted > 0.0 ? tp / predicted : 0.0;
    const double rec = support > 0.0 ? tp / support : 0.0;
    const double f1 =
        prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    rep.per_class_f1[rep.classes[static_cast<size_t>(c)]] = f1;
    f1_sum += f1;
    pe += (support / n) * (predicted / n);
  }
  rep.mf1 = f1_sum / static_cast<double>(k);

  if (pe >= 1.0) {
    SOMNUS_WARN("kappa undefined at chance agreement 1; reporting 0");
    rep.kappa = 0.0;
  } else {
    rep.kappa = (rep.acc - pe) / (1.0 - pe);
  }
  return rep;
}

double metric_acc(const std::vector<int>& truth, const std::vector<int>& pred) {
  return classification_report(truth, pred).acc;
}

double metric_mf1(const std::vector<int>& truth, const std::vector<int>& pred) {
  return classification_report(truth, pred).mf1;
}

double metric_kappa(const std::vector<int>& truth,
                    const std::vector<int>& pred) {
  return classification_report(truth, pred).kappa;
}

}  // namespace somnus::eval
