#pragma once

#include <map>
#include <vector>

#include <Eigen/Dense>

namespace somnus::eval {

struct MetricsReport {
  double acc = 0.0;
  double mf1 = 0.0;
  double kappa = 0.0;
  std::map<int, double> per_class_f1;
  std::vector<int> classes;        // sorted union of observed labels
  Eigen::MatrixXd confusion;       // rows = truth, cols = predicted
};

// All three metrics are computed over the classes present in truth or
// prediction; an F1 with a zero denominator is defined as 0, and kappa with
// chance agreement 1 is defined as 0 (with a warning).
MetricsReport classification_report(const std::vector<int>& truth,
                                    const std::vector<int>& pred);

double metric_acc(const std::vector<int>& truth, const std::vector<int>& pred);
double metric_mf1(const std::vector<int>& truth, const std::vector<int>& pred);
double metric_kappa(const std::vector<int>& truth,
                    const std::vector<int>& pred);

}  // namespace somnus::eval
