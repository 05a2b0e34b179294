#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "somnus/eval/metrics.hpp"

namespace somnus::eval {

struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;  // in_dim x out_dim, orthonormal columns
};

// Principal components from the covariance eigendecomposition, strongest
// first. Output width is min(dims, feature dim, sample count); each component
// sign is fixed so its largest-magnitude loading is positive.
PcaModel fit_pca(const Eigen::MatrixXd& x, long dims);
Eigen::MatrixXd pca_transform(const PcaModel& pca, const Eigen::MatrixXd& x);

// Cosine-distance k-nearest-neighbor vote. Vote ties break toward the class
// holding the nearest neighbor, then toward the lower label.
std::vector<int> knn_predict(const Eigen::MatrixXd& train_x,
                             const std::vector<int>& train_y,
                             const Eigen::MatrixXd& test_x, int k);

// PCA fit on the train split, then k-NN accuracy on the test split.
double knn_probe_accuracy(const Eigen::MatrixXd& train_x,
                          const std::vector<int>& train_y,
                          const Eigen::MatrixXd& test_x,
                          const std::vector<int>& test_y, int k = 5,
                          long pca_dims = 50);

struct LinearProbeConfig {
  int epochs = 150;
  long batch = 512;
  double lr = 2e-4;
  double weight_decay = 0.01;
  uint64_t seed = 0;
};

struct LinearProbeResult {
  MetricsReport report;
  std::vector<int> predictions;      // test rows, argmax class
  std::vector<double> epoch_losses;  // mean train cross-entropy per epoch
};

// Multinomial logistic probe over frozen features, trained with AdamW.
// Inputs are standardized with train-split statistics before fitting; for a
// lone linear layer that only reconditions the optimization.
LinearProbeResult train_linear_probe(const Eigen::MatrixXd& train_x,
                                     const std::vector<int>& train_y,
                                     const Eigen::MatrixXd& test_x,
                                     const std::vector<int>& test_y,
                                     int num_classes,
                                     const LinearProbeConfig& cfg);

}  // namespace somnus::eval
