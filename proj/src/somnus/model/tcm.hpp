#pragma once

#include <vector>

#include "somnus/nn/ssm.hpp"

namespace somnus::model {

using nn::Mat;
using nn::Var;

struct TcmConfig {
  int context_length = 20;
  int ssm_depth = 2;
  long d_state = 16;
  long d_conv = 4;
  long expand = 2;
  int num_classes = 5;
  // false: classify the last epoch of each window; true: the center epoch.
  bool center_target = false;

  void validate() const;
};

// Window index lists, stride 1, one window per epoch. Windows never cross the
// given sequence; short history is padded by repeating the first epoch (or the
// last, for the right side of centered windows).
std::vector<std::vector<int>> windowize_indices(int n_epochs, int T,
                                                bool center = false);

// Sequence head over per-epoch fused representations: batch-norm across
// batch x time, a selective-SSM stack, an elementwise skip from the normalized
// inputs, then a single linear layer applied to the target epoch of each
// window.
class TemporalContextModel {
 public:
  TemporalContextModel() = default;
  TemporalContextModel(const TcmConfig& cfg, long feature_dim, Rng& rng);

  // windows: one T x feature_dim sequence per sample. Returns B x num_classes
  // logits for the target epoch of each window.
  Var forward(const std::vector<Var>& windows, bool training);

  void collect(nn::Params& out, const std::string& prefix);

  TcmConfig cfg;
  long feature_dim = 0;
  nn::BatchNorm1d bn;
  nn::SsmStack ssm;
  nn::Linear head;
};

}  // namespace somnus::model
