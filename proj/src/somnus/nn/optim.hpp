#pragma once

#include "somnus/nn/layers.hpp"

namespace somnus::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay; params whose gradient is unset in a step are
// skipped, matching the usual lazy-state behavior.
class AdamW {
 public:
  AdamW(Params params, AdamWConfig cfg);
  void step();
  void zero_grad();
  long step_count() const { return t_; }
  AdamWConfig& config() { return cfg_; }

 private:
  Params params_;
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace somnus::nn
