#include "somnus/nn/optim.hpp"

#include <cmath>

#include "somnus/common.hpp"

namespace somnus::nn {

AdamW::AdamW(Params params, AdamWConfig cfg) : cfg_(cfg) {
  for (auto& p : params) {
    if (p.buffer) continue;
    params_.push_back(p);
    m_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Mat::Zero(p.var.rows(), p.var.cols()));
  }
  if (cfg_.lr <= 0.0) throw_invalid("AdamW: lr must be > 0");
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].var;
    if (!p.has_grad()) continue;
    const Mat& g = p.grad();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = (cfg_.beta2 * v_[i].array() +
             (1.0 - cfg_.beta2) * g.array().square())
                .matrix();
    const auto mhat = m_[i].array() / bc1;
    const auto vhat = v_[i].array() / bc2;
    p.value() -=
        (cfg_.lr * (mhat / (vhat.sqrt() + cfg_.eps) +
                    cfg_.weight_decay * p.value().array()))
            .matrix();
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

}  // namespace somnus::nn
