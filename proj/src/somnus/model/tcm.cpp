#include "somnus/model/tcm.hpp"

#include <algorithm>

#include "somnus/common.hpp"

namespace somnus::model {

using namespace somnus::nn;

void TcmConfig::validate() const {
  if (context_length < 1) throw_invalid("tcm: context_length must be >= 1");
  if (ssm_depth < 1) throw_invalid("tcm: ssm_depth must be >= 1");
  if (d_state < 1 || d_conv < 1 || expand < 1)
    throw_invalid("tcm: state-space dimensions must be >= 1");
  if (num_classes < 2) throw_invalid("tcm: num_classes must be >= 2");
}

std::vector<std::vector<int>> windowize_indices(int n_epochs, int T,
                                                bool center) {
  if (n_epochs < 1) throw_invalid("windowize: empty epoch sequence");
  if (T < 1) throw_invalid("windowize: window length must be >= 1");
  std::vector<std::vector<int>> out(static_cast<size_t>(n_epochs));
  for (int t = 0; t < n_epochs; ++t) {
    int start = center ? t - T / 2 : t - T + 1;
    std::vector<int> idx(static_cast<size_t>(T));
    for (int k = 0; k < T; ++k)
      idx[static_cast<size_t>(k)] = std::clamp(start + k, 0, n_epochs - 1);
    out[static_cast<size_t>(t)] = std::move(idx);
  }
  return out;
}

TemporalContextModel::TemporalContextModel(const TcmConfig& cfg_,
                                           long feature_dim_, Rng& rng)
    : cfg(cfg_), feature_dim(feature_dim_) {
  cfg.validate();
  if (feature_dim < 1) throw_invalid("tcm: feature_dim must be >= 1");
  bn = BatchNorm1d(feature_dim);
  ssm = SsmStack(cfg.ssm_depth, feature_dim, cfg.d_state, cfg.d_conv,
                 cfg.expand, rng);
  head = Linear(feature_dim, cfg.num_classes, rng);
}

Var TemporalContextModel::forward(const std::vector<Var>& windows,
                                  bool training) {
  if (windows.empty()) throw_invalid("tcm: empty window batch");
  const long T = cfg.context_length;
  for (const Var& w : windows) {
    if (!w.defined() || w.rows() != T || w.cols() != feature_dim)
      throw_invalid("tcm: window shape mismatch");
  }
  Var all = bn.forward(concat_rows(windows), training);
  const long target = cfg.center_target ? T / 2 : T - 1;
  std::vector<Var> rows;
  rows.reserve(windows.size());
  for (size_t b = 0; b < windows.size(); ++b) {
    Var win = slice_rows(all, static_cast<long>(b) * T, T);
    Var ctx = add(ssm.forward(win), win);
    rows.push_back(head.forward(slice_rows(ctx, target, 1)));
  }
  return concat_rows(rows);
}

void TemporalContextModel::collect(Params& out, const std::string& prefix) {
  bn.collect(out, prefix + ".bn");
  ssm.collect(out, prefix + ".ssm");
  head.collect(out, prefix + ".head");
}

}  // namespace somnus::model
